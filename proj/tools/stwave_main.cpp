// stwave command line: train/evaluate STWave models, generate synthetic
// datasets, run the ablation grid and the attention scaling bench.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "stwave/stwave.hpp"

namespace {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

LogLevel log_threshold() {
    const char* env = std::getenv("STWAVE_LOG");
    if (!env) return LogLevel::Info;
    const std::string v(env);
    if (v == "debug") return LogLevel::Debug;
    if (v == "info") return LogLevel::Info;
    if (v == "warn") return LogLevel::Warn;
    if (v == "error") return LogLevel::Error;
    return LogLevel::Info;
}

void log(LogLevel level, const std::string& msg) {
    static const LogLevel threshold = log_threshold();
    if (level < threshold) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    long seed = -1;
};

stwave::RunConfig resolve_config(const CommonOpts& opts) {
    using namespace stwave;
    Json j = opts.config_path.empty() ? to_json(RunConfig{}) : Json();
    if (!opts.config_path.empty()) {
        std::ifstream in(opts.config_path);
        if (!in) throw DataError("cannot open config '" + opts.config_path + "'");
        in >> j;
        if (j.contains("config") && j.contains("config_hash")) j = j.at("config");
    }
    for (const std::string& kv : opts.overrides) apply_override(j, kv);
    RunConfig cfg = run_config_from_json(j);
    if (opts.seed >= 0) {
        cfg.train.seed = static_cast<unsigned long>(opts.seed);
        cfg.dataset.synth.seed = static_cast<unsigned long>(opts.seed);
    }
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    return cfg;
}

void write_resolved_config(const stwave::RunConfig& cfg, const std::string& dir) {
    using namespace stwave;
    Json inner = to_json(cfg);
    Json wrapper = {{"config_hash", config_hash(inner)}, {"config", inner}};
    atomic_write(dir + "/resolved_config.json", wrapper.dump(2) + "\n");
}

std::string train_log_csv(const stwave::TrainResult& r) {
    std::ostringstream out;
    out.precision(12);
    out << "epoch,train_loss,val_mae\n";
    for (std::size_t e = 0; e < r.epoch_train_loss.size(); ++e)
        out << (e + 1) << "," << r.epoch_train_loss[e] << "," << r.epoch_val_mae[e] << "\n";
    return out.str();
}

int cmd_run(const CommonOpts& opts) {
    using namespace stwave;
    RunConfig cfg = resolve_config(opts);
    cfg.model.validate();
    cfg.train.validate();
    const std::string hash = config_hash(to_json(cfg));
    log(LogLevel::Info, "run: dataset kind=" + cfg.dataset.kind + " out=" + cfg.out_dir + " hash=" + hash);

    PreparedData data = prepare_data(cfg);
    log(LogLevel::Info, "data: N=" + std::to_string(data.dataset.n_nodes()) + " T=" +
                            std::to_string(data.dataset.n_steps()) + " masked=" +
                            std::to_string(data.dataset.meta.cells_masked));
    auto model = build_model(cfg, data, cfg.out_dir + "/cache");
    log(LogLevel::Info, "model: " + std::to_string(model->store.total_entries()) + " parameters in " +
                            std::to_string(model->store.count()) + " tensors");

    TrainResult result = train(*model, data.splits, cfg.train, [](long epoch, double loss, double val) {
        log(LogLevel::Info, "epoch " + std::to_string(epoch + 1) + ": train_loss=" + std::to_string(loss) +
                                " val_mae=" + std::to_string(val));
    });
    if (result.diverged) {
        log(LogLevel::Error, "training diverged; best checkpoint restored");
        throw NumericError("training diverged (non-finite loss)");
    }
    result.test_report.config_hash = hash;
    ForecastReport ha = evaluate_ha(data.splits.test, data.splits.stats, cfg.model.t1, cfg.model.t2);
    ha.config_hash = hash;

    write_resolved_config(cfg, cfg.out_dir);
    write_report(cfg.out_dir, result.test_report, "report");
    write_report(cfg.out_dir, ha, "ha_report");
    atomic_write(cfg.out_dir + "/train_log.csv", train_log_csv(result));
    save_checkpoint(cfg.out_dir + "/checkpoint.stwc", *model, to_json(cfg), cfg.train.seed, &result.adam);
    log(LogLevel::Info, "test MAE " + std::to_string(result.test_report.mae_all) + " (HA " +
                            std::to_string(ha.mae_all) + "), artifacts in " + cfg.out_dir);
    return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, std::string out_dir) {
    using namespace stwave;
    Checkpoint ck = load_checkpoint(checkpoint_path);
    RunConfig cfg = run_config_from_json(ck.header.at("run_config"));
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    const std::string hash = config_hash(to_json(cfg));
    log(LogLevel::Info, "evaluate: checkpoint " + checkpoint_path);
    PreparedData data = prepare_data(cfg);
    auto model = build_model(cfg, data, cfg.out_dir + "/cache");
    apply_checkpoint(*model, ck);
    ForecastReport report = evaluate(*model, data.splits.test, data.splits.stats);
    report.config_hash = hash;
    write_report(cfg.out_dir, report, "eval_report");
    log(LogLevel::Info, "test MAE " + std::to_string(report.mae_all) + ", report in " + cfg.out_dir);
    return 0;
}

int cmd_synth(const stwave::SynthSpec& spec, const std::string& out_dir) {
    using namespace stwave;
    Dataset ds = synth_traffic(spec);
    std::filesystem::create_directories(out_dir);
    {
        std::ostringstream flow;
        write_flow_binary(ds.flow, flow);
        atomic_write(out_dir + "/flow.stw", flow.str(), true);
    }
    {
        std::ostringstream edges;
        write_edge_list_csv(ds.spatial, edges);
        atomic_write(out_dir + "/edges.csv", edges.str());
    }
    Json spec_json = to_json(spec);
    Json manifest = {{"name", ds.meta.name},
                     {"nodes", ds.n_nodes()},
                     {"steps", ds.n_steps()},
                     {"sample_rate_minutes", ds.meta.sample_rate_minutes},
                     {"flow_file", "flow.stw"},
                     {"flow_format", "binary"},
                     {"edges_file", "edges.csv"},
                     {"edge_weight", "direct"},
                     {"synth", spec_json},
                     {"config_hash", config_hash(spec_json)}};
    atomic_write(out_dir + "/manifest.json", manifest.dump(2) + "\n");

    RunConfig rc;
    rc.dataset.kind = "files";
    rc.dataset.flow_path = out_dir + "/flow.stw";
    rc.dataset.flow_format = "binary";
    rc.dataset.edges_path = out_dir + "/edges.csv";
    rc.dataset.edge_weight = "direct";
    rc.dataset.declared_nodes = ds.n_nodes();
    rc.out_dir = out_dir + "/run";
    atomic_write(out_dir + "/run_config.json", to_json(rc).dump(2) + "\n");
    log(LogLevel::Info, "synthetic dataset written to " + out_dir);
    return 0;
}

int cmd_ablate(const CommonOpts& opts) {
    using namespace stwave;
    RunConfig cfg = resolve_config(opts);
    PreparedData data = prepare_data(cfg);
    const std::vector<std::string> variants = {"full", "-MS", "-DF", "-F", "-T", "-S"};
    std::vector<AblationResult> results;
    for (const std::string& v : variants) {
        log(LogLevel::Info, "ablation variant " + v);
        RunConfig vcfg = cfg;
        vcfg.model = apply_variant(cfg.model, v);
        auto model = build_model(vcfg, data);
        TrainResult tr = train(*model, data.splits, vcfg.train);
        tr.test_report.config_hash = config_hash(to_json(vcfg));
        results.push_back({v, tr.test_report});
        log(LogLevel::Info, v + ": MAE " + std::to_string(tr.test_report.mae_all));
    }
    std::ostringstream csv;
    csv.precision(10);
    csv << "variant,mae,rmse,mape\n";
    Json j = Json::array();
    for (const auto& r : results) {
        csv << r.variant << "," << r.report.mae_all << "," << r.report.rmse_all << "," << r.report.mape_all
            << "\n";
        j.push_back({{"variant", r.variant},
                     {"mae", r.report.mae_all},
                     {"rmse", r.report.rmse_all},
                     {"mape", r.report.mape_all}});
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_resolved_config(cfg, cfg.out_dir);
    atomic_write(cfg.out_dir + "/ablation.csv", csv.str());
    atomic_write(cfg.out_dir + "/ablation.json", j.dump(2) + "\n");
    std::cout << csv.str();
    return 0;
}

int cmd_bench(std::vector<long> sizes, long t_steps, long heads, long head_dim, long reps, long seed,
              const std::string& out_dir) {
    using namespace stwave;
    log(LogLevel::Info, "bench: d=" + std::to_string(heads * head_dim) + " T=" + std::to_string(t_steps));
    std::vector<BenchRow> rows = bench_attention(sizes, t_steps, heads, head_dim, reps,
                                                 static_cast<unsigned long>(seed));
    for (const auto& r : rows)
        log(LogLevel::Info, "N=" + std::to_string(r.n_nodes) + " esgat=" + std::to_string(r.esgat_ms) +
                                "ms full=" + std::to_string(r.full_ms) + "ms");
    const std::string csv = bench_csv(rows);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        atomic_write(out_dir + "/bench.csv", csv);
    }
    std::cout << csv;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"STWave: wavelet-disentangled spectral graph attention forecasting"};
    app.require_subcommand(1);

    CommonOpts run_opts;
    auto* run = app.add_subcommand("run", "train a model and write reports + checkpoint");
    run->add_option("--config", run_opts.config_path, "run config JSON");
    run->add_option("--out", run_opts.out_dir, "output directory (overrides config)");
    run->add_option("--seed", run_opts.seed, "seed override");
    run->add_option("--override", run_opts.overrides, "dotted key=value config override")->take_all();

    std::string eval_checkpoint, eval_out;
    auto* evaluate = app.add_subcommand("evaluate", "evaluate a saved checkpoint on its test split");
    evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    evaluate->add_option("--out", eval_out, "output directory");

    stwave::SynthSpec synth_spec;
    std::string synth_out = "synth_out";
    auto* synth = app.add_subcommand("synth", "generate a synthetic traffic dataset");
    synth->add_option("--nodes", synth_spec.n_nodes, "number of nodes");
    synth->add_option("--steps", synth_spec.timesteps, "number of 5-minute steps");
    synth->add_option("--seed", synth_spec.seed, "generator seed");
    synth->add_option("--graph", synth_spec.graph_kind, "ring | grid");
    synth->add_option("--noise", synth_spec.noise_sigma, "gaussian noise sigma");
    synth->add_option("--burst-rate", synth_spec.burst_rate, "per-node per-step burst probability");
    synth->add_option("--out", synth_out, "output directory");

    CommonOpts ablate_opts;
    auto* ablate = app.add_subcommand("ablate", "train the ablation grid and write a comparison table");
    ablate->add_option("--config", ablate_opts.config_path, "run config JSON");
    ablate->add_option("--out", ablate_opts.out_dir, "output directory (overrides config)");
    ablate->add_option("--seed", ablate_opts.seed, "seed override");
    ablate->add_option("--override", ablate_opts.overrides, "dotted key=value config override")->take_all();

    std::vector<long> bench_sizes = {256, 512, 1024, 2048};
    long bench_t = 12, bench_heads = 4, bench_head_dim = 16, bench_reps = 5, bench_seed = 1;
    std::string bench_out;
    auto* bench = app.add_subcommand("bench", "time query-sampled vs full attention across node counts");
    bench->add_option("--sizes", bench_sizes, "node counts")->take_all();
    bench->add_option("--t", bench_t, "time steps");
    bench->add_option("--heads", bench_heads, "attention heads");
    bench->add_option("--head-dim", bench_head_dim, "per-head dimension");
    bench->add_option("--reps", bench_reps, "repetitions per size");
    bench->add_option("--seed", bench_seed, "seed");
    bench->add_option("--out", bench_out, "output directory for bench.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1; // usage errors exit 1; --help exits 0
    }

    try {
        if (run->parsed()) return cmd_run(run_opts);
        if (evaluate->parsed()) return cmd_evaluate(eval_checkpoint, eval_out);
        if (synth->parsed()) return cmd_synth(synth_spec, synth_out);
        if (ablate->parsed()) return cmd_ablate(ablate_opts);
        if (bench->parsed())
            return cmd_bench(bench_sizes, bench_t, bench_heads, bench_head_dim, bench_reps, bench_seed,
                             bench_out);
    } catch (const stwave::DataError& e) {
        log(LogLevel::Error, e.what());
        return 2;
    } catch (const stwave::NumericError& e) {
        log(LogLevel::Error, e.what());
        return 3;
    } catch (const std::exception& e) {
        log(LogLevel::Error, e.what());
        return 1;
    }
    return 1;
}
