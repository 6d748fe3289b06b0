#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include "stwave/config.hpp"
#include "stwave/serialize.hpp"

namespace stwave {

inline Dataset load_dataset(const DatasetSpec& spec) {
    if (spec.kind == "synth") return synth_traffic(spec.synth);
    if (spec.kind == "files") {
        const EdgeCostMapping mapping =
            spec.edge_weight == "direct" ? EdgeCostMapping::DirectWeight : EdgeCostMapping::GaussianKernel;
        return ingest_flow(spec.flow_path, spec.flow_format, spec.edges_path, spec.declared_nodes, mapping);
    }
    throw ArgumentError("dataset spec: unknown kind '" + spec.kind + "'");
}

struct PreparedData {
    Dataset dataset;
    DataSplits splits;
    Graph temporal;
};

// Dataset -> chronological splits -> DTW temporal graph. Normalization stats
// and the temporal graph come from the training segment only.
inline PreparedData prepare_data(const RunConfig& cfg) {
    PreparedData out;
    out.dataset = load_dataset(cfg.dataset);
    out.splits = chronological_split(out.dataset.flow, out.dataset.mask, cfg.model.t1, cfg.model.t2, 0.6, 0.2,
                                     cfg.train.normalization);
    long k = cfg.temporal_k;
    if (k <= 0) {
        k = static_cast<long>(std::lround(out.dataset.spatial.mean_edge_count()));
        k = std::clamp(k, 1L, out.dataset.n_nodes() - 1);
    }
    out.temporal = build_temporal_graph(out.splits.train.raw, k, cfg.dtw_downsample);
    return out;
}

// cache_dir, when given, holds versioned eigenbasis blobs keyed by the
// dataset spec hash; hits skip the Laplacian decompositions.
inline std::unique_ptr<STWaveModel> build_model(const RunConfig& cfg, const PreparedData& data,
                                                const std::string& cache_dir = "") {
    auto model = std::make_unique<STWaveModel>(cfg.model, cfg.train.seed);
    if (cache_dir.empty()) {
        model->attach_graphs(data.dataset.spatial, data.temporal);
        return model;
    }
    const long d_pe = std::min(cfg.model.dim(), data.dataset.n_nodes());
    const std::string dataset_hash = config_hash(to_json(cfg.dataset));
    const EigenCacheKey spa_key{dataset_hash + "-spa", "sym-normalized", d_pe};
    const EigenCacheKey tem_key{dataset_hash + "-tem", "sym-normalized", d_pe};
    const std::string spa_path = cache_dir + "/eigenbasis_spa.json";
    const std::string tem_path = cache_dir + "/eigenbasis_tem.json";
    EigenBasis spa, tem;
    const bool spa_hit = load_eigenbasis(spa_path, spa_key, spa);
    const bool tem_hit = load_eigenbasis(tem_path, tem_key, tem);
    model->attach_graphs(data.dataset.spatial, data.temporal, spa_hit ? &spa : nullptr,
                         tem_hit ? &tem : nullptr);
    if (!spa_hit) save_eigenbasis(spa_path, spa_key, model->pe_spa.basis);
    if (!tem_hit) save_eigenbasis(tem_path, tem_key, model->pe_tem.basis);
    return model;
}

struct RunArtifacts {
    TrainResult result;
    ForecastReport ha_report;
    std::string hash;
};

inline RunArtifacts run_experiment(const RunConfig& cfg, const PreparedData& data, STWaveModel& model) {
    RunArtifacts art;
    art.hash = config_hash(to_json(cfg));
    art.result = train(model, data.splits, cfg.train);
    art.result.test_report.config_hash = art.hash;
    art.ha_report = evaluate_ha(data.splits.test, data.splits.stats, cfg.model.t1, cfg.model.t2);
    art.ha_report.config_hash = art.hash;
    return art;
}

// ---- ablation grid -----------------------------------------------------------

struct AblationResult {
    std::string variant;
    ForecastReport report;
};

inline STWaveConfig apply_variant(STWaveConfig base, const std::string& variant) {
    if (variant == "full") return base;
    if (variant == "-MS") base.disable_multi_supervision = true;
    else if (variant == "-DF") base.disable_disentangle = true;
    else if (variant == "-F") base.additive_fusion = true;
    else if (variant == "-T") base.disable_temporal = true;
    else if (variant == "-S") base.disable_spatial = true;
    else throw ArgumentError("unknown ablation variant '" + variant + "'");
    return base;
}

inline std::vector<AblationResult> run_ablations(const RunConfig& cfg, const PreparedData& data,
                                                 const std::vector<std::string>& variants) {
    std::vector<AblationResult> out;
    for (const std::string& v : variants) {
        RunConfig vcfg = cfg;
        vcfg.model = apply_variant(cfg.model, v);
        auto model = build_model(vcfg, data);
        TrainResult tr = train(*model, data.splits, vcfg.train);
        tr.test_report.config_hash = config_hash(to_json(vcfg));
        out.push_back({v, tr.test_report});
    }
    return out;
}

// ---- attention scaling bench ----------------------------------------------------

struct BenchRow {
    long n_nodes;
    double esgat_ms; // median forward time, query-sampled path
    double full_ms;  // median forward time, full-attention path
};

// Times the query-sampled spectral attention against the quadratic full
// attention on a ring graph, d = heads * head_dim, random inputs. The full
// path runs step by step to bound peak memory; both cover T steps.
inline std::vector<BenchRow> bench_attention(const std::vector<long>& sizes, long t_steps, long n_heads,
                                             long head_dim, long reps, unsigned long seed) {
    using Clock = std::chrono::steady_clock;
    const long d = n_heads * head_dim;
    std::vector<BenchRow> rows;
    for (long n : sizes) {
        Rng rng(seed + static_cast<unsigned long>(n));
        ParamStore store;
        AttentionHeads heads;
        heads.n_heads = n_heads;
        heads.head_dim = head_dim;
        heads.wq = &store.add("wq", glorot_uniform({d, d}, rng));
        heads.wk = &store.add("wk", glorot_uniform({d, d}, rng));
        heads.wv = &store.add("wv", glorot_uniform({d, d}, rng));
        heads.wo = &store.add("wo", glorot_uniform({d, d}, rng));
        Param& projector = store.add("p", glorot_uniform({d, 1}, rng).reshaped({d}));
        Param& s_spa = store.add("s.spa", FlowTensor::full({1}, -1.0));
        Param& s_tem = store.add("s.tem", FlowTensor::full({1}, -1.0));

        Graph spatial = ring_graph(n);
        Graph temporal = ring_graph(n); // stand-in; timing only depends on sizes
        const long d_pe = std::min(d, n);
        GraphPE pe_spa = graph_positional_encoding(spatial, d_pe, s_spa, d);
        GraphPE pe_tem = graph_positional_encoding(temporal, d_pe, s_tem, d);
        auto nbrs = std::make_shared<const std::vector<std::vector<long>>>(neighbor_lists(spatial));

        FlowTensor x = rand_normal({t_steps, n, d}, rng);
        {
            // warm caches before the timed repetitions
            Tape tape;
            Var out = esgat(tape, tape.constant(x), pe_spa, pe_tem, nbrs, heads, projector);
            (void)out;
        }
        std::vector<double> esgat_times, full_times;
        for (long r = 0; r < reps; ++r) {
            {
                const auto start = Clock::now();
                Tape tape;
                Var xv = tape.constant(x);
                Var out = esgat(tape, xv, pe_spa, pe_tem, nbrs, heads, projector);
                (void)out;
                esgat_times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
            }
            {
                const auto start = Clock::now();
                FlowTensor step({1, n, d});
                for (long tt = 0; tt < t_steps; ++tt) {
                    std::copy(x.data() + tt * n * d, x.data() + (tt + 1) * n * d, step.data());
                    Tape tape;
                    Var xv = tape.constant(step);
                    Var x_tilde = tape.add(tape.add(xv, tape.constant(pe_spa.rho)), tape.constant(pe_tem.rho));
                    Var out = full_spatial_attention(tape, x_tilde, heads);
                    (void)out;
                }
                full_times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
            }
        }
        auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return v[v.size() / 2];
        };
        rows.push_back({n, median(esgat_times), median(full_times)});
    }
    return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out.precision(6);
    out << "n,esgat_ms,full_ms\n";
    for (const auto& r : rows) out << r.n_nodes << "," << std::fixed << r.esgat_ms << "," << r.full_ms << "\n";
    return out.str();
}

} // namespace stwave
