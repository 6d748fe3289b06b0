#pragma once

#include <json.hpp>

#include <fstream>
#include <string>

#include "stwave/dataset.hpp"
#include "stwave/model.hpp"
#include "stwave/training.hpp"

namespace stwave {

using Json = nlohmann::json;

// Where the flow data comes from: a generated synthetic set or files on disk.
struct DatasetSpec {
    std::string kind = "synth"; // synth | files
    SynthSpec synth;
    std::string flow_path;
    std::string flow_format = "binary"; // binary | csv
    std::string edges_path;
    std::string edge_weight = "gaussian"; // gaussian | direct
    long declared_nodes = 0;
};

struct RunConfig {
    DatasetSpec dataset;
    STWaveConfig model;
    TrainConfig train;
    std::string out_dir = "out";
    long dtw_downsample = 1;
    long temporal_k = 0; // 0 = spatial mean degree
};

inline Json to_json(const SynthSpec& s) {
    return Json{{"nodes", s.n_nodes},
                {"steps", s.timesteps},
                {"seed", s.seed},
                {"graph", s.graph_kind},
                {"daily_period", s.daily_period},
                {"base_flow", s.base_flow},
                {"amplitude", s.amplitude},
                {"noise_sigma", s.noise_sigma},
                {"burst_rate", s.burst_rate},
                {"burst_magnitude", s.burst_magnitude},
                {"burst_decay", s.burst_decay},
                {"neighbor_fraction", s.neighbor_fraction}};
}

inline void from_json_into(const Json& j, SynthSpec& s) {
    s.n_nodes = j.value("nodes", s.n_nodes);
    s.timesteps = j.value("steps", s.timesteps);
    s.seed = j.value("seed", s.seed);
    s.graph_kind = j.value("graph", s.graph_kind);
    s.daily_period = j.value("daily_period", s.daily_period);
    s.base_flow = j.value("base_flow", s.base_flow);
    s.amplitude = j.value("amplitude", s.amplitude);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.burst_rate = j.value("burst_rate", s.burst_rate);
    s.burst_magnitude = j.value("burst_magnitude", s.burst_magnitude);
    s.burst_decay = j.value("burst_decay", s.burst_decay);
    s.neighbor_fraction = j.value("neighbor_fraction", s.neighbor_fraction);
}

inline Json to_json(const DatasetSpec& d) {
    return Json{{"kind", d.kind},          {"synth", to_json(d.synth)},
                {"flow_path", d.flow_path}, {"flow_format", d.flow_format},
                {"edges_path", d.edges_path}, {"edge_weight", d.edge_weight},
                {"declared_nodes", d.declared_nodes}};
}

inline void from_json_into(const Json& j, DatasetSpec& d) {
    d.kind = j.value("kind", d.kind);
    if (j.contains("synth")) from_json_into(j.at("synth"), d.synth);
    d.flow_path = j.value("flow_path", d.flow_path);
    d.flow_format = j.value("flow_format", d.flow_format);
    d.edges_path = j.value("edges_path", d.edges_path);
    d.edge_weight = j.value("edge_weight", d.edge_weight);
    d.declared_nodes = j.value("declared_nodes", d.declared_nodes);
}

inline Json to_json(const STWaveConfig& m) {
    return Json{{"t1", m.t1},
                {"t2", m.t2},
                {"heads", m.n_heads},
                {"head_dim", m.head_dim},
                {"layers", m.n_layers},
                {"kernel", m.kernel},
                {"dilation", m.dilation},
                {"wavelet", m.wavelet},
                {"sample_base", m.sample_base},
                {"dropout", m.dropout},
                {"residuals", m.residuals},
                {"disable_multi_supervision", m.disable_multi_supervision},
                {"disable_disentangle", m.disable_disentangle},
                {"additive_fusion", m.additive_fusion},
                {"disable_temporal", m.disable_temporal},
                {"disable_spatial", m.disable_spatial}};
}

inline void from_json_into(const Json& j, STWaveConfig& m) {
    m.t1 = j.value("t1", m.t1);
    m.t2 = j.value("t2", m.t2);
    m.n_heads = j.value("heads", m.n_heads);
    m.head_dim = j.value("head_dim", m.head_dim);
    m.n_layers = j.value("layers", m.n_layers);
    m.kernel = j.value("kernel", m.kernel);
    m.dilation = j.value("dilation", m.dilation);
    m.wavelet = j.value("wavelet", m.wavelet);
    m.sample_base = j.value("sample_base", m.sample_base);
    m.dropout = j.value("dropout", m.dropout);
    m.residuals = j.value("residuals", m.residuals);
    m.disable_multi_supervision = j.value("disable_multi_supervision", m.disable_multi_supervision);
    m.disable_disentangle = j.value("disable_disentangle", m.disable_disentangle);
    m.additive_fusion = j.value("additive_fusion", m.additive_fusion);
    m.disable_temporal = j.value("disable_temporal", m.disable_temporal);
    m.disable_spatial = j.value("disable_spatial", m.disable_spatial);
}

inline Json to_json(const TrainConfig& t) {
    return Json{{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"lr_decay", t.lr_decay},
                {"decay_patience", t.decay_patience},
                {"early_stop_patience", t.early_stop_patience},
                {"seed", t.seed},
                {"normalization", t.normalization}};
}

inline void from_json_into(const Json& j, TrainConfig& t) {
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.lr = j.value("lr", t.lr);
    t.lr_decay = j.value("lr_decay", t.lr_decay);
    t.decay_patience = j.value("decay_patience", t.decay_patience);
    t.early_stop_patience = j.value("early_stop_patience", t.early_stop_patience);
    t.seed = j.value("seed", t.seed);
    t.normalization = j.value("normalization", t.normalization);
}

inline Json to_json(const RunConfig& r) {
    return Json{{"dataset", to_json(r.dataset)}, {"model", to_json(r.model)},
                {"train", to_json(r.train)},     {"out_dir", r.out_dir},
                {"dtw_downsample", r.dtw_downsample}, {"temporal_k", r.temporal_k}};
}

inline void from_json_into(const Json& j, RunConfig& r) {
    if (j.contains("dataset")) from_json_into(j.at("dataset"), r.dataset);
    if (j.contains("model")) from_json_into(j.at("model"), r.model);
    if (j.contains("train")) from_json_into(j.at("train"), r.train);
    r.out_dir = j.value("out_dir", r.out_dir);
    r.dtw_downsample = j.value("dtw_downsample", r.dtw_downsample);
    r.temporal_k = j.value("temporal_k", r.temporal_k);
}

inline RunConfig run_config_from_json(const Json& j) {
    RunConfig r;
    // accept both a bare config and the hash-stamped artifact wrapper
    if (j.contains("config") && j.contains("config_hash"))
        from_json_into(j.at("config"), r);
    else
        from_json_into(j, r);
    return r;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("config '" + path + "': " + e.what());
    }
    return run_config_from_json(j);
}

// Applies a dotted `key=value` override onto a config JSON tree; the value is
// parsed as JSON when possible, else kept as a string.
inline void apply_override(Json& j, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ArgumentError("override '" + kv + "' is not of the form key=value");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(raw);
    } catch (const std::exception&) {
        value = raw;
    }
    Json* cur = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ArgumentError("override '" + kv + "' has an empty key segment");
        if (dot == std::string::npos) {
            (*cur)[part] = value;
            return;
        }
        cur = &(*cur)[part];
        start = dot + 1;
    }
}

// FNV-1a over the canonical (key-sorted) dump; stamps every report so a rerun
// can be matched to its exact configuration.
inline std::string config_hash(const Json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace stwave
