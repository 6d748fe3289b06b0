#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stwave/eigen.hpp"
#include "stwave/model.hpp"
#include "stwave/training.hpp"

namespace stwave {

// Writes via a temp file in the same directory, then renames into place.
inline void atomic_write(const std::string& path, const std::string& contents, bool binary = false) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
        if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw DataError("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

// ---- checkpoint ---------------------------------------------------------------
//
// Layout: magic "STWC", u32 version (1), u64 header length, JSON header
// (config echo, seed, ordered parameter names/shapes, optimizer metadata),
// then float64 payload: parameter values, then Adam m and v when present.
// The header key order and payload order are fixed, so identical runs produce
// byte-identical files.

constexpr char kCheckpointMagic[4] = {'S', 'T', 'W', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    nlohmann::json header;
    std::vector<FlowTensor> values;
    std::vector<FlowTensor> adam_m;
    std::vector<FlowTensor> adam_v;
    bool has_adam = false;
    long adam_step = 0;
};

inline std::string checkpoint_bytes(const STWaveModel& model, const nlohmann::json& run_config,
                                    unsigned long seed, const AdamState* adam) {
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["run_config"] = run_config;
    header["seed"] = seed;
    nlohmann::json plist = nlohmann::json::array();
    for (const Param* p : model.store.all())
        plist.push_back({{"name", p->name}, {"shape", p->value.shape()}});
    header["params"] = plist;
    if (adam) header["adam"] = {{"step", adam->step}, {"beta1", adam->beta1}, {"beta2", adam->beta2}, {"eps", adam->eps}};

    const std::string hjson = header.dump();
    std::string out;
    out.append(kCheckpointMagic, 4);
    const std::uint32_t version = kCheckpointVersion;
    out.append(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t hlen = hjson.size();
    out.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.append(hjson);
    auto append_tensor = [&out](const FlowTensor& t) {
        out.append(reinterpret_cast<const char*>(t.data()), sizeof(double) * static_cast<std::size_t>(t.numel()));
    };
    for (const Param* p : model.store.all()) append_tensor(p->value);
    if (adam) {
        for (const FlowTensor& t : adam->m) append_tensor(t);
        for (const FlowTensor& t : adam->v) append_tensor(t);
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const STWaveModel& model,
                            const nlohmann::json& run_config, unsigned long seed,
                            const AdamState* adam = nullptr) {
    atomic_write(path, checkpoint_bytes(model, run_config, seed, adam), true);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("checkpoint '" + path + "': bad magic");
    if (version != kCheckpointVersion)
        throw DataError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
    std::string hjson(hlen, '\0');
    in.read(hjson.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("checkpoint '" + path + "': truncated header");

    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(hjson);
    } catch (const std::exception& e) {
        throw DataError("checkpoint '" + path + "': bad header: " + e.what());
    }
    auto read_tensor = [&](const Shape& shape) {
        FlowTensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(double) * t.numel()));
        if (!in) throw DataError("checkpoint '" + path + "': truncated payload");
        return t;
    };
    for (const auto& pj : ck.header.at("params"))
        ck.values.push_back(read_tensor(pj.at("shape").get<Shape>()));
    if (ck.header.contains("adam")) {
        ck.has_adam = true;
        ck.adam_step = ck.header["adam"].value("step", 0L);
        for (const auto& pj : ck.header.at("params")) ck.adam_m.push_back(read_tensor(pj.at("shape").get<Shape>()));
        for (const auto& pj : ck.header.at("params")) ck.adam_v.push_back(read_tensor(pj.at("shape").get<Shape>()));
    }
    return ck;
}

// Copies checkpoint parameters into the model; names and shapes must match
// the model's registration order exactly.
inline void apply_checkpoint(STWaveModel& model, const Checkpoint& ck, AdamState* adam = nullptr) {
    const auto params = model.store.all();
    const auto& plist = ck.header.at("params");
    if (plist.size() != params.size())
        throw DataError("checkpoint: parameter count mismatch (" + std::to_string(plist.size()) + " vs " +
                        std::to_string(params.size()) + ")");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string name = plist[i].at("name").get<std::string>();
        if (name != params[i]->name)
            throw DataError("checkpoint: parameter '" + name + "' does not match model '" + params[i]->name + "'");
        if (ck.values[i].shape() != params[i]->value.shape())
            throw DataError("checkpoint: shape mismatch for '" + name + "'");
        params[i]->value = ck.values[i];
    }
    if (adam && ck.has_adam) {
        adam->m = ck.adam_m;
        adam->v = ck.adam_v;
        adam->step = ck.adam_step;
        adam->beta1 = ck.header["adam"].value("beta1", 0.9);
        adam->beta2 = ck.header["adam"].value("beta2", 0.999);
        adam->eps = ck.header["adam"].value("eps", 1e-8);
    }
    // positional encodings depend on the restored scales
    if (model.graphs_attached) {
        model.pe_spa.refresh();
        model.pe_tem.refresh();
    }
}

// ---- eigenbasis cache ------------------------------------------------------------
//
// Versioned JSON blob keyed by (dataset hash, Laplacian variant, d).

struct EigenCacheKey {
    std::string dataset_hash;
    std::string laplacian = "sym-normalized";
    long d = 0;
};

inline void save_eigenbasis(const std::string& path, const EigenCacheKey& key, const EigenBasis& basis) {
    nlohmann::json j;
    j["version"] = 1;
    j["key"] = {{"dataset_hash", key.dataset_hash}, {"laplacian", key.laplacian}, {"d", key.d}};
    j["eigenvalues"] = basis.eigenvalues;
    nlohmann::json vecs = nlohmann::json::array();
    const long n = basis.eigenvectors.extent(0), d = basis.eigenvectors.extent(1);
    for (long i = 0; i < n; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (long c = 0; c < d; ++c) row.push_back(basis.eigenvectors.at(i, c));
        vecs.push_back(std::move(row));
    }
    j["eigenvectors"] = std::move(vecs);
    atomic_write(path, j.dump(2) + "\n");
}

inline bool load_eigenbasis(const std::string& path, const EigenCacheKey& key, EigenBasis& out) {
    std::ifstream in(path);
    if (!in) return false;
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception&) {
        return false;
    }
    if (j.value("version", 0) != 1) return false;
    const auto& k = j.at("key");
    if (k.value("dataset_hash", "") != key.dataset_hash || k.value("laplacian", "") != key.laplacian ||
        k.value("d", -1L) != key.d)
        return false;
    out.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
    const auto& vecs = j.at("eigenvectors");
    const long n = static_cast<long>(vecs.size());
    const long d = static_cast<long>(out.eigenvalues.size());
    out.eigenvectors = FlowTensor({n, d});
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < d; ++c) out.eigenvectors.at(i, c) = vecs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
    return true;
}

// ---- reports -----------------------------------------------------------------------

inline nlohmann::json report_to_json(const ForecastReport& r) {
    nlohmann::json j;
    j["mae"] = r.mae_all;
    j["rmse"] = r.rmse_all;
    j["mape"] = r.mape_all;
    j["n_samples"] = r.n_samples;
    j["config_hash"] = r.config_hash;
    nlohmann::json horizons = nlohmann::json::array();
    for (std::size_t h = 0; h < r.mae.size(); ++h)
        horizons.push_back({{"horizon", h + 1}, {"mae", r.mae[h]}, {"rmse", r.rmse[h]}, {"mape", r.mape[h]}});
    j["per_horizon"] = std::move(horizons);
    return j;
}

inline std::string per_horizon_csv(const ForecastReport& r) {
    std::ostringstream out;
    out.precision(10);
    out << "horizon,mae,rmse,mape\n";
    for (std::size_t h = 0; h < r.mae.size(); ++h)
        out << (h + 1) << "," << r.mae[h] << "," << r.rmse[h] << "," << r.mape[h] << "\n";
    return out.str();
}

inline void write_report(const std::string& dir, const ForecastReport& r, const std::string& stem = "report") {
    atomic_write(dir + "/" + stem + ".json", report_to_json(r).dump(2) + "\n");
    atomic_write(dir + "/" + stem + "_per_horizon.csv", per_horizon_csv(r));
}

} // namespace stwave
