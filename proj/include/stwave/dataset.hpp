#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stwave/graph.hpp"
#include "stwave/init.hpp"

namespace stwave {

struct DatasetMeta {
    std::string name;
    long sample_rate_minutes = 5;
    std::string time_range;
    long rows_read = 0;
    long cells_masked = 0;
};

// A flow matrix with validity mask and its spatial graph. mask is 0 exactly
// where the raw input was missing or non-finite (those cells are zero-filled).
struct Dataset {
    FlowTensor flow; // (T, N, 1)
    FlowTensor mask; // (T, N, 1), 1 = observed
    Graph spatial;
    DatasetMeta meta;

    long n_steps() const { return flow.extent(0); }
    long n_nodes() const { return flow.extent(1); }

    void validate() const {
        if (flow.rank() != 3 || flow.extent(2) != 1)
            throw ShapeError("dataset flow shape " + shape_str(flow.shape()));
        if (!flow.same_shape(mask)) throw ShapeError("dataset mask shape mismatch");
        if (spatial.n_nodes != n_nodes())
            throw DataError("dataset: N = " + std::to_string(n_nodes()) + " does not match spatial graph (" +
                            std::to_string(spatial.n_nodes) + " nodes)");
        for (long i = 0; i < flow.numel(); ++i)
            if (!std::isfinite(flow[i])) throw NumericError("dataset: non-finite flow after masking");
    }
};

// ---- binary flow format -------------------------------------------------------
//
// Little-endian layout: magic "STWF", u32 version (1), u64 T, u64 N, then
// T*N float64 values in t-major order. Non-finite entries are masked on read.

constexpr char kFlowMagic[4] = {'S', 'T', 'W', 'F'};
constexpr std::uint32_t kFlowVersion = 1;

inline void write_flow_binary(const FlowTensor& flow, std::ostream& out) {
    if (flow.rank() != 3 || flow.extent(2) != 1)
        throw ShapeError("write_flow_binary: expected (T,N,1)");
    const std::uint64_t T = static_cast<std::uint64_t>(flow.extent(0));
    const std::uint64_t N = static_cast<std::uint64_t>(flow.extent(1));
    out.write(kFlowMagic, 4);
    out.write(reinterpret_cast<const char*>(&kFlowVersion), sizeof(kFlowVersion));
    out.write(reinterpret_cast<const char*>(&T), sizeof(T));
    out.write(reinterpret_cast<const char*>(&N), sizeof(N));
    out.write(reinterpret_cast<const char*>(flow.data()), static_cast<std::streamsize>(sizeof(double) * T * N));
    if (!out) throw DataError("write_flow_binary: write failed");
}

struct RawFlow {
    FlowTensor flow;
    FlowTensor mask;
    long rows_read = 0;
    long cells_masked = 0;
};

inline RawFlow read_flow_binary(std::istream& in, const std::string& origin) {
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t T = 0, N = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&T), sizeof(T));
    in.read(reinterpret_cast<char*>(&N), sizeof(N));
    if (!in || std::memcmp(magic, kFlowMagic, 4) != 0)
        throw DataError("flow binary '" + origin + "': bad magic or truncated header");
    if (version != kFlowVersion)
        throw DataError("flow binary '" + origin + "': unsupported version " + std::to_string(version));
    if (T == 0 || N == 0) throw DataError("flow binary '" + origin + "': empty extents");
    RawFlow rf;
    rf.flow = FlowTensor({static_cast<long>(T), static_cast<long>(N), 1});
    rf.mask = FlowTensor::ones(rf.flow.shape());
    in.read(reinterpret_cast<char*>(rf.flow.data()), static_cast<std::streamsize>(sizeof(double) * T * N));
    if (!in) throw DataError("flow binary '" + origin + "': truncated payload");
    rf.rows_read = static_cast<long>(T);
    for (long i = 0; i < rf.flow.numel(); ++i)
        if (!std::isfinite(rf.flow[i])) {
            rf.flow[i] = 0.0;
            rf.mask[i] = 0.0;
            ++rf.cells_masked;
        }
    return rf;
}

// ---- CSV flow formats ----------------------------------------------------------
//
// Long format: header `t,node,flow`; absent or non-numeric cells are masked.
// Wide format: T numeric rows of N comma-separated columns.

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\r')) ++pos;
        return pos == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

} // namespace detail

inline RawFlow read_flow_csv(std::istream& in, const std::string& origin) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("flow csv '" + origin + "': empty file");
    std::string header = line;
    header.erase(std::remove_if(header.begin(), header.end(), [](char c) { return c == ' ' || c == '\r'; }),
                 header.end());
    if (header == "t,node,flow") {
        struct Cell {
            long t, n;
            double v;
            bool valid;
        };
        std::vector<Cell> cells;
        long lineno = 1, max_t = -1, max_n = -1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line == "\r") continue;
            std::istringstream row(line);
            std::string ts, ns, vs;
            if (!std::getline(row, ts, ',') || !std::getline(row, ns, ',') || !std::getline(row, vs))
                throw DataError("flow csv '" + origin + "' line " + std::to_string(lineno) + ": malformed row");
            long t, n;
            try {
                t = std::stol(ts);
                n = std::stol(ns);
            } catch (const std::exception&) {
                throw DataError("flow csv '" + origin + "' line " + std::to_string(lineno) + ": malformed row");
            }
            if (t < 0 || n < 0)
                throw DataError("flow csv '" + origin + "' line " + std::to_string(lineno) + ": negative index");
            double v = 0.0;
            const bool ok = detail::parse_double(vs, v) && std::isfinite(v);
            cells.push_back({t, n, ok ? v : 0.0, ok});
            max_t = std::max(max_t, t);
            max_n = std::max(max_n, n);
        }
        if (cells.empty()) throw DataError("flow csv '" + origin + "': no data rows");
        RawFlow rf;
        rf.flow = FlowTensor({max_t + 1, max_n + 1, 1});
        rf.mask = FlowTensor({max_t + 1, max_n + 1, 1}); // absent cells stay masked
        rf.rows_read = static_cast<long>(cells.size());
        for (const Cell& c : cells) {
            rf.flow.at(c.t, c.n, 0L) = c.v;
            rf.mask.at(c.t, c.n, 0L) = c.valid ? 1.0 : 0.0;
        }
        for (long i = 0; i < rf.mask.numel(); ++i)
            if (rf.mask[i] == 0.0) ++rf.cells_masked;
        return rf;
    }

    // wide matrix: first line is data
    std::vector<std::vector<std::pair<double, bool>>> rows;
    long lineno = 0;
    auto parse_row = [&](const std::string& l) {
        ++lineno;
        std::vector<std::pair<double, bool>> row;
        std::istringstream ss(l);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            double v = 0.0;
            const bool ok = detail::parse_double(cell, v) && std::isfinite(v);
            if (!ok && !cell.empty() && cell != "\r" && cell.find_first_not_of(" \t\r") != std::string::npos) {
                std::string low = cell;
                std::transform(low.begin(), low.end(), low.begin(), ::tolower);
                if (low.find("nan") == std::string::npos && low.find("inf") == std::string::npos)
                    throw DataError("flow csv '" + origin + "' line " + std::to_string(lineno) +
                                    ": malformed cell '" + cell + "'");
            }
            row.emplace_back(ok ? v : 0.0, ok);
        }
        return row;
    };
    rows.push_back(parse_row(line));
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") {
            ++lineno;
            continue;
        }
        rows.push_back(parse_row(line));
        if (rows.back().size() != rows.front().size())
            throw DataError("flow csv '" + origin + "' line " + std::to_string(lineno) +
                            ": ragged row (expected " + std::to_string(rows.front().size()) + " columns)");
    }
    const long T = static_cast<long>(rows.size());
    const long N = static_cast<long>(rows.front().size());
    RawFlow rf;
    rf.flow = FlowTensor({T, N, 1});
    rf.mask = FlowTensor::ones({T, N, 1});
    rf.rows_read = T;
    for (long t = 0; t < T; ++t)
        for (long n = 0; n < N; ++n) {
            const auto& [v, ok] = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(n)];
            rf.flow.at(t, n, 0L) = v;
            if (!ok) {
                rf.mask.at(t, n, 0L) = 0.0;
                ++rf.cells_masked;
            }
        }
    return rf;
}

// Load a flow file plus its edge list into a Dataset. declared_nodes > 0
// enforces consistency between the flow matrix and the edge list.
inline Dataset ingest_flow(const std::string& flow_path, const std::string& format,
                           const std::string& edges_path, long declared_nodes = 0,
                           EdgeCostMapping mapping = EdgeCostMapping::GaussianKernel) {
    RawFlow rf;
    if (format == "binary") {
        std::ifstream in(flow_path, std::ios::binary);
        if (!in) throw DataError("cannot open flow file '" + flow_path + "'");
        rf = read_flow_binary(in, flow_path);
    } else if (format == "csv") {
        std::ifstream in(flow_path);
        if (!in) throw DataError("cannot open flow file '" + flow_path + "'");
        rf = read_flow_csv(in, flow_path);
    } else {
        throw ArgumentError("ingest_flow: unknown format '" + format + "'");
    }
    const long N = rf.flow.extent(1);
    if (declared_nodes > 0 && declared_nodes != N)
        throw DataError("ingest_flow: declared N = " + std::to_string(declared_nodes) +
                        " but flow file has " + std::to_string(N));
    Dataset ds;
    ds.flow = std::move(rf.flow);
    ds.mask = std::move(rf.mask);
    ds.spatial = load_edge_list_csv(edges_path, N, mapping);
    ds.meta.name = flow_path;
    ds.meta.rows_read = rf.rows_read;
    ds.meta.cells_masked = rf.cells_masked;
    ds.validate();
    return ds;
}

// ---- synthetic traffic -----------------------------------------------------------

struct SynthSpec {
    long n_nodes = 20;
    long timesteps = 4000;
    unsigned long seed = 7;
    std::string graph_kind = "ring"; // ring | grid
    long daily_period = 288;         // 5-minute steps per day
    double base_flow = 200.0;
    double amplitude = 150.0;
    double noise_sigma = 5.0;
    double burst_rate = 0.004;     // per node per step
    double burst_magnitude = 80.0;
    double burst_decay = 0.6;
    double neighbor_fraction = 0.5; // carried to graph neighbors with one-step lag
};

// Per node: a daily sinusoid with node-specific phase (long-term trend), plus
// seeded transient bursts that propagate to graph neighbors one step later
// (short-term fluctuation), plus Gaussian noise.
inline Dataset synth_traffic(const SynthSpec& spec) {
    if (spec.n_nodes < 2) throw ArgumentError("synth_traffic: need at least 2 nodes");
    if (spec.timesteps < 2) throw ArgumentError("synth_traffic: need at least 2 steps");
    Graph g;
    if (spec.graph_kind == "ring") {
        g = ring_graph(spec.n_nodes);
    } else if (spec.graph_kind == "grid") {
        long rows = static_cast<long>(std::floor(std::sqrt(static_cast<double>(spec.n_nodes))));
        while (rows > 1 && spec.n_nodes % rows != 0) --rows;
        g = grid_graph(rows, spec.n_nodes / rows);
    } else {
        throw ArgumentError("synth_traffic: unknown graph kind '" + spec.graph_kind + "'");
    }

    const long T = spec.timesteps, N = spec.n_nodes;
    Rng rng(spec.seed);
    FlowTensor flow({T, N, 1});
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (long n = 0; n < N; ++n) {
        const double phase = two_pi * static_cast<double>(n) / static_cast<double>(N);
        for (long t = 0; t < T; ++t)
            flow.at(t, n, 0L) = spec.base_flow +
                                spec.amplitude * std::sin(two_pi * static_cast<double>(t) /
                                                              static_cast<double>(spec.daily_period) +
                                                          phase);
    }

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    const long burst_len = 6;
    for (long t = 0; t < T; ++t)
        for (long n = 0; n < N; ++n) {
            if (spec.burst_rate > 0.0 && unit(rng) < spec.burst_rate) {
                double amp = spec.burst_magnitude;
                for (long dt = 0; dt < burst_len && t + dt < T; ++dt) {
                    flow.at(t + dt, n, 0L) += amp;
                    if (dt + 1 < burst_len && t + dt + 1 < T) {
                        for (long m = 0; m < N; ++m)
                            if (g.adjacency.at(n, m) > 0.0)
                                flow.at(t + dt + 1, m, 0L) += spec.neighbor_fraction * amp;
                    }
                    amp *= spec.burst_decay;
                }
            }
            if (spec.noise_sigma > 0.0) flow.at(t, n, 0L) += noise(rng);
        }

    Dataset ds;
    ds.flow = std::move(flow);
    ds.mask = FlowTensor::ones({T, N, 1});
    ds.spatial = std::move(g);
    ds.meta.name = "synth-" + spec.graph_kind + "-" + std::to_string(N) + "x" + std::to_string(T) +
                   "-seed" + std::to_string(spec.seed);
    ds.meta.rows_read = T;
    ds.validate();
    return ds;
}

} // namespace stwave
