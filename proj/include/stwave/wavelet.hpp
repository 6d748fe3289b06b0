#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "stwave/tape.hpp"

namespace stwave {

// Orthonormal analysis/synthesis filter pair. For the orthonormal families
// used here the synthesis operator is the adjoint of the analysis operator,
// so synthesis coefficients equal the analysis ones.
struct WaveletPair {
    std::vector<double> analysis_low;   // g
    std::vector<double> analysis_high;  // h
    std::vector<double> synthesis_low;  // g^T
    std::vector<double> synthesis_high; // h^T
    std::string name;

    static WaveletPair haar() {
        const double s = 1.0 / std::sqrt(2.0);
        WaveletPair p{{s, s}, {s, -s}, {}, {}, "haar"};
        p.synthesis_low = p.analysis_low;
        p.synthesis_high = p.analysis_high;
        p.check();
        return p;
    }

    static WaveletPair db2() {
        const double r3 = std::sqrt(3.0);
        const double c = 1.0 / (4.0 * std::sqrt(2.0));
        std::vector<double> g = {(1.0 + r3) * c, (3.0 + r3) * c, (3.0 - r3) * c, (1.0 - r3) * c};
        std::vector<double> h(g.size());
        for (std::size_t k = 0; k < g.size(); ++k)
            h[k] = (k % 2 == 0 ? 1.0 : -1.0) * g[g.size() - 1 - k];
        WaveletPair p{g, h, g, h, "db2"};
        p.check();
        return p;
    }

    static WaveletPair make(const std::string& family) {
        if (family == "haar" || family == "db1") return haar();
        if (family == "db2") return db2();
        throw ArgumentError("unknown wavelet family '" + family + "'");
    }

    void check() const {
        if (analysis_low.size() != analysis_high.size() || analysis_low.size() % 2 != 0)
            throw ArgumentError("wavelet filters must share an even length");
        double gg = 0.0, hh = 0.0, gh = 0.0;
        for (std::size_t k = 0; k < analysis_low.size(); ++k) {
            gg += analysis_low[k] * analysis_low[k];
            hh += analysis_high[k] * analysis_high[k];
            gh += analysis_low[k] * analysis_high[k];
        }
        if (std::abs(gg - 1.0) > 1e-12 || std::abs(hh - 1.0) > 1e-12 || std::abs(gh) > 1e-12)
            throw NumericError("wavelet filter pair is not orthonormal");
    }
};

// Low/high latent components sharing the input's time/node extents.
struct Disentangled {
    Var low;
    Var high;
};

namespace detail {

// Periodic filter-and-decimate along axis 0: out[k] = sum_m f[m] x[(2k+m) mod T].
inline FlowTensor dwt_analysis(const FlowTensor& x, const std::vector<double>& f) {
    const long T = x.extent(0);
    const long L = static_cast<long>(f.size());
    if (T < L) throw ArgumentError("dwt: time extent " + std::to_string(T) +
                                   " shorter than filter length " + std::to_string(L));
    if (T % 2 != 0) throw ArgumentError("dwt: odd time extent " + std::to_string(T));
    const long rest = x.numel() / T;
    Shape out_shape = x.shape();
    out_shape[0] = T / 2;
    FlowTensor out(out_shape);
    for (long k = 0; k < T / 2; ++k)
        for (long m = 0; m < L; ++m) {
            const double w = f[static_cast<std::size_t>(m)];
            const double* src = x.data() + ((2 * k + m) % T) * rest;
            double* dst = out.data() + k * rest;
            for (long r = 0; r < rest; ++r) dst[r] += w * src[r];
        }
    return out;
}

// Adjoint of dwt_analysis with the same periodic convention.
inline FlowTensor dwt_synthesis(const FlowTensor& c, const std::vector<double>& f, long target_T) {
    const long Th = c.extent(0);
    if (target_T != 2 * Th)
        throw ArgumentError("dwt upsample: target length " + std::to_string(target_T) +
                            " must be twice input extent " + std::to_string(Th));
    const long L = static_cast<long>(f.size());
    const long rest = c.numel() / Th;
    Shape out_shape = c.shape();
    out_shape[0] = target_T;
    FlowTensor out(out_shape);
    for (long k = 0; k < Th; ++k)
        for (long m = 0; m < L; ++m) {
            const double w = f[static_cast<std::size_t>(m)];
            const double* src = c.data() + k * rest;
            double* dst = out.data() + ((2 * k + m) % target_T) * rest;
            for (long r = 0; r < rest; ++r) dst[r] += w * src[r];
        }
    return out;
}

inline FlowTensor repeat_pad_time(const FlowTensor& x) {
    const long T = x.extent(0);
    const long rest = x.numel() / T;
    Shape s = x.shape();
    s[0] = T + 1;
    FlowTensor out(s);
    std::copy(x.data(), x.data() + x.numel(), out.data());
    std::copy(x.data() + (T - 1) * rest, x.data() + T * rest, out.data() + T * rest);
    return out;
}

inline FlowTensor truncate_time(const FlowTensor& x, long T) {
    const long rest = x.numel() / x.extent(0);
    Shape s = x.shape();
    s[0] = T;
    FlowTensor out(s);
    std::copy(x.data(), x.data() + T * rest, out.data());
    return out;
}

} // namespace detail

enum class WaveletBranch { Low, High };

inline const std::vector<double>& branch_filter(const WaveletPair& pair, WaveletBranch b) {
    return b == WaveletBranch::Low ? pair.analysis_low : pair.analysis_high;
}

// One-level DWT along the time axis (axis 0). With pad_odd, an odd-length
// input is right-padded by repeating its last sample first.
inline std::pair<FlowTensor, FlowTensor> dwt_decompose(const FlowTensor& x, const WaveletPair& pair,
                                                       bool pad_odd = false) {
    const FlowTensor* in = &x;
    FlowTensor padded;
    if (x.extent(0) % 2 != 0) {
        if (!pad_odd) throw ArgumentError("dwt_decompose: odd time extent (enable pad_odd)");
        padded = detail::repeat_pad_time(x);
        in = &padded;
    }
    return {detail::dwt_analysis(*in, pair.analysis_low), detail::dwt_analysis(*in, pair.analysis_high)};
}

// Transpose (adjoint) of the matching analysis branch, doubling the time axis.
inline FlowTensor dwt_upsample(const FlowTensor& c, const WaveletPair& pair, WaveletBranch branch) {
    const auto& f = branch == WaveletBranch::Low ? pair.synthesis_low : pair.synthesis_high;
    return detail::dwt_synthesis(c, f, 2 * c.extent(0));
}

// Differentiable analysis branch: backward is the synthesis adjoint.
inline Var dwt_decompose_op(Tape& t, Var x, const WaveletPair& pair, WaveletBranch branch) {
    const std::vector<double> f = branch_filter(pair, branch);
    FlowTensor out = detail::dwt_analysis(t.value(x), f);
    const VarId px = x.id;
    const long T = t.value(x).extent(0);
    return t.push(std::move(out), t.needs_grad(px), [px, f, T](Tape& tp, VarId self) {
        tp.accumulate(px, detail::dwt_synthesis(tp.grad(self), f, T));
    });
}

// Differentiable synthesis branch: backward is the analysis adjoint.
inline Var dwt_upsample_op(Tape& t, Var c, const WaveletPair& pair, WaveletBranch branch) {
    const std::vector<double> f = branch == WaveletBranch::Low ? pair.synthesis_low : pair.synthesis_high;
    FlowTensor out = detail::dwt_synthesis(t.value(c), f, 2 * t.value(c).extent(0));
    const VarId pc = c.id;
    return t.push(std::move(out), t.needs_grad(pc), [pc, f](Tape& tp, VarId self) {
        tp.accumulate(pc, detail::dwt_analysis(tp.grad(self), f));
    });
}

// Decompose, up-sample each branch back to T, then lift channel C -> d with
// the learnable affine maps of each branch.
inline Disentangled disentangle(Tape& t, Var x, const WaveletPair& pair, Param& w_low, Param& b_low,
                                Param& w_high, Param& b_high) {
    Var low_c = dwt_decompose_op(t, x, pair, WaveletBranch::Low);
    Var high_c = dwt_decompose_op(t, x, pair, WaveletBranch::High);
    Var low_up = dwt_upsample_op(t, low_c, pair, WaveletBranch::Low);
    Var high_up = dwt_upsample_op(t, high_c, pair, WaveletBranch::High);
    Var low = t.add(t.matmul(low_up, t.param(w_low)), t.param(b_low));
    Var high = t.add(t.matmul(high_up, t.param(w_high)), t.param(b_high));
    return {low, high};
}

// Pre-lift low-frequency reconstruction of a future window; the
// multi-supervision target. Computed from the future window alone.
inline FlowTensor low_target(const FlowTensor& x_future, const WaveletPair& pair, bool pad_odd = false) {
    const long T = x_future.extent(0);
    auto [low, high] = dwt_decompose(x_future, pair, pad_odd);
    (void)high;
    FlowTensor up = dwt_upsample(low, pair, WaveletBranch::Low);
    if (up.extent(0) != T) up = detail::truncate_time(up, T);
    return up;
}

} // namespace stwave
