#pragma once

#include <cmath>
#include <random>

#include "stwave/tensor.hpp"

namespace stwave {

using Rng = std::mt19937_64;

inline FlowTensor rand_uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    FlowTensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (long i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

inline FlowTensor rand_normal(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    FlowTensor t(std::move(shape));
    std::normal_distribution<double> dist(mean, stddev);
    for (long i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

// Uniform Glorot scaling from the first/last extents (fan_in, fan_out).
inline FlowTensor glorot_uniform(Shape shape, Rng& rng) {
    long fan_in = shape.front();
    long fan_out = shape.back();
    if (shape.size() == 3) fan_in = shape[0] * shape[1]; // conv kernels (J, d_in, d_out)
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return rand_uniform(std::move(shape), rng, -limit, limit);
}

} // namespace stwave
