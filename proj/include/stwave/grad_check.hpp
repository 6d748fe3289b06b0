#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stwave/tape.hpp"

namespace stwave {

struct GradCheckReport {
    double max_rel_err = 0.0;
    long entries_checked = 0;
    std::string worst_entry;
};

// Central-difference check of reverse-mode gradients. loss_fn(true) must run a
// full forward/backward and accumulate gradients into the given params;
// loss_fn(false) evaluates the loss only. Above max_entries total entries a
// seeded random subsample is checked. Relative error denominators are floored
// at 1e-8.
inline GradCheckReport grad_check(const std::function<double(bool)>& loss_fn,
                                  const std::vector<Param*>& params, double eps = 1e-5,
                                  long max_entries = 10000, unsigned long seed = 20240529ULL) {
    if (eps < 1e-7 || eps > 1e-3) throw ArgumentError("grad_check: eps outside [1e-7, 1e-3]");
    for (Param* p : params) p->zero_grad();
    const double base = loss_fn(true);
    if (!std::isfinite(base)) throw NumericError("grad_check: loss not finite at base point");

    std::vector<FlowTensor> analytic;
    analytic.reserve(params.size());
    long total = 0;
    for (Param* p : params) {
        analytic.push_back(p->grad);
        total += p->value.numel();
    }

    std::vector<std::pair<std::size_t, long>> entries;
    entries.reserve(static_cast<std::size_t>(std::min(total, max_entries)));
    if (total <= max_entries) {
        for (std::size_t pi = 0; pi < params.size(); ++pi)
            for (long i = 0; i < params[pi]->value.numel(); ++i) entries.emplace_back(pi, i);
    } else {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<long> pick(0, total - 1);
        std::vector<long> offsets(params.size() + 1, 0);
        for (std::size_t pi = 0; pi < params.size(); ++pi)
            offsets[pi + 1] = offsets[pi] + params[pi]->value.numel();
        for (long s = 0; s < max_entries; ++s) {
            long flat = pick(rng);
            std::size_t pi = 0;
            while (offsets[pi + 1] <= flat) ++pi;
            entries.emplace_back(pi, flat - offsets[pi]);
        }
    }

    GradCheckReport rep;
    for (auto [pi, i] : entries) {
        Param& p = *params[pi];
        const double saved = p.value[i];
        p.value[i] = saved + eps;
        const double f_plus = loss_fn(false);
        p.value[i] = saved - eps;
        const double f_minus = loss_fn(false);
        p.value[i] = saved;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
            throw NumericError("grad_check: loss not finite at perturbed point of " + p.name);
        const double fd = (f_plus - f_minus) / (2.0 * eps);
        const double an = analytic[pi][i];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        const double rel = std::abs(fd - an) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_entry = p.name + "[" + std::to_string(i) + "]";
        }
        ++rep.entries_checked;
    }
    return rep;
}

} // namespace stwave
