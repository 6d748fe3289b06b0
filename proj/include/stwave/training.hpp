#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <string>
#include <vector>

#include "stwave/model.hpp"
#include "stwave/parallel.hpp"

namespace stwave {

struct TrainConfig {
    long epochs = 200;
    long batch_size = 64;
    double lr = 1e-3;
    double lr_decay = 0.1;
    long decay_patience = 10;
    long early_stop_patience = 30;
    unsigned long seed = 1;
    std::string normalization = "zscore"; // zscore | none

    void validate() const {
        if (lr <= 0.0) throw ArgumentError("train config: lr must be positive");
        if (lr_decay <= 0.0 || lr_decay > 1.0) throw ArgumentError("train config: lr_decay outside (0,1]");
        if (batch_size < 1) throw ArgumentError("train config: batch_size must be >= 1");
        if (epochs < 0) throw ArgumentError("train config: negative epochs");
        if (normalization != "zscore" && normalization != "none")
            throw ArgumentError("train config: unknown normalization '" + normalization + "'");
    }
};

struct ZScoreStats {
    double mean = 0.0;
    double std = 1.0;
};

// Stats over valid entries of the training split only.
inline ZScoreStats compute_zscore(const FlowTensor& flow, const FlowTensor* mask = nullptr) {
    double sum = 0.0, count = 0.0;
    for (long i = 0; i < flow.numel(); ++i) {
        if (mask && (*mask)[i] <= 0.5) continue;
        sum += flow[i];
        count += 1.0;
    }
    if (count == 0.0) throw DataError("zscore: no valid entries");
    const double mean = sum / count;
    double var = 0.0;
    for (long i = 0; i < flow.numel(); ++i) {
        if (mask && (*mask)[i] <= 0.5) continue;
        var += (flow[i] - mean) * (flow[i] - mean);
    }
    const double sd = std::sqrt(var / count);
    if (sd <= 0.0) throw DataError("zscore: constant series (zero variance)");
    return {mean, sd};
}

inline FlowTensor zscore_apply(const FlowTensor& x, const ZScoreStats& s) {
    FlowTensor out = x;
    for (long i = 0; i < out.numel(); ++i) out[i] = (out[i] - s.mean) / s.std;
    return out;
}

inline FlowTensor zscore_invert(const FlowTensor& z, const ZScoreStats& s) {
    FlowTensor out = z;
    for (long i = 0; i < out.numel(); ++i) out[i] = out[i] * s.std + s.mean;
    return out;
}

struct SplitView {
    FlowTensor raw;  // (T, N, 1) original units, missing zero-filled
    FlowTensor norm; // (T, N, 1) normalized with train stats
    FlowTensor mask; // (T, N, 1) 1 = observed
    long length() const { return raw.empty() ? 0 : raw.extent(0); }
};

struct DataSplits {
    SplitView train, val, test;
    ZScoreStats stats;
};

namespace detail {

inline FlowTensor slice_time(const FlowTensor& x, long t0, long t1) {
    if (t0 >= t1) return FlowTensor(); // empty segment
    Shape s = x.shape();
    const long rest = x.numel() / x.extent(0);
    s[0] = t1 - t0;
    FlowTensor out(s);
    std::copy(x.data() + t0 * rest, x.data() + t1 * rest, out.data());
    return out;
}

} // namespace detail

// Contiguous, order-preserving 60/20/20-style segments. Sliding windows are
// drawn within segments only, so none crosses a boundary.
inline DataSplits chronological_split(const FlowTensor& flow, const FlowTensor& mask, long t1, long t2,
                                      double train_ratio = 0.6, double val_ratio = 0.2,
                                      const std::string& normalization = "zscore") {
    if (flow.rank() != 3 || flow.extent(2) != 1)
        throw ShapeError("chronological_split: expected (T,N,1), got " + shape_str(flow.shape()));
    if (!flow.same_shape(mask)) throw ShapeError("chronological_split: mask shape mismatch");
    if (train_ratio < 0.0 || val_ratio < 0.0 || train_ratio + val_ratio > 1.0 + 1e-12)
        throw ArgumentError("chronological_split: ratios must be non-negative and sum to <= 1");
    const long T = flow.extent(0);
    const long n_train = static_cast<long>(std::floor(train_ratio * static_cast<double>(T)));
    const long n_val = static_cast<long>(std::floor(val_ratio * static_cast<double>(T)));
    const long n_test = T - n_train - n_val;
    const long need = t1 + t2;
    if (n_train < need)
        throw DataError("chronological_split: training segment of " + std::to_string(n_train) +
                        " steps is shorter than t1+t2 = " + std::to_string(need));

    DataSplits out;
    out.train.raw = detail::slice_time(flow, 0, n_train);
    out.train.mask = detail::slice_time(mask, 0, n_train);
    out.val.raw = detail::slice_time(flow, n_train, n_train + n_val);
    out.val.mask = detail::slice_time(mask, n_train, n_train + n_val);
    out.test.raw = detail::slice_time(flow, n_train + n_val, T);
    out.test.mask = detail::slice_time(mask, n_train + n_val, T);
    (void)n_test;

    if (normalization == "zscore")
        out.stats = compute_zscore(out.train.raw, &out.train.mask);
    else
        out.stats = {0.0, 1.0};
    out.train.norm = zscore_apply(out.train.raw, out.stats);
    out.val.norm = zscore_apply(out.val.raw, out.stats);
    out.test.norm = zscore_apply(out.test.raw, out.stats);
    return out;
}

inline long window_count(const SplitView& split, long t1, long t2) {
    const long n = split.length() - t1 - t2 + 1;
    return n > 0 ? n : 0;
}

// ---- Adam ------------------------------------------------------------------

struct AdamState {
    std::vector<FlowTensor> m;
    std::vector<FlowTensor> v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline AdamState init_adam(const std::vector<Param*>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (Param* p : params) {
        s.m.push_back(FlowTensor::zeros(p->value.shape()));
        s.v.push_back(FlowTensor::zeros(p->value.shape()));
    }
    return s;
}

// Standard bias-corrected Adam on the accumulated gradients. Non-finite
// gradients abort the step before any parameter is touched.
inline void adam_step(const std::vector<Param*>& params, AdamState& state, double lr) {
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match params");
    for (Param* p : params)
        if (!p->grad.all_finite())
            throw NumericError("adam_step: non-finite gradient in '" + p->name + "'");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        FlowTensor& m = state.m[pi];
        FlowTensor& v = state.v[pi];
        for (long i = 0; i < p.value.numel(); ++i) {
            const double g = p.grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

// ---- metrics ----------------------------------------------------------------

struct ForecastReport {
    std::vector<double> mae;  // per horizon step 1..T2
    std::vector<double> rmse;
    std::vector<double> mape; // fraction, not percent
    double mae_all = 0.0;
    double rmse_all = 0.0;
    double mape_all = 0.0;
    long n_samples = 0;
    std::string config_hash;
};

constexpr double kMapeFloor = 1.0; // flow units; targets at or below are excluded

namespace detail {

struct MetricAccum {
    std::vector<double> abs_sum, sq_sum, cnt, ape_sum, ape_cnt;
    explicit MetricAccum(long t2)
        : abs_sum(static_cast<std::size_t>(t2), 0.0), sq_sum(static_cast<std::size_t>(t2), 0.0),
          cnt(static_cast<std::size_t>(t2), 0.0), ape_sum(static_cast<std::size_t>(t2), 0.0),
          ape_cnt(static_cast<std::size_t>(t2), 0.0) {}

    void add(long h, double truth, double pred, bool valid) {
        if (!valid) return;
        const auto hs = static_cast<std::size_t>(h);
        const double err = std::abs(truth - pred);
        abs_sum[hs] += err;
        sq_sum[hs] += err * err;
        cnt[hs] += 1.0;
        if (std::abs(truth) > kMapeFloor) {
            ape_sum[hs] += err / std::abs(truth);
            ape_cnt[hs] += 1.0;
        }
    }

    void merge(const MetricAccum& o) {
        for (std::size_t h = 0; h < cnt.size(); ++h) {
            abs_sum[h] += o.abs_sum[h];
            sq_sum[h] += o.sq_sum[h];
            cnt[h] += o.cnt[h];
            ape_sum[h] += o.ape_sum[h];
            ape_cnt[h] += o.ape_cnt[h];
        }
    }

    ForecastReport finalize(long n_samples) const {
        ForecastReport r;
        double a = 0.0, s = 0.0, c = 0.0, ap = 0.0, apc = 0.0;
        for (std::size_t h = 0; h < cnt.size(); ++h) {
            const double n = std::max(cnt[h], 1.0);
            r.mae.push_back(abs_sum[h] / n);
            r.rmse.push_back(std::sqrt(sq_sum[h] / n));
            r.mape.push_back(ape_cnt[h] > 0.0 ? ape_sum[h] / ape_cnt[h] : 0.0);
            a += abs_sum[h];
            s += sq_sum[h];
            c += cnt[h];
            ap += ape_sum[h];
            apc += ape_cnt[h];
        }
        r.mae_all = a / std::max(c, 1.0);
        r.rmse_all = std::sqrt(s / std::max(c, 1.0));
        r.mape_all = apc > 0.0 ? ap / apc : 0.0;
        r.n_samples = n_samples;
        return r;
    }
};

} // namespace detail

// Sliding-window evaluation against a denormalizing predictor. predict maps a
// normalized input window (T1,N,1) plus its window index to predictions
// (T2,N,1) in original units; it must tolerate concurrent calls. Windows are
// split across workers and the partial metric sums merged in worker order, so
// results are reproducible on a machine.
inline ForecastReport evaluate_windows(const SplitView& split, long t1, long t2,
                                       const std::function<FlowTensor(const FlowTensor&, long)>& predict) {
    const long n_windows = window_count(split, t1, t2);
    if (n_windows <= 0) throw DataError("evaluate: split shorter than t1+t2");
    const long N = split.raw.extent(1);
    const long workers = worker_count();
    std::vector<detail::MetricAccum> accs(static_cast<std::size_t>(workers), detail::MetricAccum(t2));
    std::exception_ptr error;
    std::mutex error_mutex;
    parallel_chunks(n_windows, workers, [&](long begin, long end, long wi) {
        try {
            detail::MetricAccum& acc = accs[static_cast<std::size_t>(wi)];
            for (long w = begin; w < end; ++w) {
                FlowTensor x = detail::slice_time(split.norm, w, w + t1);
                FlowTensor pred = predict(x, w);
                for (long h = 0; h < t2; ++h)
                    for (long n = 0; n < N; ++n) {
                        const long tt = w + t1 + h;
                        acc.add(h, split.raw.at(tt, n, 0L), pred.at(h, n, 0L), split.mask.at(tt, n, 0L) > 0.5);
                    }
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) error = std::current_exception();
        }
    });
    if (error) std::rethrow_exception(error);
    detail::MetricAccum total = std::move(accs.front());
    for (std::size_t w = 1; w < accs.size(); ++w) total.merge(accs[w]);
    return total.finalize(n_windows);
}

inline ForecastReport evaluate(STWaveModel& model, const SplitView& split, const ZScoreStats& stats) {
    return evaluate_windows(split, model.cfg.t1, model.cfg.t2, [&](const FlowTensor& x, long) {
        Tape tape;
        auto out = model.forward_sample(tape, x);
        return zscore_invert(tape.value(out.y), stats);
    });
}

// Historical average: every future step is the mean of the input window, per node.
inline FlowTensor ha_baseline(const FlowTensor& history, long t2) {
    if (history.rank() != 3) throw ShapeError("ha_baseline: expected (T1,N,1)");
    const long t1 = history.extent(0), N = history.extent(1);
    FlowTensor out({t2, N, 1});
    for (long n = 0; n < N; ++n) {
        double mean = 0.0;
        for (long t = 0; t < t1; ++t) mean += history.at(t, n, 0L);
        mean /= static_cast<double>(t1);
        for (long h = 0; h < t2; ++h) out.at(h, n, 0L) = mean;
    }
    return out;
}

inline ForecastReport evaluate_ha(const SplitView& split, const ZScoreStats& stats, long t1, long t2) {
    return evaluate_windows(split, t1, t2, [&](const FlowTensor& x_norm, long) {
        return ha_baseline(zscore_invert(x_norm, stats), t2);
    });
}

// ---- training loop -----------------------------------------------------------

struct TrainResult {
    ForecastReport test_report;
    std::vector<double> epoch_train_loss;
    std::vector<double> epoch_val_mae;
    long best_epoch = -1;
    double best_val_mae = std::numeric_limits<double>::infinity();
    double final_lr = 0.0;
    bool diverged = false;
    AdamState adam; // optimizer state at the end of the run
};

using EpochCallback = std::function<void(long epoch, double train_loss, double val_mae)>;

// Epoch loop with seeded window shuffling, plateau lr decay, early stopping
// and best-validation checkpoint restore before the test evaluation.
inline TrainResult train(STWaveModel& model, const DataSplits& data, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
    tc.validate();
    const long t1 = model.cfg.t1, t2 = model.cfg.t2;
    const long n_windows = window_count(data.train, t1, t2);
    if (n_windows <= 0) throw DataError("train: training split shorter than t1+t2");

    std::vector<Param*> params = model.store.all();
    AdamState adam = init_adam(params);
    Rng shuffle_rng(tc.seed);
    Rng dropout_rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<long> order(static_cast<std::size_t>(n_windows));
    std::iota(order.begin(), order.end(), 0L);

    TrainResult result;
    result.final_lr = tc.lr;
    double lr = tc.lr;
    long since_improve = 0, since_decay = 0;
    std::vector<FlowTensor> best_values;
    auto snapshot = [&]() {
        best_values.clear();
        for (Param* p : params) best_values.push_back(p->value);
    };
    auto restore = [&]() {
        if (best_values.empty()) return;
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
    };
    snapshot(); // epoch-0 weights are the fallback checkpoint

    // dropout draws from one generator stream and must stay single-threaded
    const long workers = model.cfg.dropout > 0.0 ? 1 : worker_count();
    std::unordered_map<const Param*, std::size_t> param_index;
    for (std::size_t i = 0; i < params.size(); ++i) param_index.emplace(params[i], i);

    for (long epoch = 0; epoch < tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0, loss_count = 0.0;
        bool aborted = false;
        for (long start = 0; start < n_windows && !aborted; start += tc.batch_size) {
            const long stop = std::min(start + tc.batch_size, n_windows);
            const long batch_n = stop - start;

            struct SampleJob {
                FlowTensor x, y, mask, y_low;
            };
            std::vector<SampleJob> jobs;
            jobs.reserve(static_cast<std::size_t>(batch_n));
            double total_count = 0.0;
            for (long bi = start; bi < stop; ++bi) {
                const long w = order[static_cast<std::size_t>(bi)];
                SampleJob job;
                job.x = detail::slice_time(data.train.norm, w, w + t1);
                job.y = detail::slice_time(data.train.norm, w + t1, w + t1 + t2);
                job.mask = detail::slice_time(data.train.mask, w + t1, w + t1 + t2);
                job.y_low = model.multi_supervision_target(job.y);
                total_count += std::max(job.mask.sum(), 1.0);
                jobs.push_back(std::move(job));
            }

            // data-parallel forward/backward into per-worker buffers, merged
            // in worker order so the update is bitwise reproducible
            std::vector<std::vector<FlowTensor>> worker_grads(
                static_cast<std::size_t>(workers), std::vector<FlowTensor>(params.size()));
            std::vector<double> worker_loss(static_cast<std::size_t>(workers), 0.0);
            std::vector<char> worker_failed(static_cast<std::size_t>(workers), 0);
            parallel_chunks(batch_n, workers, [&](long begin, long end, long wi) {
                auto& grads = worker_grads[static_cast<std::size_t>(wi)];
                try {
                    for (long j = begin; j < end; ++j) {
                        const SampleJob& job = jobs[static_cast<std::size_t>(j)];
                        Tape tape;
                        auto out = model.forward_sample(tape, job.x,
                                                        model.cfg.dropout > 0.0 ? &dropout_rng : nullptr);
                        LossTerms terms = sample_loss_terms(tape, out, job.y, job.y_low, model.cfg, &job.mask);
                        worker_loss[static_cast<std::size_t>(wi)] += tape.value(terms.sum)[0];
                        tape.backward_no_flush(terms.sum);
                        for (const auto& [id, p] : tape.param_bindings()) {
                            const FlowTensor& g = tape.grad(id);
                            if (g.empty()) continue;
                            FlowTensor& slot = grads[param_index.at(p)];
                            if (slot.empty()) slot = FlowTensor::zeros(g.shape());
                            for (long i = 0; i < g.numel(); ++i) slot[i] += g[i];
                        }
                    }
                } catch (const NumericError&) {
                    worker_failed[static_cast<std::size_t>(wi)] = 1;
                }
            });

            double batch_sum = 0.0;
            bool failed = false;
            for (long wi = 0; wi < workers; ++wi) {
                batch_sum += worker_loss[static_cast<std::size_t>(wi)];
                failed = failed || worker_failed[static_cast<std::size_t>(wi)] != 0;
            }
            const double loss_value = batch_sum / std::max(total_count, 1.0);
            if (failed || !std::isfinite(loss_value)) {
                result.diverged = true;
                aborted = true;
                break;
            }
            model.store.zero_grads();
            const double inv_count = 1.0 / std::max(total_count, 1.0);
            for (long wi = 0; wi < workers; ++wi)
                for (std::size_t pi = 0; pi < params.size(); ++pi) {
                    const FlowTensor& g = worker_grads[static_cast<std::size_t>(wi)][pi];
                    if (g.empty()) continue;
                    for (long i = 0; i < g.numel(); ++i) params[pi]->grad[i] += g[i] * inv_count;
                }
            try {
                adam_step(params, adam, lr);
            } catch (const NumericError&) {
                result.diverged = true;
                aborted = true;
                break;
            }
            loss_sum += loss_value * total_count;
            loss_count += total_count;
        }
        if (aborted) break;
        result.epoch_train_loss.push_back(loss_sum / std::max(loss_count, 1.0));

        double val_mae;
        if (window_count(data.val, t1, t2) > 0)
            val_mae = evaluate(model, data.val, data.stats).mae_all;
        else
            val_mae = result.epoch_train_loss.back();
        result.epoch_val_mae.push_back(val_mae);
        if (on_epoch) on_epoch(epoch, result.epoch_train_loss.back(), val_mae);

        if (val_mae < result.best_val_mae) {
            result.best_val_mae = val_mae;
            result.best_epoch = epoch;
            snapshot();
            since_improve = 0;
            since_decay = 0;
        } else {
            ++since_improve;
            ++since_decay;
            if (since_decay >= tc.decay_patience) {
                lr *= tc.lr_decay;
                since_decay = 0;
            }
            if (since_improve >= tc.early_stop_patience) break;
        }
    }

    restore();
    result.final_lr = lr;
    result.adam = std::move(adam);
    if (window_count(data.test, t1, t2) > 0) {
        try {
            result.test_report = evaluate(model, data.test, data.stats);
        } catch (const NumericError&) {
            if (!result.diverged) throw; // only a diverged run may lack a usable checkpoint
        }
    }
    return result;
}

} // namespace stwave
