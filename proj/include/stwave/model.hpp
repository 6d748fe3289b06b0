#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stwave/attention.hpp"
#include "stwave/init.hpp"
#include "stwave/wavelet.hpp"

namespace stwave {

struct STWaveConfig {
    long t1 = 12;  // input steps
    long t2 = 12;  // forecast steps
    long n_heads = 8;
    long head_dim = 16;
    long n_layers = 2;
    long kernel = 2;   // J
    long dilation = 1; // c
    std::string wavelet = "haar";
    double sample_base = 2.0;
    double dropout = 0.0;
    bool residuals = true;

    // ablation switches (paper variants -MS, -DF, -F, -T, -S)
    bool disable_multi_supervision = false;
    bool disable_disentangle = false;
    bool additive_fusion = false;
    bool disable_temporal = false;
    bool disable_spatial = false;

    long dim() const { return n_heads * head_dim; }

    void validate() const {
        if (n_heads < 1 || head_dim < 1) throw ArgumentError("config: heads and head_dim must be >= 1");
        if (n_layers < 1) throw ArgumentError("config: need at least one encoder layer");
        if (kernel < 1) throw ArgumentError("config: kernel must be >= 1");
        if (dilation < 1) throw ArgumentError("config: dilation must be >= 1");
        if (t1 < 2 || t2 < 1) throw ArgumentError("config: horizons too short");
        if (t1 % 2 != 0 || t2 % 2 != 0) throw ArgumentError("config: t1 and t2 must be even for the wavelet path");
        if (sample_base <= 1.0) throw ArgumentError("config: sample_base must exceed 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ArgumentError("config: dropout outside [0,1)");
        WaveletPair::make(wavelet);
    }
};

// Owns every learnable tensor, in deterministic registration order.
class ParamStore {
public:
    Param& add(std::string name, FlowTensor init) {
        if (by_name_.count(name)) throw ArgumentError("duplicate parameter '" + name + "'");
        params_.push_back(std::make_unique<Param>(name, std::move(init)));
        by_name_.emplace(std::move(name), params_.back().get());
        return *params_.back();
    }

    Param* find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    std::vector<Param*> all() const {
        std::vector<Param*> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.get());
        return out;
    }

    long count() const { return static_cast<long>(params_.size()); }

    long total_entries() const {
        long n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

    void zero_grads() {
        for (const auto& p : params_) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, Param*> by_name_;
};

// Causal 1-D convolution over time with channel mixing and dilation c:
// out[t] = relu(bias + sum_j theta[j] . x[t - c*j]), zero-padded on the left.
inline Var dilated_causal_conv(Tape& t, Var x, Var theta, Var bias, long dilation) {
    const FlowTensor& X = t.value(x);
    const FlowTensor& W = t.value(theta);
    const FlowTensor& B = t.value(bias);
    if (X.rank() != 3) throw ShapeError("dilated_causal_conv: expected (T,N,d) input");
    if (W.rank() != 3 || W.extent(1) != X.extent(2))
        throw ShapeError("dilated_causal_conv: kernel shape " + shape_str(W.shape()) +
                         " does not match input " + shape_str(X.shape()));
    const long T = X.extent(0), N = X.extent(1);
    const long J = W.extent(0), din = W.extent(1), dout = W.extent(2);
    if (B.numel() != dout) throw ShapeError("dilated_causal_conv: bias length mismatch");

    using MatMap = Tape::MatMap;
    using ConstMatMap = Tape::ConstMatMap;

    FlowTensor out({T, N, dout});
    {
        MatMap omap(out.data(), T * N, dout);
        omap.rowwise() = Eigen::Map<const Eigen::RowVectorXd>(B.data(), dout);
        for (long j = 0; j < J; ++j) {
            const long shift = dilation * j;
            if (shift >= T) continue;
            const long rows = (T - shift) * N;
            MatMap(out.data() + shift * N * dout, rows, dout).noalias() +=
                ConstMatMap(X.data(), rows, din) * ConstMatMap(W.data() + j * din * dout, din, dout);
        }
        omap = omap.cwiseMax(0.0);
    }

    const VarId ix = x.id, iw = theta.id, ib = bias.id;
    const bool ng = t.needs_grad(ix) || t.needs_grad(iw) || t.needs_grad(ib);
    return t.push(std::move(out), ng, [ix, iw, ib, dilation, T, N, J, din, dout](Tape& tp, VarId self) {
        const FlowTensor& G = tp.grad(self);
        const FlowTensor& Y = tp.value(self);
        const FlowTensor& X = tp.value(ix);
        const FlowTensor& W = tp.value(iw);
        // relu gate applied to the incoming gradient
        FlowTensor gpre(G.shape());
        for (long i = 0; i < G.numel(); ++i) gpre[i] = Y[i] > 0.0 ? G[i] : 0.0;
        FlowTensor gx(X.shape()), gw(W.shape()), gb({dout});
        Eigen::Map<Eigen::RowVectorXd>(gb.data(), dout) = ConstMatMap(gpre.data(), T * N, dout).colwise().sum();
        for (long j = 0; j < J; ++j) {
            const long shift = dilation * j;
            if (shift >= T) continue;
            const long rows = (T - shift) * N;
            ConstMatMap gmap(gpre.data() + shift * N * dout, rows, dout);
            MatMap(gw.data() + j * din * dout, din, dout).noalias() +=
                ConstMatMap(X.data(), rows, din).transpose() * gmap;
            MatMap(gx.data(), rows, din).noalias() += gmap * ConstMatMap(W.data() + j * din * dout, din, dout).transpose();
        }
        tp.accumulate(ix, gx);
        tp.accumulate(iw, gw);
        tp.accumulate(ib, gb);
    });
}

struct ChannelLayer {
    AttentionHeads temporal;          // low channel only
    Param* conv_theta = nullptr;      // high channel only
    Param* conv_bias = nullptr;
    AttentionHeads spatial;
    Param* projector = nullptr;
};

struct EncoderLayer {
    ChannelLayer low;
    ChannelLayer high;
};

// The full network: disentangling flow layer, L dual-channel encoder layers,
// frequency-specific decoder with multi-supervision head.
class STWaveModel {
public:
    STWaveConfig cfg;
    ParamStore store;
    WaveletPair pair;

    Param* lift_low_w = nullptr;
    Param* lift_low_b = nullptr;
    Param* lift_high_w = nullptr;
    Param* lift_high_b = nullptr;
    std::vector<EncoderLayer> layers;
    Param* scale_spa = nullptr;
    Param* scale_tem = nullptr;
    Param* pred_low_w = nullptr;
    Param* pred_low_b = nullptr;
    Param* pred_high_w = nullptr;
    Param* pred_high_b = nullptr;
    AttentionHeads fuse_self;
    AttentionHeads fuse_cross;
    Param* out_flow_w = nullptr;
    Param* out_flow_b = nullptr;
    Param* out_low_w = nullptr;
    Param* out_low_b = nullptr;

    Graph spatial;
    Graph temporal;
    std::shared_ptr<const std::vector<std::vector<long>>> nbrs;
    GraphPE pe_spa;
    GraphPE pe_tem;
    bool graphs_attached = false;

    STWaveModel(STWaveConfig config, unsigned long seed) : cfg(std::move(config)), pair(WaveletPair::make(cfg.wavelet)) {
        cfg.validate();
        Rng rng(seed);
        const long d = cfg.dim();
        lift_low_w = &store.add("lift.low.w", glorot_uniform({1, d}, rng));
        lift_low_b = &store.add("lift.low.b", FlowTensor({d}));
        lift_high_w = &store.add("lift.high.w", glorot_uniform({1, d}, rng));
        lift_high_b = &store.add("lift.high.b", FlowTensor({d}));
        layers.resize(static_cast<std::size_t>(cfg.n_layers));
        for (long l = 0; l < cfg.n_layers; ++l) {
            const std::string base = "enc" + std::to_string(l);
            EncoderLayer& layer = layers[static_cast<std::size_t>(l)];
            layer.low.temporal = make_heads(base + ".low.tatt", rng);
            layer.low.spatial = make_heads(base + ".low.esgat", rng);
            layer.low.projector = &store.add(base + ".low.esgat.p", glorot_uniform({d, 1}, rng).reshaped({d}));
            layer.high.conv_theta = &store.add(base + ".high.conv.theta", glorot_uniform({cfg.kernel, d, d}, rng));
            layer.high.conv_bias = &store.add(base + ".high.conv.b", FlowTensor({d}));
            layer.high.spatial = make_heads(base + ".high.esgat", rng);
            layer.high.projector = &store.add(base + ".high.esgat.p", glorot_uniform({d, 1}, rng).reshaped({d}));
        }
        scale_spa = &store.add("pe.spa.s", FlowTensor::full({1}, -1.0));
        scale_tem = &store.add("pe.tem.s", FlowTensor::full({1}, -1.0));
        pred_low_w = &store.add("dec.pred.low.w", glorot_uniform({cfg.t1, cfg.t2}, rng));
        pred_low_b = &store.add("dec.pred.low.b", FlowTensor({cfg.t2}));
        pred_high_w = &store.add("dec.pred.high.w", glorot_uniform({cfg.t1, cfg.t2}, rng));
        pred_high_b = &store.add("dec.pred.high.b", FlowTensor({cfg.t2}));
        fuse_self = make_heads("dec.fuse.self", rng);
        fuse_cross = make_heads("dec.fuse.cross", rng);
        out_flow_w = &store.add("dec.out.flow.w", glorot_uniform({d, 1}, rng));
        out_flow_b = &store.add("dec.out.flow.b", FlowTensor({1}));
        out_low_w = &store.add("dec.out.low.w", glorot_uniform({d, 1}, rng));
        out_low_b = &store.add("dec.out.low.b", FlowTensor({1}));
    }

    // Graphs are dataset-level; eigenbases are computed once here and treated
    // as constants thereafter (only the scales stay learnable). Precomputed
    // bases (e.g. from the on-disk cache) skip the decomposition.
    void attach_graphs(Graph spatial_graph, Graph temporal_graph, const EigenBasis* spa_basis = nullptr,
                       const EigenBasis* tem_basis = nullptr) {
        spatial = std::move(spatial_graph);
        temporal = std::move(temporal_graph);
        spatial.validate();
        temporal.validate();
        if (spatial.n_nodes != temporal.n_nodes)
            throw ShapeError("attach_graphs: spatial and temporal node counts differ");
        nbrs = std::make_shared<const std::vector<std::vector<long>>>(neighbor_lists(spatial));
        const long d_pe = std::min(cfg.dim(), spatial.n_nodes);
        if (spa_basis && spa_basis->dim() == d_pe && spa_basis->n_nodes() == spatial.n_nodes)
            pe_spa = graph_pe_from_basis(*spa_basis, *scale_spa, cfg.dim());
        else
            pe_spa = graph_positional_encoding(spatial, d_pe, *scale_spa, cfg.dim());
        if (tem_basis && tem_basis->dim() == d_pe && tem_basis->n_nodes() == temporal.n_nodes)
            pe_tem = graph_pe_from_basis(*tem_basis, *scale_tem, cfg.dim());
        else
            pe_tem = graph_positional_encoding(temporal, d_pe, *scale_tem, cfg.dim());
        graphs_attached = true;
    }

    long n_nodes() const { return spatial.n_nodes; }

    struct Outputs {
        Var y;     // (T2, N, 1)
        Var y_low; // (T2, N, 1)
    };

    // Disentangling flow layer (or the plain lift under the -DF ablation).
    Disentangled lift_input(Tape& t, Var input) {
        if (cfg.disable_disentangle) {
            Var low = t.add(t.matmul(input, t.param(*lift_low_w)), t.param(*lift_low_b));
            Var high = t.add(t.matmul(input, t.param(*lift_high_w)), t.param(*lift_high_b));
            return {low, high};
        }
        return disentangle(t, input, pair, *lift_low_w, *lift_low_b, *lift_high_w, *lift_high_b);
    }

    // L stacked dual-channel layers: temporal attention / dilated conv, then
    // spectral attention, each residual-wrapped.
    std::pair<Var, Var> encode_pair(Tape& t, Var low, Var high, Rng* dropout_rng = nullptr) {
        for (EncoderLayer& layer : layers) {
            if (!cfg.disable_temporal) {
                low = wrap(t, low, maybe_dropout(t, temporal_attention(t, low, layer.low.temporal), dropout_rng));
                Var conv = dilated_causal_conv(t, high, t.param(*layer.high.conv_theta),
                                               t.param(*layer.high.conv_bias), cfg.dilation);
                high = wrap(t, high, maybe_dropout(t, conv, dropout_rng));
            }
            if (!cfg.disable_spatial) {
                Var sl = esgat(t, low, pe_spa, pe_tem, nbrs, layer.low.spatial, *layer.low.projector,
                               cfg.sample_base);
                low = wrap(t, low, maybe_dropout(t, sl, dropout_rng));
                Var sh = esgat(t, high, pe_spa, pe_tem, nbrs, layer.high.spatial, *layer.high.projector,
                               cfg.sample_base);
                high = wrap(t, high, maybe_dropout(t, sh, dropout_rng));
            }
        }
        return {low, high};
    }

    // Per-channel temporal predictor, fusion attention (or addition under -F)
    // and the two output heads.
    Outputs decode_pair(Tape& t, Var enc_low, Var enc_high) {
        Var yl = predictor(t, enc_low, *pred_low_w, *pred_low_b);
        Var yh = predictor(t, enc_high, *pred_high_w, *pred_high_b);
        Var fused = cfg.additive_fusion ? t.add(yl, yh) : fusion_attention(t, yl, yh, fuse_self, fuse_cross);
        Var y = t.add(t.matmul(fused, t.param(*out_flow_w)), t.param(*out_flow_b));
        Var y_low = t.add(t.matmul(yl, t.param(*out_low_w)), t.param(*out_low_b));
        return {y, y_low};
    }

    // One sample (T1, N, 1) through the whole network. dropout_rng enables the
    // configured dropout rate (training only); null keeps evaluation deterministic.
    Outputs forward_sample(Tape& t, const FlowTensor& x, Rng* dropout_rng = nullptr) {
        if (!graphs_attached) throw ArgumentError("forward: attach_graphs first");
        if (x.rank() != 3 || x.extent(0) != cfg.t1 || x.extent(1) != n_nodes() || x.extent(2) != 1)
            throw ShapeError("forward: expected (" + std::to_string(cfg.t1) + "," +
                             std::to_string(n_nodes()) + ",1), got " + shape_str(x.shape()));
        Disentangled de = lift_input(t, t.constant(x));
        auto [low, high] = encode_pair(t, de.low, de.high, dropout_rng);
        return decode_pair(t, low, high);
    }

    FlowTensor multi_supervision_target(const FlowTensor& y_future) const {
        return low_target(y_future, pair);
    }

private:
    AttentionHeads make_heads(const std::string& prefix, Rng& rng) {
        const long d = cfg.dim();
        AttentionHeads h;
        h.n_heads = cfg.n_heads;
        h.head_dim = cfg.head_dim;
        h.wq = &store.add(prefix + ".wq", glorot_uniform({d, d}, rng));
        h.wk = &store.add(prefix + ".wk", glorot_uniform({d, d}, rng));
        h.wv = &store.add(prefix + ".wv", glorot_uniform({d, d}, rng));
        h.wo = &store.add(prefix + ".wo", glorot_uniform({d, d}, rng));
        return h;
    }

    Var wrap(Tape& t, Var x, Var sub) { return cfg.residuals ? t.add(x, sub) : sub; }

    Var maybe_dropout(Tape& t, Var x, Rng* rng) {
        if (rng == nullptr || cfg.dropout <= 0.0) return x;
        const FlowTensor& v = t.value(x);
        FlowTensor mask(v.shape());
        std::bernoulli_distribution keep(1.0 - cfg.dropout);
        const double scale = 1.0 / (1.0 - cfg.dropout);
        for (long i = 0; i < mask.numel(); ++i) mask[i] = keep(*rng) ? scale : 0.0;
        return t.mul(x, t.constant(std::move(mask)));
    }

    // Dense map of the time axis T1 -> T2, shared across nodes and channels.
    Var predictor(Tape& t, Var x, Param& w, Param& b) {
        Var xt = t.permute(x, {1, 2, 0});                       // (N, d, T1)
        Var yt = t.add(t.matmul(xt, t.param(w)), t.param(b));   // (N, d, T2) + bias over T2
        return t.permute(yt, {2, 0, 1});                        // (T2, N, d)
    }
};

// Multi-supervised L1 objective for one sample: mean over T2 x N of
// |y - y_hat| + |y_low - y_low_hat|; the supervision term drops under the
// -MS ablation. mask (optional, (T2,N,1) of 0/1) excludes missing targets.
struct LossTerms {
    Var sum;      // scalar tape node
    double count; // valid target entries
};

inline LossTerms sample_loss_terms(Tape& t, const STWaveModel::Outputs& out, const FlowTensor& y_true,
                                   const FlowTensor& y_low_true, const STWaveConfig& cfg,
                                   const FlowTensor* mask = nullptr) {
    if (!t.value(out.y).same_shape(y_true))
        throw ShapeError("loss: prediction shape " + shape_str(t.value(out.y).shape()) +
                         " vs target " + shape_str(y_true.shape()));
    Var diff = t.abs(t.sub(out.y, t.constant(y_true)));
    double count = static_cast<double>(y_true.numel());
    if (mask) {
        Tape::check_suffix(y_true.shape(), mask->shape(), "loss mask");
        diff = t.mul(diff, t.constant(*mask));
        count = mask->sum();
    }
    Var total = t.sum_all(diff);
    if (!cfg.disable_multi_supervision) {
        if (!t.value(out.y_low).same_shape(y_low_true))
            throw ShapeError("loss: low-frequency target shape mismatch");
        Var diff_low = t.abs(t.sub(out.y_low, t.constant(y_low_true)));
        if (mask) diff_low = t.mul(diff_low, t.constant(*mask));
        total = t.add(total, t.sum_all(diff_low));
    }
    return {total, std::max(count, 1.0)};
}

inline Var sample_loss(Tape& t, const STWaveModel::Outputs& out, const FlowTensor& y_true,
                       const FlowTensor& y_low_true, const STWaveConfig& cfg,
                       const FlowTensor* mask = nullptr) {
    LossTerms terms = sample_loss_terms(t, out, y_true, y_low_true, cfg, mask);
    return t.scale(terms.sum, 1.0 / terms.count);
}

// Batched evaluation-mode forward: (B,T1,N,1) -> predictions and low-frequency
// predictions, each (B,T2,N,1). Samples are independent.
inline std::pair<FlowTensor, FlowTensor> forward_batch(STWaveModel& model, const FlowTensor& x) {
    if (x.rank() != 4) throw ShapeError("forward_batch: expected (B,T1,N,1)");
    const long B = x.extent(0), T1 = x.extent(1), N = x.extent(2);
    const long T2 = model.cfg.t2;
    FlowTensor y({B, T2, N, 1}), y_low({B, T2, N, 1});
    FlowTensor sample({T1, N, 1});
    for (long b = 0; b < B; ++b) {
        std::copy(x.data() + b * T1 * N, x.data() + (b + 1) * T1 * N, sample.data());
        Tape tape;
        auto out = model.forward_sample(tape, sample);
        const FlowTensor& yv = tape.value(out.y);
        const FlowTensor& lv = tape.value(out.y_low);
        std::copy(yv.data(), yv.data() + T2 * N, y.data() + b * T2 * N);
        std::copy(lv.data(), lv.data() + T2 * N, y_low.data() + b * T2 * N);
    }
    return {std::move(y), std::move(y_low)};
}

} // namespace stwave
