#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "stwave/graph.hpp"
#include "stwave/positional.hpp"
#include "stwave/tape.hpp"

namespace stwave {

// Multi-head projection set; model dim d = n_heads * head_dim, all projections d x d.
struct AttentionHeads {
    long n_heads = 1;
    long head_dim = 1;
    Param* wq = nullptr;
    Param* wk = nullptr;
    Param* wv = nullptr;
    Param* wo = nullptr;

    long dim() const { return n_heads * head_dim; }
};

inline FlowTensor causal_mask(long t_steps) {
    FlowTensor m({t_steps, t_steps});
    for (long q = 0; q < t_steps; ++q)
        for (long k = 0; k <= q; ++k) m.at(q, k) = 1.0;
    return m;
}

// Adjacency neighbor sets (self excluded); isolated nodes get a self-loop.
inline std::vector<std::vector<long>> neighbor_lists(const Graph& g) {
    std::vector<std::vector<long>> nbrs(static_cast<std::size_t>(g.n_nodes));
    for (long i = 0; i < g.n_nodes; ++i) {
        for (long j = 0; j < g.n_nodes; ++j)
            if (j != i && g.adjacency.at(i, j) > 0.0) nbrs[static_cast<std::size_t>(i)].push_back(j);
        if (nbrs[static_cast<std::size_t>(i)].empty()) nbrs[static_cast<std::size_t>(i)].push_back(i);
    }
    return nbrs;
}

// Fused scaled-dot-product attention over already-projected q/k/v rows:
// per (batch, head, query) the scores, softmax and weighted value sum run in
// one pass with no intermediate tensors. mask (optional, (Lq, Lk) of 0/1)
// excludes keys exactly: masked keys are never read, so causality is bitwise.
// head_avg_probs_out, when given, receives the head-averaged attention
// weights as a (B, Lq, Lk) tensor.
inline Var attention_core_op(Tape& t, Var q, Var k, Var v, long e, const FlowTensor* mask = nullptr,
                             FlowTensor* head_avg_probs_out = nullptr) {
    const FlowTensor& Q = t.value(q);
    const FlowTensor& K = t.value(k);
    const FlowTensor& V = t.value(v);
    if (Q.rank() != 3 || K.rank() != 3 || !K.same_shape(V))
        throw ShapeError("attention_core: expected (B,L,d) inputs");
    const long B = Q.extent(0), Lq = Q.extent(1), d = Q.extent(2);
    const long Lk = K.extent(1);
    if (K.extent(0) != B || K.extent(2) != d)
        throw ShapeError("attention_core: query/key shapes disagree: " + shape_str(Q.shape()) + " vs " +
                         shape_str(K.shape()));
    if (d % e != 0) throw ShapeError("attention_core: feature dim not divisible by head count");
    const long dh = d / e;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    FlowTensor mask_copy;
    if (mask) {
        if (mask->rank() != 2 || mask->extent(0) != Lq || mask->extent(1) != Lk)
            throw ShapeError("attention_core: mask must be (Lq, Lk)");
        mask_copy = *mask;
        for (long i = 0; i < Lq; ++i) {
            bool any = false;
            for (long j = 0; j < Lk; ++j) any = any || mask_copy.at(i, j) > 0.5;
            if (!any) throw NumericError("attention_core: fully masked query row " + std::to_string(i));
        }
    }
    const bool masked = mask != nullptr;

    FlowTensor out({B, Lq, d});
    if (head_avg_probs_out) *head_avg_probs_out = FlowTensor({B, Lq, Lk});
    {
        std::vector<double> w(static_cast<std::size_t>(Lk));
        const double head_w = 1.0 / static_cast<double>(e);
        for (long b = 0; b < B; ++b)
            for (long h = 0; h < e; ++h)
                for (long i = 0; i < Lq; ++i) {
                    const double* qrow = Q.data() + (b * Lq + i) * d + h * dh;
                    double mx = -std::numeric_limits<double>::infinity();
                    for (long j = 0; j < Lk; ++j) {
                        if (masked && mask_copy.at(i, j) <= 0.5) continue;
                        const double* krow = K.data() + (b * Lk + j) * d + h * dh;
                        double s = 0.0;
                        for (long c = 0; c < dh; ++c) s += qrow[c] * krow[c];
                        s *= inv_sqrt;
                        w[static_cast<std::size_t>(j)] = s;
                        mx = std::max(mx, s);
                    }
                    double sum = 0.0;
                    for (long j = 0; j < Lk; ++j) {
                        if (masked && mask_copy.at(i, j) <= 0.5) {
                            w[static_cast<std::size_t>(j)] = 0.0;
                            continue;
                        }
                        double& wj = w[static_cast<std::size_t>(j)];
                        wj = std::exp(wj - mx);
                        sum += wj;
                    }
                    const double inv_sum = 1.0 / sum;
                    double* orow = out.data() + (b * Lq + i) * d + h * dh;
                    double* prow =
                        head_avg_probs_out ? head_avg_probs_out->data() + (b * Lq + i) * Lk : nullptr;
                    for (long j = 0; j < Lk; ++j) {
                        const double wj = w[static_cast<std::size_t>(j)] * inv_sum;
                        if (wj == 0.0) continue;
                        const double* vrow = V.data() + (b * Lk + j) * d + h * dh;
                        for (long c = 0; c < dh; ++c) orow[c] += wj * vrow[c];
                        if (prow) prow[j] += head_w * wj;
                    }
                }
    }

    const VarId iq = q.id, ik = k.id, iv = v.id;
    const bool ng = t.needs_grad(iq) || t.needs_grad(ik) || t.needs_grad(iv);
    return t.push(std::move(out), ng,
                  [iq, ik, iv, e, B, Lq, Lk, d, dh, inv_sqrt, masked,
                   mask_copy = std::move(mask_copy)](Tape& tp, VarId self) {
                      const FlowTensor& G = tp.grad(self);
                      const FlowTensor& Q = tp.value(iq);
                      const FlowTensor& K = tp.value(ik);
                      const FlowTensor& V = tp.value(iv);
                      FlowTensor gq(Q.shape()), gk(K.shape()), gv(V.shape());
                      std::vector<double> w(static_cast<std::size_t>(Lk)), a(static_cast<std::size_t>(Lk));
                      for (long b = 0; b < B; ++b)
                          for (long h = 0; h < e; ++h)
                              for (long i = 0; i < Lq; ++i) {
                                  const double* qrow = Q.data() + (b * Lq + i) * d + h * dh;
                                  const double* grow = G.data() + (b * Lq + i) * d + h * dh;
                                  double mx = -std::numeric_limits<double>::infinity();
                                  for (long j = 0; j < Lk; ++j) {
                                      if (masked && mask_copy.at(i, j) <= 0.5) continue;
                                      const double* krow = K.data() + (b * Lk + j) * d + h * dh;
                                      double s = 0.0;
                                      for (long c = 0; c < dh; ++c) s += qrow[c] * krow[c];
                                      w[static_cast<std::size_t>(j)] = s * inv_sqrt;
                                      mx = std::max(mx, w[static_cast<std::size_t>(j)]);
                                  }
                                  double sum = 0.0;
                                  for (long j = 0; j < Lk; ++j) {
                                      if (masked && mask_copy.at(i, j) <= 0.5) {
                                          w[static_cast<std::size_t>(j)] = 0.0;
                                          continue;
                                      }
                                      double& wj = w[static_cast<std::size_t>(j)];
                                      wj = std::exp(wj - mx);
                                      sum += wj;
                                  }
                                  const double inv_sum = 1.0 / sum;
                                  double dot = 0.0;
                                  for (long j = 0; j < Lk; ++j) {
                                      const std::size_t js = static_cast<std::size_t>(j);
                                      w[js] *= inv_sum;
                                      if (w[js] == 0.0) {
                                          a[js] = 0.0;
                                          continue;
                                      }
                                      const double* vrow = V.data() + (b * Lk + j) * d + h * dh;
                                      double am = 0.0;
                                      for (long c = 0; c < dh; ++c) am += vrow[c] * grow[c];
                                      a[js] = am;
                                      dot += w[js] * am;
                                      double* gvrow = gv.data() + (b * Lk + j) * d + h * dh;
                                      for (long c = 0; c < dh; ++c) gvrow[c] += w[js] * grow[c];
                                  }
                                  double* gqrow = gq.data() + (b * Lq + i) * d + h * dh;
                                  for (long j = 0; j < Lk; ++j) {
                                      const std::size_t js = static_cast<std::size_t>(j);
                                      if (w[js] == 0.0) continue;
                                      const double ds = w[js] * (a[js] - dot) * inv_sqrt;
                                      const double* krow = K.data() + (b * Lk + j) * d + h * dh;
                                      double* gkrow = gk.data() + (b * Lk + j) * d + h * dh;
                                      for (long c = 0; c < dh; ++c) {
                                          gqrow[c] += ds * krow[c];
                                          gkrow[c] += ds * qrow[c];
                                      }
                                  }
                              }
                      tp.accumulate(iq, gq);
                      tp.accumulate(ik, gk);
                      tp.accumulate(iv, gv);
                  });
}

// Scaled dot-product attention with head split/concat and output projection.
// q: (B, Lq, d) or (Lq, d); k, v likewise over Lk. mask is (Lq, Lk).
inline Var self_attention(Tape& t, Var q, Var k, Var v, const AttentionHeads& heads,
                          const FlowTensor* mask = nullptr) {
    const long d = t.value(q).extent(t.value(q).rank() - 1);
    if (d != heads.dim()) throw ShapeError("self_attention: feature dim does not match heads");
    const bool flat = t.value(q).rank() == 2;
    if (flat) {
        q = t.reshape(q, {1, t.value(q).extent(0), d});
        k = t.reshape(k, {1, t.value(k).extent(0), d});
        v = t.reshape(v, {1, t.value(v).extent(0), d});
    }
    Var qp = t.matmul(q, t.param(*heads.wq));
    Var kp = t.matmul(k, t.param(*heads.wk));
    Var vp = t.matmul(v, t.param(*heads.wv));
    Var ctx = attention_core_op(t, qp, kp, vp, heads.n_heads, mask);
    Var out = t.matmul(ctx, t.param(*heads.wo));
    if (flat) out = t.reshape(out, {t.value(out).extent(1), d});
    return out;
}

// Masked self-attention along the time axis, per node. Position t attends to
// positions <= t.
inline Var temporal_attention(Tape& t, Var x, const AttentionHeads& heads) {
    const FlowTensor& v = t.value(x);
    if (v.rank() != 3) throw ShapeError("temporal_attention: expected (T,N,d)");
    const long T = v.extent(0);
    Var xn = t.permute(x, {1, 0, 2}); // (N, T, d)
    FlowTensor mask = causal_mask(T);
    Var out = self_attention(t, xn, xn, xn, heads, &mask);
    return t.permute(out, {1, 0, 2});
}

// Fused per-node attention over a fixed neighbor set: for every (t, n, head),
// softmax over q.k/sqrt(dh) against the node's neighbors, weighted sum of
// their values. Inputs are the already-projected Q, K, V of shape (T, N, d).
inline Var neighborhood_attention_op(Tape& t, Var q, Var k, Var v,
                                     std::shared_ptr<const std::vector<std::vector<long>>> nbrs, long e) {
    const FlowTensor& Q = t.value(q);
    const FlowTensor& K = t.value(k);
    const FlowTensor& V = t.value(v);
    if (Q.rank() != 3 || !Q.same_shape(K) || !Q.same_shape(V))
        throw ShapeError("neighborhood_attention: expected matching (T,N,d) inputs");
    const long T = Q.extent(0), N = Q.extent(1), d = Q.extent(2);
    const long dh = d / e;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    auto run_forward = [=](const FlowTensor& Qv, const FlowTensor& Kv, const FlowTensor& Vv, FlowTensor& out,
                           std::vector<double>& scratch_w) {
        for (long tt = 0; tt < T; ++tt)
            for (long n = 0; n < N; ++n) {
                const auto& nb = (*nbrs)[static_cast<std::size_t>(n)];
                const long deg = static_cast<long>(nb.size());
                for (long h = 0; h < e; ++h) {
                    const double* qrow = Qv.data() + (tt * N + n) * d + h * dh;
                    scratch_w.resize(static_cast<std::size_t>(deg));
                    double mx = -std::numeric_limits<double>::infinity();
                    for (long mi = 0; mi < deg; ++mi) {
                        const double* krow = Kv.data() + (tt * N + nb[static_cast<std::size_t>(mi)]) * d + h * dh;
                        double s = 0.0;
                        for (long c = 0; c < dh; ++c) s += qrow[c] * krow[c];
                        s *= inv_sqrt;
                        scratch_w[static_cast<std::size_t>(mi)] = s;
                        mx = std::max(mx, s);
                    }
                    double sum = 0.0;
                    for (long mi = 0; mi < deg; ++mi) {
                        double& w = scratch_w[static_cast<std::size_t>(mi)];
                        w = std::exp(w - mx);
                        sum += w;
                    }
                    double* orow = out.data() + (tt * N + n) * d + h * dh;
                    for (long mi = 0; mi < deg; ++mi) {
                        const double w = scratch_w[static_cast<std::size_t>(mi)] / sum;
                        const double* vrow = Vv.data() + (tt * N + nb[static_cast<std::size_t>(mi)]) * d + h * dh;
                        for (long c = 0; c < dh; ++c) orow[c] += w * vrow[c];
                    }
                }
            }
    };

    FlowTensor out({T, N, d});
    std::vector<double> scratch;
    run_forward(Q, K, V, out, scratch);

    const VarId iq = q.id, ik = k.id, iv = v.id;
    const bool ng = t.needs_grad(iq) || t.needs_grad(ik) || t.needs_grad(iv);
    return t.push(std::move(out), ng, [iq, ik, iv, nbrs, e, T, N, d, dh, inv_sqrt](Tape& tp, VarId self) {
        const FlowTensor& G = tp.grad(self);
        const FlowTensor& Qv = tp.value(iq);
        const FlowTensor& Kv = tp.value(ik);
        const FlowTensor& Vv = tp.value(iv);
        FlowTensor gq(Qv.shape()), gk(Kv.shape()), gv(Vv.shape());
        std::vector<double> w, a;
        for (long tt = 0; tt < T; ++tt)
            for (long n = 0; n < N; ++n) {
                const auto& nb = (*nbrs)[static_cast<std::size_t>(n)];
                const long deg = static_cast<long>(nb.size());
                for (long h = 0; h < e; ++h) {
                    const double* qrow = Qv.data() + (tt * N + n) * d + h * dh;
                    const double* grow = G.data() + (tt * N + n) * d + h * dh;
                    w.resize(static_cast<std::size_t>(deg));
                    a.resize(static_cast<std::size_t>(deg));
                    double mx = -std::numeric_limits<double>::infinity();
                    for (long mi = 0; mi < deg; ++mi) {
                        const double* krow = Kv.data() + (tt * N + nb[static_cast<std::size_t>(mi)]) * d + h * dh;
                        double s = 0.0;
                        for (long c = 0; c < dh; ++c) s += qrow[c] * krow[c];
                        w[static_cast<std::size_t>(mi)] = s * inv_sqrt;
                        mx = std::max(mx, w[static_cast<std::size_t>(mi)]);
                    }
                    double sum = 0.0;
                    for (long mi = 0; mi < deg; ++mi) {
                        w[static_cast<std::size_t>(mi)] = std::exp(w[static_cast<std::size_t>(mi)] - mx);
                        sum += w[static_cast<std::size_t>(mi)];
                    }
                    double dot = 0.0;
                    for (long mi = 0; mi < deg; ++mi) {
                        const std::size_t ms = static_cast<std::size_t>(mi);
                        w[ms] /= sum;
                        const long m = nb[ms];
                        const double* vrow = Vv.data() + (tt * N + m) * d + h * dh;
                        double am = 0.0;
                        for (long c = 0; c < dh; ++c) am += vrow[c] * grow[c];
                        a[ms] = am;
                        dot += w[ms] * am;
                        // dV[m] += w_m * g
                        double* gvrow = gv.data() + (tt * N + m) * d + h * dh;
                        for (long c = 0; c < dh; ++c) gvrow[c] += w[ms] * grow[c];
                    }
                    double* gqrow = gq.data() + (tt * N + n) * d + h * dh;
                    for (long mi = 0; mi < deg; ++mi) {
                        const std::size_t ms = static_cast<std::size_t>(mi);
                        const long m = nb[ms];
                        const double ds = w[ms] * (a[ms] - dot) * inv_sqrt;
                        const double* krow = Kv.data() + (tt * N + m) * d + h * dh;
                        double* gkrow = gk.data() + (tt * N + m) * d + h * dh;
                        for (long c = 0; c < dh; ++c) {
                            gqrow[c] += ds * krow[c];
                            gkrow[c] += ds * qrow[c];
                        }
                    }
                }
            }
        tp.accumulate(iq, gq);
        tp.accumulate(ik, gk);
        tp.accumulate(iv, gv);
    });
}

// GAT node scorer (message passing restricted to graph neighbors), sharing the
// head projections of the attention it gates.
inline Var gat_score(Tape& t, Var x, std::shared_ptr<const std::vector<std::vector<long>>> nbrs,
                     const AttentionHeads& heads) {
    Var q = t.matmul(x, t.param(*heads.wq));
    Var k = t.matmul(x, t.param(*heads.wk));
    Var v = t.matmul(x, t.param(*heads.wv));
    Var ctx = neighborhood_attention_op(t, q, k, v, std::move(nbrs), heads.n_heads);
    return t.matmul(ctx, t.param(*heads.wo));
}

inline Var gat_score(Tape& t, Var x, const Graph& g, const AttentionHeads& heads) {
    auto nbrs = std::make_shared<const std::vector<std::vector<long>>>(neighbor_lists(g));
    return gat_score(t, x, std::move(nbrs), heads);
}

// Number of sampled queries: ceil(log_base N), clamped to [1, N].
inline long sample_count(long n_nodes, double base = 2.0) {
    if (n_nodes < 1) throw ArgumentError("sample_count: need at least one node");
    const long k = static_cast<long>(std::ceil(std::log(static_cast<double>(n_nodes)) / std::log(base)));
    return std::clamp(k, 1L, n_nodes);
}

// Sampled query ids for one time step, in rank order.
struct QuerySample {
    std::vector<long> indices;
};

// Top-k node ids by projected score M*p/||p||, rank order, ties broken
// toward the lower node id.
inline std::vector<long> rank_queries(const FlowTensor& m_t, const Param& p, long n_nodes, long k) {
    if (m_t.rank() != 2 || m_t.extent(0) != n_nodes)
        throw ShapeError("rank_queries: expected (N,d) scores");
    const long d = m_t.extent(1);
    if (p.value.numel() != d) throw ShapeError("rank_queries: projector length mismatch");
    double norm = std::sqrt(p.value.sq_norm());
    if (norm < 1e-12) throw NumericError("rank_queries: projector has zero norm");
    std::vector<double> s(static_cast<std::size_t>(n_nodes), 0.0);
    for (long i = 0; i < n_nodes; ++i) {
        double acc = 0.0;
        for (long j = 0; j < d; ++j) acc += m_t.at(i, j) * p.value[j];
        s[static_cast<std::size_t>(i)] = acc / norm;
    }
    std::vector<long> order(static_cast<std::size_t>(n_nodes));
    std::iota(order.begin(), order.end(), 0L);
    std::sort(order.begin(), order.end(), [&](long a, long b) {
        const double sa = s[static_cast<std::size_t>(a)], sb = s[static_cast<std::size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    order.resize(static_cast<std::size_t>(std::min(k, n_nodes)));
    return order;
}

// Project the score matrix to scalars with p/||p|| and keep the top
// ceil(log_base N) nodes.
inline QuerySample sample_queries(const FlowTensor& m_t, const Param& p, long n_nodes, double base = 2.0) {
    return QuerySample{rank_queries(m_t, p, n_nodes, sample_count(n_nodes, base))};
}

namespace detail {

// Attention over all N keys/values with the given query rows per time step.
// idx holds T*k node ids. Every node receives a row of the result: a sampled
// node its own attention output, an unsampled node the output of the sampled
// query with the highest head-averaged weight on it (ties: lower query rank).
inline Var spatial_attention_with_queries(Tape& t, Var q_proj, Var k_proj, Var v_proj,
                                          const AttentionHeads& heads, const std::vector<long>& idx, long k) {
    const FlowTensor& Q = t.value(q_proj);
    const long T = Q.extent(0), N = Q.extent(1);
    const long e = heads.n_heads;

    Var qs = t.gather_rows(q_proj, idx, k); // (T, k, d)
    FlowTensor probs;                       // (T, k, N) head-averaged
    Var ctx = attention_core_op(t, qs, k_proj, v_proj, e, nullptr, &probs);
    Var out_rows = t.matmul(ctx, t.param(*heads.wo)); // (T, k, d)

    std::vector<long> map(static_cast<std::size_t>(T * N), -1);
    for (long tt = 0; tt < T; ++tt) {
        for (long r = 0; r < k; ++r) map[static_cast<std::size_t>(tt * N + idx[static_cast<std::size_t>(tt * k + r)])] = r;
        const double* pt = probs.data() + tt * k * N;
        for (long j = 0; j < N; ++j) {
            auto& slot = map[static_cast<std::size_t>(tt * N + j)];
            if (slot >= 0) continue;
            long best_q = 0;
            double best_w = -1.0;
            for (long r = 0; r < k; ++r) {
                const double w = pt[r * N + j];
                if (w > best_w) {
                    best_w = w;
                    best_q = r;
                }
            }
            slot = best_q;
        }
    }
    return t.gather_rows(out_rows, map, N); // (T, N, d)
}

} // namespace detail

// Full spatial attention over all nodes (the quadratic path): every node is
// its own query. Kept on the sampled-attention code path so the efficient
// variant degenerates to it exactly.
inline Var full_spatial_attention(Tape& t, Var x_tilde, const AttentionHeads& heads) {
    const FlowTensor& x = t.value(x_tilde);
    if (x.rank() != 3) throw ShapeError("full_spatial_attention: expected (T,N,d)");
    const long T = x.extent(0), N = x.extent(1);
    Var q = t.matmul(x_tilde, t.param(*heads.wq));
    Var k = t.matmul(x_tilde, t.param(*heads.wk));
    Var v = t.matmul(x_tilde, t.param(*heads.wv));
    std::vector<long> idx(static_cast<std::size_t>(T * N));
    for (long tt = 0; tt < T; ++tt)
        for (long j = 0; j < N; ++j) idx[static_cast<std::size_t>(tt * N + j)] = j;
    return detail::spatial_attention_with_queries(t, q, k, v, heads, idx, N);
}

// Efficient spectral graph attention: add both positional encodings, score
// nodes with a neighborhood GAT, sample ceil(log N) queries per time step,
// attend with those rows against all nodes and propagate outputs by the
// highest-weight copy rule. sample_override forces the sample size (N gives
// the exact full-attention path).
inline Var esgat(Tape& t, Var x, const GraphPE& pe_spa, const GraphPE& pe_tem,
                 std::shared_ptr<const std::vector<std::vector<long>>> nbrs, const AttentionHeads& heads,
                 Param& projector, double sample_base = 2.0, long sample_override = -1) {
    const FlowTensor& xv = t.value(x);
    if (xv.rank() != 3) throw ShapeError("esgat: expected (T,N,d)");
    const long T = xv.extent(0), N = xv.extent(1);

    Var x_tilde = t.add(t.add(x, pe_spa.build_rho(t)), pe_tem.build_rho(t));
    Var q = t.matmul(x_tilde, t.param(*heads.wq));
    Var k = t.matmul(x_tilde, t.param(*heads.wk));
    Var v = t.matmul(x_tilde, t.param(*heads.wv));

    Var ctx = neighborhood_attention_op(t, q, k, v, std::move(nbrs), heads.n_heads);
    Var m = t.matmul(ctx, t.param(*heads.wo)); // (T, N, d) node scores

    const long n_sample = sample_override > 0 ? std::min(sample_override, N) : sample_count(N, sample_base);
    const FlowTensor& mv = t.value(m);
    const long md = mv.extent(2);
    std::vector<long> idx;
    idx.reserve(static_cast<std::size_t>(T * n_sample));
    for (long tt = 0; tt < T; ++tt) {
        FlowTensor m_t({N, md});
        std::copy(mv.data() + tt * N * md, mv.data() + (tt + 1) * N * md, m_t.data());
        std::vector<long> ranked = rank_queries(m_t, projector, N, n_sample);
        idx.insert(idx.end(), ranked.begin(), ranked.end());
    }
    return detail::spatial_attention_with_queries(t, q, k, v, heads, idx, n_sample);
}

// Decoder fusion: low-frequency representations are the queries of two
// unmasked temporal attentions, over the low and high streams respectively.
inline Var fusion_attention(Tape& t, Var y_low, Var y_high, const AttentionHeads& heads_self,
                            const AttentionHeads& heads_cross) {
    const FlowTensor& yl = t.value(y_low);
    if (yl.rank() != 3 || !yl.same_shape(t.value(y_high)))
        throw ShapeError("fusion_attention: expected matching (T2,N,d) inputs");
    Var ql = t.permute(y_low, {1, 0, 2});  // (N, T2, d)
    Var qh = t.permute(y_high, {1, 0, 2});
    Var self_term = self_attention(t, ql, ql, ql, heads_self);
    Var cross_term = self_attention(t, ql, qh, qh, heads_cross);
    return t.permute(t.add(self_term, cross_term), {1, 0, 2});
}

} // namespace stwave
