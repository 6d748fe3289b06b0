#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stwave/tensor.hpp"

namespace stwave {

// A named learnable tensor with its gradient slot.
struct Param {
    std::string name;
    FlowTensor value;
    FlowTensor grad;

    Param() = default;
    Param(std::string n, FlowTensor v)
        : name(std::move(n)), value(std::move(v)), grad(FlowTensor::zeros(value.shape())) {}

    void zero_grad() { grad.fill(0.0); }
};

class Tape;
using VarId = long;

// Lightweight handle to a tape node.
struct Var {
    Tape* tape = nullptr;
    VarId id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const FlowTensor& value() const;
};

// Reverse-mode tape. Nodes are appended in topological order by construction;
// backward() sweeps them in reverse and flushes leaf gradients into bound Params.
// Values are immutable once pushed. One tape per forward pass, single writer.
class Tape {
public:
    struct Node {
        FlowTensor value;
        FlowTensor grad; // empty until touched by backward
        bool needs_grad = false;
        std::function<void(Tape&, VarId)> backprop; // empty for leaves
    };

    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatMap = Eigen::Map<RowMat>;
    using ConstMatMap = Eigen::Map<const RowMat>;

    Var constant(FlowTensor v) { return push(std::move(v), false, nullptr); }

    Var leaf(FlowTensor v, bool needs_grad = false) { return push(std::move(v), needs_grad, nullptr); }

    // Leaf bound to a Param; deduplicated so each Param appears once per tape.
    Var param(Param& p) {
        auto it = param_ids_.find(&p);
        if (it != param_ids_.end()) return Var{this, it->second};
        Var v = push(p.value, true, nullptr);
        param_ids_.emplace(&p, v.id);
        bindings_.emplace_back(v.id, &p);
        return v;
    }

    Var push(FlowTensor value, bool needs_grad, std::function<void(Tape&, VarId)> backprop) {
        nodes_.push_back(Node{std::move(value), FlowTensor(), needs_grad, std::move(backprop)});
        return Var{this, static_cast<VarId>(nodes_.size()) - 1};
    }

    const FlowTensor& value(VarId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const FlowTensor& value(Var v) const { return value(v.id); }
    FlowTensor& grad(VarId id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool needs_grad(VarId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    long size() const { return static_cast<long>(nodes_.size()); }

    // Adds g into the node's gradient slot (no-op for nodes that do not need one).
    void accumulate(VarId id, const FlowTensor& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return;
        if (n.grad.empty()) n.grad = FlowTensor::zeros(n.value.shape());
        double* dst = n.grad.data();
        const double* src = g.data();
        const long m = n.grad.numel();
        for (long i = 0; i < m; ++i) dst[i] += src[i];
    }

    void backward(Var loss) {
        backward_no_flush(loss);
        for (auto& [id, p] : bindings_) {
            const Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.grad.empty()) continue;
            double* dst = p->grad.data();
            const double* src = n.grad.data();
            for (long i = 0; i < n.grad.numel(); ++i) dst[i] += src[i];
        }
    }

    // Reverse sweep without touching the bound Params; callers read the leaf
    // gradients via param_bindings()/grad(). Lets batch workers accumulate
    // into private buffers.
    void backward_no_flush(Var loss) {
        if (loss.tape != this) throw ArgumentError("backward: var from another tape");
        Node& root = nodes_[static_cast<std::size_t>(loss.id)];
        if (root.value.numel() != 1) throw ShapeError("backward: loss must be scalar");
        if (root.grad.empty()) root.grad = FlowTensor::zeros(root.value.shape());
        root.grad[0] += 1.0;
        for (VarId id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.grad.empty() || !n.backprop) continue;
            n.backprop(*this, id);
        }
    }

    const std::vector<std::pair<VarId, Param*>>& param_bindings() const { return bindings_; }

    // ---- elementwise ops ------------------------------------------------

    // b must share a's shape, be a trailing suffix of it, or be a scalar.
    Var add(Var a, Var b) { return binary_broadcast(a, b, BinKind::Add); }
    Var sub(Var a, Var b) { return binary_broadcast(a, b, BinKind::Sub); }
    Var mul(Var a, Var b) { return binary_broadcast(a, b, BinKind::Mul); }

    Var neg(Var a) { return scale(a, -1.0); }

    Var scale(Var a, double c) {
        const FlowTensor& x = value(a);
        FlowTensor out = x;
        for (long i = 0; i < out.numel(); ++i) out[i] *= c;
        VarId pa = a.id;
        return push(std::move(out), needs_grad(pa), [pa, c](Tape& t, VarId self) {
            const FlowTensor& g = t.grad(self);
            FlowTensor gx = g;
            for (long i = 0; i < gx.numel(); ++i) gx[i] *= c;
            t.accumulate(pa, gx);
        });
    }

    Var relu(Var a) {
        const FlowTensor& x = value(a);
        FlowTensor out = x;
        for (long i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        VarId pa = a.id;
        return push(std::move(out), needs_grad(pa), [pa](Tape& t, VarId self) {
            const FlowTensor& g = t.grad(self);
            const FlowTensor& x = t.value(pa);
            FlowTensor gx(x.shape());
            for (long i = 0; i < gx.numel(); ++i) gx[i] = x[i] > 0.0 ? g[i] : 0.0;
            t.accumulate(pa, gx);
        });
    }

    Var abs(Var a) {
        const FlowTensor& x = value(a);
        FlowTensor out = x;
        for (long i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
        VarId pa = a.id;
        return push(std::move(out), needs_grad(pa), [pa](Tape& t, VarId self) {
            const FlowTensor& g = t.grad(self);
            const FlowTensor& x = t.value(pa);
            FlowTensor gx(x.shape());
            for (long i = 0; i < gx.numel(); ++i)
                gx[i] = x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
            t.accumulate(pa, gx);
        });
    }

    Var exp(Var a) {
        const FlowTensor& x = value(a);
        FlowTensor out = x;
        for (long i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
        VarId pa = a.id;
        return push(std::move(out), needs_grad(pa), [pa](Tape& t, VarId self) {
            const FlowTensor& g = t.grad(self);
            const FlowTensor& y = t.value(self);
            FlowTensor gx(y.shape());
            for (long i = 0; i < gx.numel(); ++i) gx[i] = g[i] * y[i];
            t.accumulate(pa, gx);
        });
    }

    // ---- shape ops -------------------------------------------------------

    Var reshape(Var a, Shape new_shape) {
        FlowTensor out = value(a).reshaped(std::move(new_shape));
        VarId pa = a.id;
        Shape old_shape = value(a).shape();
        return push(std::move(out), needs_grad(pa), [pa, old_shape](Tape& t, VarId self) {
            t.accumulate(pa, t.grad(self).reshaped(old_shape));
        });
    }

    Var permute(Var a, std::vector<long> axes) {
        FlowTensor out = permute_value(value(a), axes);
        VarId pa = a.id;
        std::vector<long> inv(axes.size());
        for (std::size_t i = 0; i < axes.size(); ++i) inv[static_cast<std::size_t>(axes[i])] = static_cast<long>(i);
        return push(std::move(out), needs_grad(pa), [pa, inv](Tape& t, VarId self) {
            t.accumulate(pa, permute_value(t.grad(self), inv));
        });
    }

    Var transpose_last2(Var a) {
        const long r = value(a).rank();
        if (r < 2) throw ShapeError("transpose_last2 needs rank >= 2");
        std::vector<long> axes(static_cast<std::size_t>(r));
        for (long i = 0; i < r; ++i) axes[static_cast<std::size_t>(i)] = i;
        std::swap(axes[static_cast<std::size_t>(r - 2)], axes[static_cast<std::size_t>(r - 1)]);
        return permute(a, axes);
    }

    // ---- contractions ----------------------------------------------------

    // a: (..., m, k); b: (k, n) shared across batches, or (..., k, n) with the
    // same leading extents as a.
    Var matmul(Var a, Var b) {
        const FlowTensor& A = value(a);
        const FlowTensor& B = value(b);
        if (A.rank() < 2 || B.rank() < 2)
            throw ShapeError("matmul operands must have rank >= 2: " + shape_str(A.shape()) +
                             " x " + shape_str(B.shape()));
        const long m = A.extent(A.rank() - 2);
        const long k = A.extent(A.rank() - 1);
        const bool shared_b = B.rank() == 2;
        if (!shared_b) {
            if (B.rank() != A.rank())
                throw ShapeError("matmul batched ranks differ: " + shape_str(A.shape()) + " x " +
                                 shape_str(B.shape()));
            for (long i = 0; i < A.rank() - 2; ++i)
                if (A.extent(i) != B.extent(i))
                    throw ShapeError("matmul batch extents differ: " + shape_str(A.shape()) + " x " +
                                     shape_str(B.shape()));
        }
        const long kb = B.extent(B.rank() - 2);
        const long n = B.extent(B.rank() - 1);
        if (k != kb)
            throw ShapeError("matmul inner extents disagree: " + shape_str(A.shape()) + " x " +
                             shape_str(B.shape()));
        long batches = 1;
        Shape out_shape;
        for (long i = 0; i < A.rank() - 2; ++i) {
            batches *= A.extent(i);
            out_shape.push_back(A.extent(i));
        }
        out_shape.push_back(m);
        out_shape.push_back(n);
        FlowTensor out(out_shape);
        if (shared_b) {
            // contiguous batches against one shared rhs collapse to a single product
            mm(A.data(), B.data(), out.data(), batches * m, k, n);
        } else {
            for (long bidx = 0; bidx < batches; ++bidx)
                mm(A.data() + bidx * m * k, B.data() + bidx * k * n, out.data() + bidx * m * n, m, k, n);
        }
        VarId ia = a.id, ib = b.id;
        bool ng = needs_grad(ia) || needs_grad(ib);
        return push(std::move(out), ng, [ia, ib, m, k, n, batches, shared_b](Tape& t, VarId self) {
            const FlowTensor& G = t.grad(self);
            const FlowTensor& A = t.value(ia);
            const FlowTensor& B = t.value(ib);
            if (t.needs_grad(ia)) {
                FlowTensor gA(A.shape());
                if (shared_b) {
                    mm_nt(G.data(), B.data(), gA.data(), batches * m, n, k);
                } else {
                    for (long bidx = 0; bidx < batches; ++bidx)
                        mm_nt(G.data() + bidx * m * n, B.data() + bidx * k * n, gA.data() + bidx * m * k, m,
                              n, k);
                }
                t.accumulate(ia, gA);
            }
            if (t.needs_grad(ib)) {
                FlowTensor gB(B.shape());
                if (shared_b) {
                    mm_tn(A.data(), G.data(), gB.data(), batches * m, k, n);
                } else {
                    for (long bidx = 0; bidx < batches; ++bidx)
                        mm_tn(A.data() + bidx * m * k, G.data() + bidx * m * n, gB.data() + bidx * k * n, m,
                              k, n);
                }
                t.accumulate(ib, gB);
            }
        });
    }

    // ---- softmax ----------------------------------------------------------

    // Softmax over the last axis, numerically stabilized by max subtraction.
    // mask (optional, 0/1 valued) must be a trailing-suffix broadcast of x;
    // masked entries are exactly zero in the output.
    Var softmax_lastdim(Var a, const FlowTensor* mask = nullptr) {
        const FlowTensor& x = value(a);
        if (x.rank() < 1) throw ShapeError("softmax_lastdim needs rank >= 1");
        const long L = x.extent(x.rank() - 1);
        long mask_n = 0;
        if (mask) {
            check_suffix(x.shape(), mask->shape(), "softmax mask");
            mask_n = mask->numel();
        }
        FlowTensor out = x;
        const long rows = x.numel() / L;
        {
            constexpr double neg_inf = -std::numeric_limits<double>::infinity();
            if (mask) {
                // masked logits become -inf: exp maps them to exactly zero
                double* po = out.data();
                const long reps = out.numel() / mask_n;
                for (long r = 0; r < reps; ++r, po += mask_n)
                    for (long j = 0; j < mask_n; ++j)
                        if ((*mask)[j] <= 0.5) po[j] = neg_inf;
            }
            double* po = out.data();
            for (long r = 0; r < rows; ++r, po += L) {
                double mx = po[0];
                for (long j = 1; j < L; ++j) mx = std::max(mx, po[j]);
                if (!std::isfinite(mx))
                    throw NumericError("softmax_lastdim: fully masked row " + std::to_string(r));
                for (long j = 0; j < L; ++j) po[j] -= mx;
            }
            Eigen::Map<Eigen::ArrayXd> flat(out.data(), out.numel());
            flat = flat.exp();
            if (mask) {
                // the vectorized exp maps -inf to a denormal; masked entries
                // must be exactly zero
                po = out.data();
                const long reps = out.numel() / mask_n;
                for (long r = 0; r < reps; ++r, po += mask_n)
                    for (long j = 0; j < mask_n; ++j)
                        if ((*mask)[j] <= 0.5) po[j] = 0.0;
            }
            po = out.data();
            for (long r = 0; r < rows; ++r, po += L) {
                double sum = 0.0;
                for (long j = 0; j < L; ++j) sum += po[j];
                const double inv = 1.0 / sum;
                for (long j = 0; j < L; ++j) po[j] *= inv;
            }
        }
        VarId pa = a.id;
        return push(std::move(out), needs_grad(pa), [pa, L](Tape& t, VarId self) {
            const FlowTensor& y = t.value(self);
            const FlowTensor& g = t.grad(self);
            FlowTensor gx(y.shape());
            const long rows = y.numel() / L;
            ConstMatMap ym(y.data(), rows, L);
            ConstMatMap gm(g.data(), rows, L);
            MatMap xm(gx.data(), rows, L);
            Eigen::VectorXd dots = (ym.array() * gm.array()).rowwise().sum();
            xm = ym.array() * (gm.colwise() - dots).array();
            t.accumulate(pa, gx);
        });
    }

    // ---- reductions --------------------------------------------------------

    Var sum_all(Var a) {
        const FlowTensor& x = value(a);
        FlowTensor out = FlowTensor::scalar(x.sum());
        VarId pa = a.id;
        return push(std::move(out), needs_grad(pa), [pa](Tape& t, VarId self) {
            const double g = t.grad(self)[0];
            FlowTensor gx = FlowTensor::full(t.value(pa).shape(), g);
            t.accumulate(pa, gx);
        });
    }

    Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).numel())); }

    // ---- gather --------------------------------------------------------------

    // Gathers rows along axis rank-2. x viewed as (B, N, d); idx holds B*k row
    // indices (k per batch). Output (leading..., k, d). Backward scatter-adds,
    // so gradients flow only through selected rows.
    Var gather_rows(Var a, std::vector<long> idx, long k) {
        const FlowTensor& x = value(a);
        if (x.rank() < 2) throw ShapeError("gather_rows needs rank >= 2");
        const long d = x.extent(x.rank() - 1);
        const long n = x.extent(x.rank() - 2);
        long batches = 1;
        Shape out_shape;
        for (long i = 0; i < x.rank() - 2; ++i) {
            batches *= x.extent(i);
            out_shape.push_back(x.extent(i));
        }
        out_shape.push_back(k);
        out_shape.push_back(d);
        if (static_cast<long>(idx.size()) != batches * k)
            throw ShapeError("gather_rows index count " + std::to_string(idx.size()) +
                             " != batches*k = " + std::to_string(batches * k));
        for (long j : idx)
            if (j < 0 || j >= n) throw ArgumentError("gather_rows index out of range");
        FlowTensor out(out_shape);
        for (long b = 0; b < batches; ++b)
            for (long i = 0; i < k; ++i) {
                const double* src = x.data() + (b * n + idx[static_cast<std::size_t>(b * k + i)]) * d;
                double* dst = out.data() + (b * k + i) * d;
                std::copy(src, src + d, dst);
            }
        VarId pa = a.id;
        return push(std::move(out), needs_grad(pa),
                    [pa, idx = std::move(idx), k, n, d, batches](Tape& t, VarId self) {
                        const FlowTensor& g = t.grad(self);
                        FlowTensor gx(t.value(pa).shape());
                        for (long b = 0; b < batches; ++b)
                            for (long i = 0; i < k; ++i) {
                                const double* src = g.data() + (b * k + i) * d;
                                double* dst = gx.data() + (b * n + idx[static_cast<std::size_t>(b * k + i)]) * d;
                                for (long c = 0; c < d; ++c) dst[c] += src[c];
                            }
                        t.accumulate(pa, gx);
                    });
    }

    // ---- helpers shared with custom ops ------------------------------------

    static FlowTensor permute_value(const FlowTensor& x, const std::vector<long>& axes) {
        const long r = x.rank();
        if (static_cast<long>(axes.size()) != r) throw ShapeError("permute axes rank mismatch");
        Shape out_shape(static_cast<std::size_t>(r));
        for (long i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.extent(axes[static_cast<std::size_t>(i)]);
        FlowTensor out(out_shape);
        // hot paths: middle-axis swaps used by the attention head plumbing
        if (r == 3 && axes[0] == 1 && axes[1] == 0 && axes[2] == 2) {
            const long A = x.extent(0), B = x.extent(1), C = x.extent(2);
            for (long b = 0; b < B; ++b)
                for (long a = 0; a < A; ++a)
                    std::copy(x.data() + (a * B + b) * C, x.data() + (a * B + b + 1) * C,
                              out.data() + (b * A + a) * C);
            return out;
        }
        if (r == 4 && axes[0] == 0 && axes[1] == 2 && axes[2] == 1 && axes[3] == 3) {
            const long A = x.extent(0), B = x.extent(1), C = x.extent(2), D = x.extent(3);
            for (long a = 0; a < A; ++a)
                for (long c = 0; c < C; ++c)
                    for (long b = 0; b < B; ++b)
                        std::copy(x.data() + ((a * B + b) * C + c) * D, x.data() + ((a * B + b) * C + c + 1) * D,
                                  out.data() + ((a * C + c) * B + b) * D);
            return out;
        }
        std::vector<long> in_strides(static_cast<std::size_t>(r), 1);
        for (long i = r - 2; i >= 0; --i)
            in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i + 1)] * x.extent(i + 1);
        std::vector<long> mapped(static_cast<std::size_t>(r));
        for (long i = 0; i < r; ++i) mapped[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
        std::vector<long> counter(static_cast<std::size_t>(r), 0);
        const long n = x.numel();
        long src = 0;
        for (long flat = 0; flat < n; ++flat) {
            out[flat] = x[src];
            for (long a = r - 1; a >= 0; --a) {
                auto ai = static_cast<std::size_t>(a);
                if (++counter[ai] < out_shape[ai]) {
                    src += mapped[ai];
                    break;
                }
                counter[ai] = 0;
                src -= mapped[ai] * (out_shape[ai] - 1);
            }
        }
        return out;
    }

    static void check_suffix(const Shape& a, const Shape& b, const std::string& what) {
        if (b.size() == 1 && b[0] == 1) return; // scalar broadcast
        if (b.size() > a.size())
            throw ShapeError(what + ": shape " + shape_str(b) + " is not a suffix of " + shape_str(a));
        for (std::size_t i = 0; i < b.size(); ++i)
            if (b[b.size() - 1 - i] != a[a.size() - 1 - i])
                throw ShapeError(what + ": shape " + shape_str(b) + " is not a suffix of " + shape_str(a));
    }

private:
    enum class BinKind { Add, Sub, Mul };

    Var binary_broadcast(Var a, Var b, BinKind kind) {
        const FlowTensor& x = value(a);
        const FlowTensor& y = value(b);
        check_suffix(x.shape(), y.shape(), "elementwise op");
        const long nb = y.numel();
        FlowTensor out = x;
        const long n = out.numel();
        const long reps = n / nb;
        {
            double* po = out.data();
            const double* py = y.data();
            for (long r = 0; r < reps; ++r, po += nb)
                switch (kind) {
                    case BinKind::Add:
                        for (long j = 0; j < nb; ++j) po[j] += py[j];
                        break;
                    case BinKind::Sub:
                        for (long j = 0; j < nb; ++j) po[j] -= py[j];
                        break;
                    case BinKind::Mul:
                        for (long j = 0; j < nb; ++j) po[j] *= py[j];
                        break;
                }
        }
        VarId ia = a.id, ib = b.id;
        bool ng = needs_grad(ia) || needs_grad(ib);
        return push(std::move(out), ng, [ia, ib, kind, nb, reps](Tape& t, VarId self) {
            const FlowTensor& g = t.grad(self);
            if (t.needs_grad(ia)) {
                if (kind == BinKind::Mul) {
                    const FlowTensor& y = t.value(ib);
                    FlowTensor gx(t.value(ia).shape());
                    const double* pg = g.data();
                    const double* py = y.data();
                    double* px = gx.data();
                    for (long r = 0; r < reps; ++r, pg += nb, px += nb)
                        for (long j = 0; j < nb; ++j) px[j] = pg[j] * py[j];
                    t.accumulate(ia, gx);
                } else {
                    t.accumulate(ia, g);
                }
            }
            if (t.needs_grad(ib)) {
                FlowTensor gy(t.value(ib).shape());
                const double* pg = g.data();
                double* py = gy.data();
                switch (kind) {
                    case BinKind::Add:
                        for (long r = 0; r < reps; ++r, pg += nb)
                            for (long j = 0; j < nb; ++j) py[j] += pg[j];
                        break;
                    case BinKind::Sub:
                        for (long r = 0; r < reps; ++r, pg += nb)
                            for (long j = 0; j < nb; ++j) py[j] -= pg[j];
                        break;
                    case BinKind::Mul: {
                        const double* px = t.value(ia).data();
                        for (long r = 0; r < reps; ++r, pg += nb, px += nb)
                            for (long j = 0; j < nb; ++j) py[j] += pg[j] * px[j];
                        break;
                    }
                }
                t.accumulate(ib, gy);
            }
        });
    }

    // Product kernels: small shapes take hand-rolled row-contiguous loops
    // (Eigen's packed GEMM setup dwarfs the work there), large ones Eigen.
    static constexpr long kSmallProductLimit = 48 * 48 * 48;

    // out += A (m,k) * B (k,n)
    static void mm(const double* a, const double* b, double* out, long m, long k, long n) {
        if (m * n * k > kSmallProductLimit) {
            MatMap(out, m, n).noalias() += ConstMatMap(a, m, k) * ConstMatMap(b, k, n);
            return;
        }
        for (long i = 0; i < m; ++i) {
            double* orow = out + i * n;
            const double* arow = a + i * k;
            for (long kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = b + kk * n;
                for (long j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }

    // out (m,k) += G (m,n) * B^T, B (k,n)
    static void mm_nt(const double* g, const double* b, double* out, long m, long n, long k) {
        if (m * n * k > kSmallProductLimit) {
            MatMap(out, m, k).noalias() += ConstMatMap(g, m, n) * ConstMatMap(b, k, n).transpose();
            return;
        }
        for (long i = 0; i < m; ++i) {
            const double* grow = g + i * n;
            double* orow = out + i * k;
            for (long kk = 0; kk < k; ++kk) {
                const double* brow = b + kk * n;
                double acc = 0.0;
                for (long j = 0; j < n; ++j) acc += grow[j] * brow[j];
                orow[kk] += acc;
            }
        }
    }

    // out (k,n) += A^T * G, A (m,k), G (m,n)
    static void mm_tn(const double* a, const double* g, double* out, long m, long k, long n) {
        if (m * n * k > kSmallProductLimit) {
            MatMap(out, k, n).noalias() += ConstMatMap(a, m, k).transpose() * ConstMatMap(g, m, n);
            return;
        }
        for (long i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            const double* grow = g + i * n;
            for (long kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                if (av == 0.0) continue;
                double* orow = out + kk * n;
                for (long j = 0; j < n; ++j) orow[j] += av * grow[j];
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<VarId, Param*>> bindings_;
    std::unordered_map<const Param*, VarId> param_ids_;
};

inline const FlowTensor& Var::value() const { return tape->value(id); }

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }

} // namespace stwave
