#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stwave/error.hpp"

namespace stwave {

using Shape = std::vector<long>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

// Dense row-major tensor of doubles, rank 0..4. The single value container
// for signals, latents, parameters and gradients.
class FlowTensor {
public:
    FlowTensor() = default;

    explicit FlowTensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
    }

    FlowTensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (static_cast<long>(data_.size()) != count(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static FlowTensor zeros(Shape shape) { return FlowTensor(std::move(shape)); }

    static FlowTensor full(Shape shape, double v) {
        FlowTensor t(std::move(shape));
        t.fill(v);
        return t;
    }

    static FlowTensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static FlowTensor scalar(double v) { return FlowTensor({1}, {v}); }

    static FlowTensor identity(long n) {
        FlowTensor t({n, n});
        for (long i = 0; i < n; ++i) t.data_[static_cast<std::size_t>(i * n + i)] = 1.0;
        return t;
    }

    const Shape& shape() const { return shape_; }
    long rank() const { return static_cast<long>(shape_.size()); }
    long extent(long axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    long numel() const { return static_cast<long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

    template <class... Ix>
    double& at(Ix... ix) {
        return data_[static_cast<std::size_t>(offset(ix...))];
    }

    template <class... Ix>
    double at(Ix... ix) const {
        return data_[static_cast<std::size_t>(offset(ix...))];
    }

    bool same_shape(const FlowTensor& o) const { return shape_ == o.shape_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    FlowTensor reshaped(Shape new_shape) const {
        validate_shape(new_shape);
        if (count(new_shape) != numel())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                             " changes element count");
        return FlowTensor(std::move(new_shape), data_);
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

    double sq_norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return s;
    }

    static long count(const Shape& s) {
        long n = 1;
        for (long e : s) n *= e;
        return n;
    }

private:
    static void validate_shape(const Shape& s) {
        if (s.size() > 4)
            throw ShapeError("tensor rank " + std::to_string(s.size()) + " exceeds 4");
        for (long e : s)
            if (e <= 0)
                throw ShapeError("non-positive extent in shape " + shape_str(s));
    }

    template <class... Ix>
    long offset(Ix... ix) const {
        const long idx[] = {static_cast<long>(ix)...};
        constexpr long r = sizeof...(Ix);
        long off = 0;
        for (long a = 0; a < r; ++a) off = off * shape_[static_cast<std::size_t>(a)] + idx[a];
        return off;
    }

    Shape shape_;
    std::vector<double> data_;
};

// Max elementwise absolute difference; shapes must match.
inline double max_abs_diff(const FlowTensor& a, const FlowTensor& b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline bool bitwise_equal(const FlowTensor& a, const FlowTensor& b) {
    if (!a.same_shape(b)) return false;
    for (long i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

} // namespace stwave
