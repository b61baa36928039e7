#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advgen/error.hpp"

namespace advgen {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Dense multi-dimensional array of 64-bit floats, row-major.
///
/// Tensors are plain values: copyable, immutable by convention once handed
/// to a graph or a model, and safe to share across threads.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        check_shape();
    }

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_numel(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_to_string(shape_));
        }
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    static Tensor from_vector(std::vector<double> v) {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v));
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool is_scalar() const { return data_.size() == 1; }

    /// Value of a one-element tensor.
    double value() const {
        if (!is_scalar()) {
            throw DimensionError("value() on non-scalar tensor " + shape_to_string(shape_));
        }
        return data_[0];
    }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    /// Row-major element access for 2-D (H x W) tensors.
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

    /// Row-major element access for 3-D (C x H x W) tensors.
    double at(std::size_t ch, std::size_t r, std::size_t c) const {
        return data_[(ch * shape_[1] + r) * shape_[2] + c];
    }
    double& at(std::size_t ch, std::size_t r, std::size_t c) {
        return data_[(ch * shape_[1] + r) * shape_[2] + c];
    }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

  private:
    void check_shape() const {
        for (std::size_t d : shape_) {
            if (d == 0) throw DimensionError("tensor shape has a zero dimension");
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

namespace detail {

/// Applies a binary op elementwise with scalar-with-tensor broadcast.
template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& f, const char* name) {
    if (a.same_shape(b)) {
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    if (b.is_scalar()) {
        Tensor out(a.shape());
        const double s = b[0];
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], s);
        return out;
    }
    if (a.is_scalar()) {
        Tensor out(b.shape());
        const double s = a[0];
        for (std::size_t i = 0; i < b.size(); ++i) out[i] = f(s, b[i]);
        return out;
    }
    throw DimensionError(std::string(name) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(a, b, [](double x, double y) { return x + y; }, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(a, b, [](double x, double y) { return x - y; }, "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(a, b, [](double x, double y) { return x * y; }, "mul");
}

/// Elementwise sign with sign(0) = 0.
inline Tensor sign(const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        out[i] = t[i] > 0.0 ? 1.0 : (t[i] < 0.0 ? -1.0 : 0.0);
    }
    return out;
}

/// Elementwise clamp to [lo, hi]. Lives outside the differentiation graph.
inline Tensor clip(const Tensor& t, double lo, double hi) {
    if (lo > hi) {
        throw ConfigError("clip: lo " + std::to_string(lo) + " exceeds hi " + std::to_string(hi));
    }
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = std::clamp(t[i], lo, hi);
    return out;
}

inline double linf_norm(const Tensor& t) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
    return m;
}

inline double l1_norm(const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += std::abs(t[i]);
    return s;
}

inline double l2_norm_value(const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return std::sqrt(s);
}

inline double linf_distance(const Tensor& a, const Tensor& b) { return linf_norm(sub(a, b)); }

inline double l1_distance(const Tensor& a, const Tensor& b) { return l1_norm(sub(a, b)); }

inline double min_value(const Tensor& t) {
    return *std::min_element(t.data().begin(), t.data().end());
}

inline double max_value(const Tensor& t) {
    return *std::max_element(t.data().begin(), t.data().end());
}

inline bool all_finite(const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) return false;
    }
    return true;
}

}  // namespace advgen
