#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <utility>
#include <deque>
#include <vector>

#include "advgen/error.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

enum class Padding { kZero, kReflect };

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid as long as the graph lives.
class Var {
  public:
    Var() = default;

    const Tensor& value() const;
    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }

  private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

/// Recorded forward computation with reverse-mode differentiation.
///
/// Nodes are evaluated eagerly as they are created, so a Var always carries
/// its value. Every non-leaf node's parents precede it in the arena, the
/// graph is acyclic by construction, and rebuilding the same graph from the
/// same inputs reproduces every value bit-for-bit.
///
/// A Graph is confined to the single evaluation that built it; share Tensors
/// across threads, not Graphs.
class Graph {
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

    enum class Op {
        kLeaf,
        kConstant,
        kAdd,
        kSub,
        kMul,
        kDiv,
        kTanh,
        kConv2d,
        kMean,
        kSumAbs,
        kVariance,
        kSpatialMean,
        kReshape,
        kDot,
        kL2Norm,
        kCosine,
        kCosineAgainst,
    };

    struct Node {
        Op op;
        std::size_t a = kNone;
        std::size_t b = kNone;
        Tensor value;
        Padding padding = Padding::kZero;
        Tensor aux;  // constant reference vector for kCosineAgainst

        Node(Op o, std::size_t pa, std::size_t pb, Tensor v)
            : op(o), a(pa), b(pb), value(std::move(v)) {}
    };

  public:
    static constexpr double kNormEpsilon = 1e-12;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf node intended as a differentiation target.
    Var leaf(Tensor value) { return push_leaf(Op::kLeaf, std::move(value)); }

    /// Leaf node holding data that is never differentiated (weights, targets).
    Var constant(Tensor value) { return push_leaf(Op::kConstant, std::move(value)); }

    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    std::size_t node_count() const { return nodes_.size(); }

    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }

    // ---- elementwise ----

    Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
    Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
    Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }
    Var div(Var a, Var b) { return binary(Op::kDiv, a, b); }

    Var tanh(Var a) {
        check_mine(a);
        const Tensor& x = val(a);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
        return push(Node{Op::kTanh, a.id(), kNone, std::move(out)});
    }

    // ---- convolution ----

    /// Same-spatial-size 2-D convolution (cross-correlation).
    ///
    /// Accepted shapes: input HxW with kernel KhxKw, or input CxHxW with
    /// kernel OxCxKhxKw. Kernel spatial dims must be odd and no larger than
    /// the input's. Differentiable w.r.t. both input and kernel.
    Var conv2d(Var input, Var kernel, Padding padding) {
        check_mine(input);
        check_mine(kernel);
        const Tensor& in = val(input);
        const Tensor& k = val(kernel);
        ConvDims d = conv_dims(in.shape(), k.shape());
        Tensor out = d.out_rank3 ? Tensor(Shape{d.oc, d.h, d.w}) : Tensor(Shape{d.h, d.w});
        conv_forward(in, k, d, padding, out);
        Node n{Op::kConv2d, input.id(), kernel.id(), std::move(out)};
        n.padding = padding;
        return push(std::move(n));
    }

    // ---- reductions to scalar ----

    Var reduce_mean(Var a) {
        const Tensor& x = nonempty(a, "reduce_mean");
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
        return push(Node{Op::kMean, a.id(), kNone, Tensor::scalar(s / double(x.size()))});
    }

    /// Sum of absolute values; the subgradient of |v| at v = 0 is taken as 0.
    Var reduce_sum_abs(Var a) {
        const Tensor& x = nonempty(a, "reduce_sum_abs");
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i]);
        return push(Node{Op::kSumAbs, a.id(), kNone, Tensor::scalar(s)});
    }

    /// Population variance (divides by the element count).
    Var reduce_variance(Var a) {
        const Tensor& x = nonempty(a, "reduce_variance");
        const double mu = mean_of(x);
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mu) * (x[i] - mu);
        return push(Node{Op::kVariance, a.id(), kNone, Tensor::scalar(s / double(x.size()))});
    }

    /// Mean over the spatial dims: CxHxW -> C-vector, HxW -> scalar.
    Var spatial_mean(Var a) {
        const Tensor& x = nonempty(a, "spatial_mean");
        const Shape& s = x.shape();
        if (s.size() == 2) {
            return push(Node{Op::kSpatialMean, a.id(), kNone, Tensor::scalar(mean_of(x))});
        }
        if (s.size() != 3) {
            throw DimensionError("spatial_mean expects HxW or CxHxW, got " + shape_to_string(s));
        }
        Tensor out(Shape{s[0]});
        const std::size_t hw = s[1] * s[2];
        for (std::size_t c = 0; c < s[0]; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) acc += x[c * hw + i];
            out[c] = acc / double(hw);
        }
        return push(Node{Op::kSpatialMean, a.id(), kNone, std::move(out)});
    }

    Var reshape(Var a, Shape shape) {
        check_mine(a);
        const Tensor& x = val(a);
        if (shape_numel(shape) != x.size()) {
            throw DimensionError("reshape to " + shape_to_string(shape) + " changes element count");
        }
        Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
        return push(Node{Op::kReshape, a.id(), kNone, std::move(out)});
    }

    // ---- vector ops ----

    Var dot(Var a, Var b) {
        check_pair_vectors(a, b, "dot");
        const Tensor& x = val(a);
        const Tensor& y = val(b);
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
        return push(Node{Op::kDot, a.id(), b.id(), Tensor::scalar(s)});
    }

    Var l2_norm(Var a) {
        const Tensor& x = nonempty(a, "l2_norm");
        return push(Node{Op::kL2Norm, a.id(), kNone, Tensor::scalar(l2_norm_value(x))});
    }

    /// Cosine similarity of two vectors, clamped into [-1, 1].
    /// Both operands must have norm above kNormEpsilon.
    Var cosine_similarity(Var a, Var b) {
        check_pair_vectors(a, b, "cosine_similarity");
        const Tensor& x = val(a);
        const Tensor& y = val(b);
        const double nx = l2_norm_value(x);
        const double ny = l2_norm_value(y);
        if (nx <= kNormEpsilon || ny <= kNormEpsilon) {
            throw DegenerateDirectionError("cosine_similarity: operand norm below 1e-12");
        }
        double c = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) c += x[i] * y[i];
        c /= nx * ny;
        return push(Node{Op::kCosine, a.id(), b.id(), Tensor::scalar(std::clamp(c, -1.0, 1.0))});
    }

    /// Cosine of a against a constant reference direction.
    ///
    /// If ||a|| <= kNormEpsilon the value is defined as 0 with zero gradient
    /// (the step-0 regularization of the directional loss). The reference
    /// must be non-degenerate.
    Var cosine_against(Var a, Tensor reference) {
        check_mine(a);
        const Tensor& x = val(a);
        if (x.size() != reference.size()) {
            throw DimensionError("cosine_against: vector lengths differ");
        }
        if (l2_norm_value(reference) <= kNormEpsilon) {
            throw DegenerateDirectionError("cosine_against: reference norm below 1e-12");
        }
        const double nx = l2_norm_value(x);
        double c = 0.0;
        if (nx > kNormEpsilon) {
            const double nr = l2_norm_value(reference);
            for (std::size_t i = 0; i < x.size(); ++i) c += x[i] * reference[i];
            c = std::clamp(c / (nx * nr), -1.0, 1.0);
        }
        Node n{Op::kCosineAgainst, a.id(), kNone, Tensor::scalar(c)};
        n.aux = std::move(reference);
        return push(std::move(n));
    }

    // ---- differentiation ----

    /// Exact reverse-mode gradient of a scalar output w.r.t. a recorded node.
    /// Repeated calls give identical results; the graph is not mutated.
    Tensor gradient(Var output, Var wrt) const {
        if (output.graph_ != this || wrt.graph_ != this) {
            throw GraphError("gradient: vars belong to a different graph");
        }
        if (!val(output).is_scalar()) {
            throw GraphError("gradient: output is not a scalar node");
        }
        if (!reachable(wrt.id(), output.id())) {
            throw GraphError("gradient: wrt node is not reachable from the output");
        }

        std::vector<Tensor> adjoint(output.id() + 1);
        std::vector<bool> active(output.id() + 1, false);
        adjoint[output.id()] = Tensor::scalar(1.0);
        active[output.id()] = true;

        for (std::size_t idx = output.id() + 1; idx-- > 0;) {
            if (!active[idx]) continue;
            backward_node(idx, adjoint, active);
        }
        if (!active[wrt.id()]) {
            // Reachable but every path contributed nothing (cannot happen with
            // the current op set; kept as a guard).
            return Tensor(val(wrt).shape(), 0.0);
        }
        return adjoint[wrt.id()];
    }

  private:
    struct ConvDims {
        std::size_t ic, oc, h, w, kh, kw;
        bool out_rank3;
    };

    friend class Var;

    const Tensor& val(Var v) const { return nodes_[v.id_].value; }

    static double mean_of(const Tensor& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
        return s / double(x.size());
    }

    void check_mine(Var v) const {
        if (v.graph_ != this) throw GraphError("operand belongs to a different graph");
    }

    const Tensor& nonempty(Var a, const char* name) {
        check_mine(a);
        const Tensor& x = val(a);
        if (x.empty()) throw DimensionError(std::string(name) + ": empty tensor");
        return x;
    }

    void check_pair_vectors(Var a, Var b, const char* name) const {
        check_mine(a);
        check_mine(b);
        if (val(a).empty() || val(b).empty()) {
            throw DimensionError(std::string(name) + ": empty tensor");
        }
        if (val(a).size() != val(b).size()) {
            throw DimensionError(std::string(name) + ": vector lengths differ, " +
                                 shape_to_string(val(a).shape()) + " vs " +
                                 shape_to_string(val(b).shape()));
        }
    }

    Var push_leaf(Op op, Tensor value) {
        if (value.empty()) throw DimensionError("graph leaf holds an empty tensor");
        return push(Node{op, kNone, kNone, std::move(value)});
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    Var binary(Op op, Var a, Var b) {
        check_mine(a);
        check_mine(b);
        const Tensor& x = val(a);
        const Tensor& y = val(b);
        auto f = [op](double u, double v) {
            switch (op) {
                case Op::kAdd: return u + v;
                case Op::kSub: return u - v;
                case Op::kMul: return u * v;
                default: return u / v;
            }
        };
        Tensor out = detail::broadcast_binary(x, y, f, op_name(op));
        return push(Node{op, a.id(), b.id(), std::move(out)});
    }

    static const char* op_name(Op op) {
        switch (op) {
            case Op::kAdd: return "add";
            case Op::kSub: return "sub";
            case Op::kMul: return "mul";
            case Op::kDiv: return "div";
            default: return "op";
        }
    }

    // True when `to` is reachable from `from` along parent->child edges.
    bool reachable(std::size_t from, std::size_t to) const {
        if (from == to) return true;
        std::vector<bool> mark(to + 1, false);
        mark[from] = true;
        for (std::size_t i = from + 1; i <= to; ++i) {
            const Node& n = nodes_[i];
            if ((n.a != kNone && n.a <= to && mark[n.a]) ||
                (n.b != kNone && n.b <= to && mark[n.b])) {
                mark[i] = true;
            }
        }
        return mark[to];
    }

    void accumulate(std::vector<Tensor>& adjoint, std::vector<bool>& active, std::size_t id,
                    const Tensor& g) const {
        if (!active[id]) {
            adjoint[id] = g;
            active[id] = true;
        } else {
            adjoint[id] = advgen::add(adjoint[id], g);
        }
    }

    // Adjoint of a broadcast binary operand: sums over the broadcast when the
    // operand was scalar.
    void accumulate_binary(std::vector<Tensor>& adjoint, std::vector<bool>& active, std::size_t id,
                           const Tensor& contribution) const {
        const Tensor& operand = nodes_[id].value;
        if (operand.same_shape(contribution)) {
            accumulate(adjoint, active, id, contribution);
            return;
        }
        double s = 0.0;
        for (std::size_t i = 0; i < contribution.size(); ++i) s += contribution[i];
        accumulate(adjoint, active, id, Tensor::scalar(s));
    }

    void backward_node(std::size_t idx, std::vector<Tensor>& adjoint,
                       std::vector<bool>& active) const {
        const Node& n = nodes_[idx];
        const Tensor& g = adjoint[idx];
        switch (n.op) {
            case Op::kLeaf:
            case Op::kConstant:
                return;
            case Op::kAdd: {
                accumulate_binary(adjoint, active, n.a, g);
                accumulate_binary(adjoint, active, n.b, g);
                return;
            }
            case Op::kSub: {
                accumulate_binary(adjoint, active, n.a, g);
                Tensor neg(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
                accumulate_binary(adjoint, active, n.b, neg);
                return;
            }
            case Op::kMul: {
                accumulate_binary(adjoint, active, n.a, advgen::mul(g, nodes_[n.b].value));
                accumulate_binary(adjoint, active, n.b, advgen::mul(g, nodes_[n.a].value));
                return;
            }
            case Op::kDiv: {
                const Tensor& num = nodes_[n.a].value;
                const Tensor& den = nodes_[n.b].value;
                Tensor ga = detail::broadcast_binary(
                    g, den, [](double gg, double d) { return gg / d; }, "div");
                accumulate_binary(adjoint, active, n.a, ga);
                // d/d den (num/den) = -num/den^2, with broadcast handled on num.
                Tensor scaled = detail::broadcast_binary(
                    g, num, [](double gg, double nu) { return gg * nu; }, "div");
                Tensor gb = detail::broadcast_binary(
                    scaled, den, [](double s, double d) { return -s / (d * d); }, "div");
                accumulate_binary(adjoint, active, n.b, gb);
                return;
            }
            case Op::kTanh: {
                const Tensor& y = n.value;
                Tensor ga(y.shape());
                for (std::size_t i = 0; i < y.size(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
                accumulate(adjoint, active, n.a, ga);
                return;
            }
            case Op::kConv2d: {
                conv_backward(n, g, adjoint, active);
                return;
            }
            case Op::kMean: {
                const Tensor& x = nodes_[n.a].value;
                const double s = g[0] / double(x.size());
                accumulate(adjoint, active, n.a, Tensor(x.shape(), s));
                return;
            }
            case Op::kSumAbs: {
                const Tensor& x = nodes_[n.a].value;
                Tensor ga(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) {
                    ga[i] = g[0] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
                }
                accumulate(adjoint, active, n.a, ga);
                return;
            }
            case Op::kVariance: {
                const Tensor& x = nodes_[n.a].value;
                const double mu = mean_of(x);
                const double scale = 2.0 * g[0] / double(x.size());
                Tensor ga(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) ga[i] = scale * (x[i] - mu);
                accumulate(adjoint, active, n.a, ga);
                return;
            }
            case Op::kSpatialMean: {
                const Tensor& x = nodes_[n.a].value;
                Tensor ga(x.shape());
                if (x.shape().size() == 3) {
                    const std::size_t hw = x.shape()[1] * x.shape()[2];
                    for (std::size_t c = 0; c < x.shape()[0]; ++c) {
                        const double s = g[c] / double(hw);
                        for (std::size_t i = 0; i < hw; ++i) ga[c * hw + i] = s;
                    }
                } else {
                    const double s = g[0] / double(x.size());
                    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = s;
                }
                accumulate(adjoint, active, n.a, ga);
                return;
            }
            case Op::kReshape: {
                const Tensor& x = nodes_[n.a].value;
                Tensor ga(x.shape(), std::vector<double>(g.data().begin(), g.data().end()));
                accumulate(adjoint, active, n.a, ga);
                return;
            }
            case Op::kDot: {
                const Tensor& x = nodes_[n.a].value;
                const Tensor& y = nodes_[n.b].value;
                Tensor ga(x.shape());
                Tensor gb(y.shape());
                for (std::size_t i = 0; i < x.size(); ++i) {
                    ga[i] = g[0] * y[i];
                    gb[i] = g[0] * x[i];
                }
                accumulate(adjoint, active, n.a, ga);
                accumulate(adjoint, active, n.b, gb);
                return;
            }
            case Op::kL2Norm: {
                const Tensor& x = nodes_[n.a].value;
                const double norm = n.value[0];
                Tensor ga(x.shape(), 0.0);
                if (norm > kNormEpsilon) {
                    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[0] * x[i] / norm;
                }
                accumulate(adjoint, active, n.a, ga);
                return;
            }
            case Op::kCosine: {
                const Tensor& x = nodes_[n.a].value;
                const Tensor& y = nodes_[n.b].value;
                const double nx = l2_norm_value(x);
                const double ny = l2_norm_value(y);
                double d = 0.0;
                for (std::size_t i = 0; i < x.size(); ++i) d += x[i] * y[i];
                const double c = d / (nx * ny);
                Tensor ga(x.shape());
                Tensor gb(y.shape());
                for (std::size_t i = 0; i < x.size(); ++i) {
                    ga[i] = g[0] * (y[i] / (nx * ny) - c * x[i] / (nx * nx));
                    gb[i] = g[0] * (x[i] / (nx * ny) - c * y[i] / (ny * ny));
                }
                accumulate(adjoint, active, n.a, ga);
                accumulate(adjoint, active, n.b, gb);
                return;
            }
            case Op::kCosineAgainst: {
                const Tensor& x = nodes_[n.a].value;
                const Tensor& r = n.aux;
                const double nx = l2_norm_value(x);
                Tensor ga(x.shape(), 0.0);
                if (nx > kNormEpsilon) {
                    const double nr = l2_norm_value(r);
                    double d = 0.0;
                    for (std::size_t i = 0; i < x.size(); ++i) d += x[i] * r[i];
                    const double c = d / (nx * nr);
                    for (std::size_t i = 0; i < x.size(); ++i) {
                        ga[i] = g[0] * (r[i] / (nx * nr) - c * x[i] / (nx * nx));
                    }
                }
                accumulate(adjoint, active, n.a, ga);
                return;
            }
        }
    }

    // ---- convolution internals ----

    static ConvDims conv_dims(const Shape& in, const Shape& k) {
        ConvDims d{};
        if (in.size() == 2 && k.size() == 2) {
            d = {1, 1, in[0], in[1], k[0], k[1], false};
        } else if (in.size() == 3 && k.size() == 4) {
            if (k[1] != in[0]) {
                throw DimensionError("conv2d: kernel input channels " + std::to_string(k[1]) +
                                     " do not match input channels " + std::to_string(in[0]));
            }
            d = {in[0], k[0], in[1], in[2], k[2], k[3], true};
        } else {
            throw DimensionError("conv2d: expected HxW with KhxKw or CxHxW with OxCxKhxKw, got " +
                                 shape_to_string(in) + " and " + shape_to_string(k));
        }
        if (d.kh % 2 == 0 || d.kw % 2 == 0) {
            throw ConfigError("conv2d: kernel spatial dims must be odd, got " +
                              std::to_string(d.kh) + "x" + std::to_string(d.kw));
        }
        if (d.h < d.kh || d.w < d.kw) {
            throw DimensionError("conv2d: input spatial dims smaller than kernel");
        }
        return d;
    }

    // Mirror index without repeating the edge sample; size 1 collapses to 0.
    static std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
        if (n == 1) return 0;
        if (i < 0) return -i;
        if (i >= n) return 2 * n - 2 - i;
        return i;
    }

    static void conv_forward(const Tensor& in, const Tensor& k, const ConvDims& d, Padding pad,
                             Tensor& out) {
        const std::ptrdiff_t h = std::ptrdiff_t(d.h), w = std::ptrdiff_t(d.w);
        const std::ptrdiff_t rh = std::ptrdiff_t(d.kh / 2), rw = std::ptrdiff_t(d.kw / 2);
        for (std::size_t o = 0; o < d.oc; ++o) {
            for (std::ptrdiff_t y = 0; y < h; ++y) {
                for (std::ptrdiff_t x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < d.ic; ++c) {
                        for (std::ptrdiff_t u = -rh; u <= rh; ++u) {
                            for (std::ptrdiff_t v = -rw; v <= rw; ++v) {
                                std::ptrdiff_t yy = y + u, xx = x + v;
                                if (pad == Padding::kReflect) {
                                    yy = reflect_index(yy, h);
                                    xx = reflect_index(xx, w);
                                } else if (yy < 0 || yy >= h || xx < 0 || xx >= w) {
                                    continue;
                                }
                                const double kv =
                                    k[((o * d.ic + c) * d.kh + std::size_t(u + rh)) * d.kw +
                                      std::size_t(v + rw)];
                                acc += kv * in[(c * d.h + std::size_t(yy)) * d.w + std::size_t(xx)];
                            }
                        }
                    }
                    out[(o * d.h + std::size_t(y)) * d.w + std::size_t(x)] = acc;
                }
            }
        }
    }

    void conv_backward(const Node& n, const Tensor& g, std::vector<Tensor>& adjoint,
                       std::vector<bool>& active) const {
        const Tensor& in = nodes_[n.a].value;
        const Tensor& k = nodes_[n.b].value;
        const ConvDims d = conv_dims(in.shape(), k.shape());
        const std::ptrdiff_t h = std::ptrdiff_t(d.h), w = std::ptrdiff_t(d.w);
        const std::ptrdiff_t rh = std::ptrdiff_t(d.kh / 2), rw = std::ptrdiff_t(d.kw / 2);
        Tensor gin(in.shape(), 0.0);
        Tensor gk(k.shape(), 0.0);
        for (std::size_t o = 0; o < d.oc; ++o) {
            for (std::ptrdiff_t y = 0; y < h; ++y) {
                for (std::ptrdiff_t x = 0; x < w; ++x) {
                    const double go = g[(o * d.h + std::size_t(y)) * d.w + std::size_t(x)];
                    if (go == 0.0) continue;
                    for (std::size_t c = 0; c < d.ic; ++c) {
                        for (std::ptrdiff_t u = -rh; u <= rh; ++u) {
                            for (std::ptrdiff_t v = -rw; v <= rw; ++v) {
                                std::ptrdiff_t yy = y + u, xx = x + v;
                                if (n.padding == Padding::kReflect) {
                                    yy = reflect_index(yy, h);
                                    xx = reflect_index(xx, w);
                                } else if (yy < 0 || yy >= h || xx < 0 || xx >= w) {
                                    continue;
                                }
                                const std::size_t ki =
                                    ((o * d.ic + c) * d.kh + std::size_t(u + rh)) * d.kw +
                                    std::size_t(v + rw);
                                const std::size_t ii =
                                    (c * d.h + std::size_t(yy)) * d.w + std::size_t(xx);
                                gin[ii] += go * k[ki];
                                gk[ki] += go * in[ii];
                            }
                        }
                    }
                }
            }
        }
        accumulate(adjoint, active, n.a, gin);
        accumulate(adjoint, active, n.b, gk);
    }

    // deque: appending nodes must not invalidate references handed out
    // by Var::value() while a forward pass is still being recorded
    std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value_of(id_); }

// Free-function spellings so expressions read naturally.
inline Var add(Var a, Var b) { return a.graph().add(a, b); }
inline Var sub(Var a, Var b) { return a.graph().sub(a, b); }
inline Var mul(Var a, Var b) { return a.graph().mul(a, b); }
inline Var div(Var a, Var b) { return a.graph().div(a, b); }
inline Var tanh(Var a) { return a.graph().tanh(a); }
inline Var conv2d(Var input, Var kernel, Padding padding) {
    return input.graph().conv2d(input, kernel, padding);
}
inline Var reduce_mean(Var a) { return a.graph().reduce_mean(a); }
inline Var reduce_sum_abs(Var a) { return a.graph().reduce_sum_abs(a); }
inline Var reduce_variance(Var a) { return a.graph().reduce_variance(a); }
inline Var spatial_mean(Var a) { return a.graph().spatial_mean(a); }
inline Var reshape(Var a, Shape shape) { return a.graph().reshape(a, std::move(shape)); }
inline Var dot(Var a, Var b) { return a.graph().dot(a, b); }
inline Var l2_norm(Var a) { return a.graph().l2_norm(a); }
inline Var cosine_similarity(Var a, Var b) { return a.graph().cosine_similarity(a, b); }
inline Var cosine_against(Var a, Tensor reference) {
    return a.graph().cosine_against(a, std::move(reference));
}

/// Truncation happens after gradients are taken, never inside them, so a
/// recorded clamp is rejected rather than silently passed through.
[[noreturn]] inline Var clip(Var, double, double) {
    throw GraphError("clip is not differentiable; apply advgen::clip to tensors outside the graph");
}

/// Central-difference gradient estimate of f at x, component by component.
/// The library's independent oracle for gradient verification.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h) {
    if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step size must be positive");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace advgen
