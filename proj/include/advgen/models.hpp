#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advgen/error.hpp"
#include "advgen/graph.hpp"
#include "advgen/rng.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

enum class ConditionRole { kImage, kMask, kStyleReference };

struct ConditionSpec {
    std::string name;
    Shape shape;
    ConditionRole role;
};

/// One named condition tensor plus its perturbation policy. An absent
/// perturb_mask means the whole tensor may be perturbed; a binary mask
/// restricts perturbation to its 1-entries.
struct ConditionEntry {
    std::string name;
    Tensor value;
    bool perturbable = true;
    std::optional<Tensor> perturb_mask;
};

/// Ordered set of named condition tensors matching a generator's schema.
class ConditionSet {
  public:
    ConditionSet() = default;

    void add(ConditionEntry entry) { entries_.push_back(std::move(entry)); }

    std::size_t size() const { return entries_.size(); }
    const ConditionEntry& at(std::size_t i) const { return entries_[i]; }
    ConditionEntry& at(std::size_t i) { return entries_[i]; }

    const ConditionEntry* find(const std::string& name) const {
        for (const auto& e : entries_) {
            if (e.name == name) return &e;
        }
        return nullptr;
    }

    std::vector<ConditionEntry>& entries() { return entries_; }
    const std::vector<ConditionEntry>& entries() const { return entries_; }

  private:
    std::vector<ConditionEntry> entries_;
};

/// Deterministic conditional generator: a pure function of (frozen
/// parameters, conditions), differentiable w.r.t. every perturbable
/// condition. Implement this interface to bind an external model; the attack
/// machinery only sees this surface.
class Generator {
  public:
    virtual ~Generator() = default;

    virtual std::string id() const = 0;
    virtual const std::vector<ConditionSpec>& schema() const = 0;

    /// Records the forward pass on `g`. `inputs` follow the schema order.
    virtual Var forward(Graph& g, const std::vector<Var>& inputs) const = 0;

    void validate(const ConditionSet& conditions) const {
        const auto& spec = schema();
        if (conditions.size() != spec.size()) {
            throw ConditionError(id() + ": expected " + std::to_string(spec.size()) +
                                 " conditions, got " + std::to_string(conditions.size()));
        }
        for (std::size_t i = 0; i < spec.size(); ++i) {
            const ConditionEntry& e = conditions.at(i);
            if (e.name != spec[i].name) {
                throw ConditionError(id() + ": condition " + std::to_string(i) + " is named '" +
                                     e.name + "', schema says '" + spec[i].name + "'");
            }
            if (e.value.shape() != spec[i].shape) {
                throw ConditionError(id() + ": condition '" + e.name + "' has shape " +
                                     shape_to_string(e.value.shape()) + ", schema says " +
                                     shape_to_string(spec[i].shape));
            }
            if (spec[i].role == ConditionRole::kImage &&
                (min_value(e.value) < 0.0 || max_value(e.value) > 1.0)) {
                throw ConditionError(id() + ": image condition '" + e.name +
                                     "' has values outside [0,1]");
            }
            if (spec[i].role == ConditionRole::kMask && e.perturbable) {
                throw ConditionError(id() + ": mask condition '" + e.name +
                                     "' cannot be perturbable");
            }
            if (e.perturb_mask) {
                if (e.perturb_mask->shape() != e.value.shape()) {
                    throw ConditionError(id() + ": perturbation mask shape mismatch on '" +
                                         e.name + "'");
                }
                for (std::size_t j = 0; j < e.perturb_mask->size(); ++j) {
                    const double v = (*e.perturb_mask)[j];
                    if (v != 0.0 && v != 1.0) {
                        throw ConditionError(id() + ": perturbation mask on '" + e.name +
                                             "' is not binary");
                    }
                }
            }
        }
    }
};

/// Evaluates the generator on concrete conditions (fresh graph, no leaves).
inline Tensor generate(const Generator& model, const ConditionSet& conditions) {
    model.validate(conditions);
    Graph g;
    std::vector<Var> inputs;
    inputs.reserve(conditions.size());
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        inputs.push_back(g.constant(conditions.at(i).value));
    }
    return model.forward(g, inputs).value();
}

namespace detail {

inline void check_binary_mask(const Tensor& mask) {
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0.0 && mask[i] != 1.0) {
            throw ConditionError("mask is not binary (values must be exactly 0 or 1)");
        }
    }
}

inline Tensor random_kernel(Rng& rng, const Shape& shape, std::size_t fan_in) {
    Tensor k(shape);
    const double scale = 1.0 / std::sqrt(double(fan_in));
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = scale * rng.gaussian();
    return k;
}

}  // namespace detail

/// Records `k_iters` Jacobi sweeps where each masked pixel becomes the mean
/// of its in-bounds 4-neighbors and unmasked pixels stay fixed at the input.
/// Linear in the image; every iterate is a convex combination of input
/// pixels, so outputs stay inside [min(input), max(input)].
inline Var diffusion_fill_graph(Graph& g, Var image, const Tensor& mask, int k_iters) {
    const Tensor& img = image.value();
    if (img.shape().size() != 2) {
        throw ConditionError("diffusion_fill expects an HxW image, got " +
                             shape_to_string(img.shape()));
    }
    if (!img.same_shape(mask)) {
        throw ConditionError("diffusion_fill: image and mask shapes differ");
    }
    detail::check_binary_mask(mask);
    if (k_iters < 1) throw ConfigError("diffusion_fill: k_iters must be positive");

    const std::size_t h = img.shape()[0], w = img.shape()[1];
    if (h == 1 && w == 1) {
        if (mask[0] != 0.0) throw ConditionError("diffusion_fill: a 1x1 image has no neighbors");
        return image;
    }
    if (h == 2 || w == 2) {
        throw ConditionError("diffusion_fill: spatial dims of 2 are unsupported (use 1 or >= 3)");
    }
    // 4-neighbor sum kernel, shrunk along degenerate (size-1) axes so strips
    // keep satisfying conv2d's kernel-fits-input precondition.
    const std::size_t kh = h >= 3 ? 3 : 1, kw = w >= 3 ? 3 : 1;
    Tensor plus(Shape{kh, kw}, 0.0);
    if (kh == 3) {
        plus.at(0, kw / 2) = 1.0;
        plus.at(2, kw / 2) = 1.0;
    }
    if (kw == 3) {
        plus.at(kh / 2, 0) = 1.0;
        plus.at(kh / 2, 2) = 1.0;
    }

    // Reciprocal of the in-bounds neighbor count per pixel.
    Tensor inv_count(img.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            int c = 0;
            if (y > 0) ++c;
            if (y + 1 < h) ++c;
            if (x > 0) ++c;
            if (x + 1 < w) ++c;
            inv_count.at(y, x) = 1.0 / double(c);
        }
    }
    Tensor keep(img.shape());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = 1.0 - mask[i];

    Var kernel = g.constant(plus);
    Var inv_c = g.constant(inv_count);
    Var mask_c = g.constant(mask);
    Var keep_c = g.constant(keep);
    Var fixed = mul(keep_c, image);

    Var cur = image;
    for (int it = 0; it < k_iters; ++it) {
        Var neighbor_mean = mul(conv2d(cur, kernel, Padding::kZero), inv_c);
        cur = add(mul(mask_c, neighbor_mean), fixed);
    }
    return cur;
}

/// Plain-tensor spelling of the fill (evaluates through a scratch graph so
/// both paths share one implementation).
inline Tensor diffusion_fill(const Tensor& image, const Tensor& mask, int k_iters) {
    Graph g;
    return diffusion_fill_graph(g, g.constant(image), mask, k_iters).value();
}

/// Toy inpainter: conditions are the degraded image and a binary mask of the
/// region to fill.
class DiffusionFillGenerator : public Generator {
  public:
    DiffusionFillGenerator(std::size_t height, std::size_t width, int k_iters = 25)
        : k_iters_(k_iters),
          schema_{{"image", Shape{height, width}, ConditionRole::kImage},
                  {"mask", Shape{height, width}, ConditionRole::kMask}} {
        if (k_iters < 1) throw ConfigError("diffusion-fill: k_iters must be positive");
    }

    std::string id() const override { return "diffusion-fill"; }
    const std::vector<ConditionSpec>& schema() const override { return schema_; }
    int k_iters() const { return k_iters_; }

    Var forward(Graph& g, const std::vector<Var>& inputs) const override {
        if (inputs.size() != 2) throw ConditionError("diffusion-fill: expected image and mask");
        return diffusion_fill_graph(g, inputs[0], inputs[1].value(), k_iters_);
    }

  private:
    int k_iters_;
    std::vector<ConditionSpec> schema_;
};

/// Toy nonlinear generator: three seeded 3x3 conv layers with tanh
/// activations and a final affine squash 0.5 + 0.5*tanh(.), so outputs live
/// in (0,1) without a clamp in the graph.
class ConvGenerator : public Generator {
  public:
    ConvGenerator(std::size_t height, std::size_t width, std::uint64_t seed = 42,
                  std::size_t channels = 4)
        : seed_(seed),
          schema_{{"input", Shape{height, width}, ConditionRole::kImage}} {
        Rng rng(seed);
        w1_ = detail::random_kernel(rng, Shape{channels, 1, 3, 3}, 9);
        w2_ = detail::random_kernel(rng, Shape{channels, channels, 3, 3}, 9 * channels);
        w3_ = detail::random_kernel(rng, Shape{1, channels, 3, 3}, 9 * channels);
    }

    std::string id() const override { return "conv-gen"; }
    const std::vector<ConditionSpec>& schema() const override { return schema_; }
    std::uint64_t seed() const { return seed_; }

    Var forward(Graph& g, const std::vector<Var>& inputs) const override {
        if (inputs.size() != 1) throw ConditionError("conv-gen: expected one input condition");
        const Shape& s = schema_[0].shape;
        Var x = reshape(inputs[0], Shape{1, s[0], s[1]});
        Var h1 = tanh(conv2d(x, g.constant(w1_), Padding::kReflect));
        Var h2 = tanh(conv2d(h1, g.constant(w2_), Padding::kReflect));
        Var h3 = tanh(conv2d(h2, g.constant(w3_), Padding::kReflect));
        Var squashed = add(mul(h3, g.constant_scalar(0.5)), g.constant_scalar(0.5));
        return reshape(squashed, s);
    }

  private:
    std::uint64_t seed_;
    std::vector<ConditionSpec> schema_;
    Tensor w1_, w2_, w3_;
};

/// Toy image embedder: two seeded conv layers with tanh, spatial average
/// pooling, then L2 normalization. Pure, differentiable, unit-norm output.
class Embedder {
  public:
    Embedder(std::size_t height, std::size_t width, std::uint64_t seed = 7, std::size_t dim = 8,
             std::size_t mid_channels = 4)
        : height_(height), width_(width), dim_(dim), seed_(seed) {
        Rng rng(seed);
        e1_ = detail::random_kernel(rng, Shape{mid_channels, 1, 3, 3}, 9);
        e2_ = detail::random_kernel(rng, Shape{dim, mid_channels, 3, 3}, 9 * mid_channels);
    }

    std::string id() const { return "toy-embedder"; }
    std::size_t dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }

    Var embed_graph(Graph& g, Var image) const {
        const Tensor& img = image.value();
        if (img.shape() != Shape{height_, width_}) {
            throw ConditionError("embedder accepts " + std::to_string(height_) + "x" +
                                 std::to_string(width_) + " images, got " +
                                 shape_to_string(img.shape()));
        }
        Var x = reshape(image, Shape{1, height_, width_});
        Var h1 = tanh(conv2d(x, g.constant(e1_), Padding::kReflect));
        Var h2 = tanh(conv2d(h1, g.constant(e2_), Padding::kReflect));
        Var pooled = spatial_mean(h2);
        if (l2_norm_value(pooled.value()) <= Graph::kNormEpsilon) {
            throw DegenerateDirectionError("embedder: pooled feature vector has zero norm");
        }
        return div(pooled, l2_norm(pooled));
    }

    Tensor embed(const Tensor& image) const {
        Graph g;
        return embed_graph(g, g.constant(image)).value();
    }

  private:
    std::size_t height_, width_, dim_;
    std::uint64_t seed_;
    Tensor e1_, e2_;
};

/// Reads a flat float vector (one value per line) and L2-normalizes it.
/// `expected_dim` of 0 skips the dimension check.
inline Tensor load_reference_embedding(const std::string& path, std::size_t expected_dim = 0) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embedding file: " + path);
    std::vector<double> values;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        double v;
        if (ss >> v) {
            values.push_back(v);
        } else {
            std::string rest;
            ss.clear();
            ss >> rest;
            if (!rest.empty()) {
                throw FormatError("embedding file " + path + ": unparsable line '" + line + "'");
            }
        }
    }
    if (values.empty()) throw FormatError("embedding file " + path + " holds no values");
    if (expected_dim != 0 && values.size() != expected_dim) {
        throw ConfigError("embedding file " + path + " has dimension " +
                          std::to_string(values.size()) + ", expected " +
                          std::to_string(expected_dim));
    }
    Tensor v = Tensor::from_vector(std::move(values));
    const double norm = l2_norm_value(v);
    if (norm <= Graph::kNormEpsilon) {
        throw DegenerateDirectionError("embedding file " + path + " holds a zero vector");
    }
    for (std::size_t i = 0; i < v.size(); ++i) v[i] /= norm;
    return v;
}

}  // namespace advgen
