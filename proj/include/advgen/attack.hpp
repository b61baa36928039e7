#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "advgen/error.hpp"
#include "advgen/graph.hpp"
#include "advgen/models.hpp"
#include "advgen/rng.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

enum class LossVariant { kUntargetedL1, kUntargetedVar, kTargetedDirectional };
enum class ReferenceKind { kNone, kEmbeddingPair, kReferenceImage };
enum class TruncationMode { kNoiseTrunc, kSampleClip };

/// Attack loss selection. The targeted variant carries exactly one reference
/// form: an embedding pair (text guidance supplied as precomputed vectors) or
/// a reference image.
struct LossSpec {
    LossVariant variant = LossVariant::kUntargetedL1;
    ReferenceKind reference = ReferenceKind::kNone;
    Tensor ref_embedding;  // unit vector, embedding-pair branch
    Tensor src_embedding;  // unit vector, embedding-pair branch
    Tensor ref_image;      // reference-image branch

    static LossSpec untargeted_l1() { return LossSpec{}; }

    static LossSpec untargeted_var() {
        LossSpec s;
        s.variant = LossVariant::kUntargetedVar;
        return s;
    }

    static LossSpec targeted_pair(Tensor e_ref, Tensor e_src) {
        LossSpec s;
        s.variant = LossVariant::kTargetedDirectional;
        s.reference = ReferenceKind::kEmbeddingPair;
        s.ref_embedding = std::move(e_ref);
        s.src_embedding = std::move(e_src);
        return s;
    }

    static LossSpec targeted_image(Tensor image) {
        LossSpec s;
        s.variant = LossVariant::kTargetedDirectional;
        s.reference = ReferenceKind::kReferenceImage;
        s.ref_image = std::move(image);
        return s;
    }

    bool targeted() const { return variant == LossVariant::kTargetedDirectional; }

    void validate() const {
        if (targeted() && reference == ReferenceKind::kNone) {
            throw ConfigError("targeted loss requires an embedding pair or a reference image");
        }
        if (!targeted() && reference != ReferenceKind::kNone) {
            throw ConfigError("untargeted loss cannot carry a reference");
        }
    }
};

/// Per-condition step size: a fixed value when lo == hi, otherwise one
/// uniform draw from [lo, hi] at attack init.
struct EpsilonInterval {
    double lo = 0.01;
    double hi = 0.01;

    static EpsilonInterval constant(double v) { return {v, v}; }
};

struct AttackConfig {
    int steps = 10;
    EpsilonInterval epsilon0;
    double decay = 0.95;
    double init_noise_delta = 1e-4;
    double c_min = -0.09;
    double c_max = 0.09;
    TruncationMode truncation = TruncationMode::kNoiseTrunc;
    LossSpec loss;
    std::uint64_t seed = 0;
    double domain_min = 0.0;
    double domain_max = 1.0;

    void validate() const {
        if (steps < 1) throw ConfigError("attack: steps must be >= 1");
        // epsilon = 0 is allowed as the deterministic no-op control run.
        if (epsilon0.lo < 0.0 || epsilon0.lo > epsilon0.hi) {
            throw ConfigError("attack: epsilon interval must satisfy 0 <= lo <= hi");
        }
        if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("attack: decay must be in (0, 1]");
        if (init_noise_delta < 0.0) throw ConfigError("attack: init noise delta must be >= 0");
        if (!(c_min <= 0.0 && 0.0 <= c_max)) {
            throw ConfigError("attack: noise bounds must satisfy c_min <= 0 <= c_max");
        }
        if (!(domain_min < domain_max)) throw ConfigError("attack: empty domain range");
        loss.validate();
    }
};

/// One uniform draw from the interval; a degenerate interval is a constant.
inline double sample_epsilon(const EpsilonInterval& interval, Rng& rng) {
    if (interval.lo < 0.0 || interval.lo > interval.hi) {
        throw ConfigError("sample_epsilon: interval must satisfy 0 <= lo <= hi");
    }
    if (interval.lo == interval.hi) return interval.lo;
    return rng.uniform(interval.lo, interval.hi);
}

/// x + z0 with z0 ~ N(0, delta^2) i.i.d., optionally gated by a binary mask,
/// clamped to the domain range. The same seed yields the same noise pattern
/// whatever the mask, because a value is drawn for every component.
inline Tensor init_perturbation(const Tensor& x, double delta, Rng& rng,
                                const Tensor* mask = nullptr, double domain_min = 0.0,
                                double domain_max = 1.0) {
    if (delta < 0.0) throw ConfigError("init_perturbation: delta must be >= 0");
    if (delta == 0.0) return x;
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = delta * rng.gaussian();
        const double gate = mask ? (*mask)[i] : 1.0;
        out[i] = std::clamp(x[i] + gate * z, domain_min, domain_max);
    }
    return out;
}

/// Statistical attack losses: L1 distance from the default output, or the
/// output pixel variance. Returned as a scalar node on y_cur's graph; the
/// attack ascends it.
inline Var untargeted_loss(LossVariant variant, Var y_cur, const Tensor& y_default) {
    Graph& g = y_cur.graph();
    if (variant == LossVariant::kUntargetedL1) {
        if (!y_cur.value().same_shape(y_default)) {
            throw DimensionError("untargeted_loss: output and default shapes differ");
        }
        return reduce_sum_abs(sub(y_cur, g.constant(y_default)));
    }
    if (variant == LossVariant::kUntargetedVar) {
        return reduce_variance(y_cur);
    }
    throw ConfigError("untargeted_loss: targeted variant passed to untargeted builder");
}

/// Precomputed per-attack constants of the directional loss: the default
/// output's embedding and the reference displacement (computed once, cached).
struct DirectionalContext {
    Tensor default_embedding;
    Tensor delta_r;
};

inline DirectionalContext make_directional_context(const LossSpec& spec, const Embedder& embedder,
                                                   const Tensor& y_default) {
    if (!spec.targeted()) throw ConfigError("directional context requires a targeted loss");
    DirectionalContext ctx;
    ctx.default_embedding = embedder.embed(y_default);
    if (spec.reference == ReferenceKind::kEmbeddingPair) {
        if (spec.ref_embedding.size() != embedder.dim() ||
            spec.src_embedding.size() != embedder.dim()) {
            throw ConfigError("embedding pair dimension does not match the embedder");
        }
        ctx.delta_r = sub(spec.ref_embedding, spec.src_embedding);
    } else {
        ctx.delta_r = sub(embedder.embed(spec.ref_image), ctx.default_embedding);
    }
    if (l2_norm_value(ctx.delta_r) <= Graph::kNormEpsilon) {
        throw DegenerateDirectionError(
            "directional reference displacement is degenerate (identical endpoints)");
    }
    return ctx;
}

/// Embedding displacement of the current output from the default output,
/// differentiable through y_cur.
inline Var directional_delta_i(Var y_cur, const DirectionalContext& ctx, const Embedder& embedder) {
    Graph& g = y_cur.graph();
    return sub(embedder.embed_graph(g, y_cur), g.constant(ctx.default_embedding));
}

/// Cosine of the output displacement against the reference displacement.
/// ||delta_i|| <= 1e-12 yields 0 with zero gradient so the random init
/// carries the first move.
inline Var directional_loss(Var delta_i, const Tensor& delta_r) {
    return cosine_against(delta_i, delta_r);
}

namespace detail {

inline Tensor gate_by_mask(Tensor move, const Tensor* mask) {
    if (!mask) return move;
    for (std::size_t i = 0; i < move.size(); ++i) move[i] *= (*mask)[i];
    return move;
}

/// Shared truncation of a raw additive move. Noise truncation clamps the
/// cumulative perturbation to [c_min, c_max] before re-adding it to the
/// original; sample clip bounds the sample by the domain range alone.
inline Tensor apply_move(const Tensor& x_orig, const Tensor& x_cur, const Tensor& move,
                         TruncationMode mode, double c_min, double c_max, double domain_min,
                         double domain_max, const Tensor* mask) {
    Tensor out(x_cur.shape());
    for (std::size_t i = 0; i < x_cur.size(); ++i) {
        if (mask && (*mask)[i] == 0.0) {
            out[i] = x_cur[i];
            continue;
        }
        double v;
        if (mode == TruncationMode::kNoiseTrunc) {
            const double pert = std::clamp(x_cur[i] - x_orig[i] + move[i], c_min, c_max);
            v = x_orig[i] + pert;
        } else {
            v = x_cur[i] + move[i];
        }
        out[i] = std::clamp(v, domain_min, domain_max);
    }
    return out;
}

}  // namespace detail

/// Noise-truncation update: x + clip(x_i - x + eps*sign(grad), c_min, c_max),
/// then the domain clamp. Masked-out components are left unchanged.
inline Tensor attack_step_noise_trunc(const Tensor& x, const Tensor& x_i, const Tensor& grad,
                                      double eps_i, double c_min, double c_max,
                                      double domain_min = 0.0, double domain_max = 1.0,
                                      const Tensor* mask = nullptr) {
    if (!x.same_shape(x_i) || !x.same_shape(grad)) {
        throw DimensionError("attack_step_noise_trunc: shape mismatch");
    }
    if (!(eps_i > 0.0)) throw ConfigError("attack_step_noise_trunc: eps must be positive");
    Tensor move = mul(sign(grad), Tensor::scalar(eps_i));
    return detail::apply_move(x, x_i, move, TruncationMode::kNoiseTrunc, c_min, c_max, domain_min,
                              domain_max, mask);
}

/// Plain PGD update: x_i + eps*sign(grad) clamped to the domain range only,
/// so the cumulative perturbation is unbounded. Kept for the contrast with
/// noise truncation.
inline Tensor attack_step_sample_clip(const Tensor& x_i, const Tensor& grad, double eps_i,
                                      double domain_min = 0.0, double domain_max = 1.0,
                                      const Tensor* mask = nullptr) {
    if (!x_i.same_shape(grad)) throw DimensionError("attack_step_sample_clip: shape mismatch");
    if (!(eps_i > 0.0)) throw ConfigError("attack_step_sample_clip: eps must be positive");
    Tensor move = mul(sign(grad), Tensor::scalar(eps_i));
    return detail::apply_move(x_i, x_i, move, TruncationMode::kSampleClip, 0.0, 0.0, domain_min,
                              domain_max, mask);
}

/// Per-step log entry. eps and linf_perturbation have one slot per
/// perturbable condition, in schema order.
struct TraceRecord {
    int step = 0;
    double loss = 0.0;
    std::vector<double> eps;
    std::vector<double> linf_perturbation;
    double l1_output_delta = 0.0;
};

struct AttackTrace {
    std::vector<std::string> perturbable_names;
    std::vector<TraceRecord> records;
};

struct AttackResult {
    Tensor default_output;
    std::vector<Tensor> step_outputs;  // regenerated output after each step
    ConditionSet final_conditions;
    AttackTrace trace;
    // Cumulative perturbation (x_i - x) after each step, one tensor per
    // perturbable condition.
    std::vector<std::vector<Tensor>> step_perturbations;

    const Tensor& final_output() const {
        return step_outputs.empty() ? default_output : step_outputs.back();
    }
};

/// Update rule plugged into the attack loop. The sign attack and the
/// optimizer baseline share everything else: init, truncation, domain clamp,
/// loss, and trace schema.
class UpdatePolicy {
  public:
    virtual ~UpdatePolicy() = default;

    /// Raw additive move for condition `cond` at `step`, given the gradient
    /// of the ascended loss and the decayed step size.
    virtual Tensor move(std::size_t cond, int step, const Tensor& grad, double eps_i) = 0;

    /// Step-size value recorded in the trace for this policy.
    virtual double recorded_eps(double eps_i) const { return eps_i; }
};

class SignPolicy final : public UpdatePolicy {
  public:
    Tensor move(std::size_t, int, const Tensor& grad, double eps_i) override {
        return mul(sign(grad), Tensor::scalar(eps_i));
    }
};

/// Full multi-step, multi-condition attack loop.
///
/// Gradient snapshot semantics: within a step, the gradients of every
/// perturbable condition are taken at the frozen snapshot X_i (one reverse
/// pass), then all updates are applied together, then the output is
/// regenerated from X_{i+1}. eps decays geometrically per step; the draw from
/// the epsilon interval happens once per condition at init.
inline AttackResult run_attack_with_policy(const Generator& model, const ConditionSet& conditions,
                                           const AttackConfig& cfg, const Embedder* embedder,
                                           UpdatePolicy& policy) {
    cfg.validate();
    model.validate(conditions);
    if (cfg.loss.targeted() && embedder == nullptr) {
        throw ConfigError("targeted attack requires an embedder");
    }

    Rng rng(cfg.seed);
    AttackResult result;
    result.default_output = generate(model, conditions);

    std::optional<DirectionalContext> dctx;
    if (cfg.loss.targeted()) {
        dctx = make_directional_context(cfg.loss, *embedder, result.default_output);
    }

    std::vector<std::size_t> perturbable;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        if (conditions.at(i).perturbable) {
            perturbable.push_back(i);
            result.trace.perturbable_names.push_back(conditions.at(i).name);
        }
    }

    // Per-condition eps, drawn once (schema order), then the noisy init.
    std::vector<double> eps_cur(perturbable.size());
    for (std::size_t k = 0; k < perturbable.size(); ++k) {
        eps_cur[k] = sample_epsilon(cfg.epsilon0, rng);
    }
    ConditionSet state = conditions;
    for (std::size_t k : perturbable) {
        ConditionEntry& e = state.at(k);
        const Tensor* mask = e.perturb_mask ? &*e.perturb_mask : nullptr;
        e.value = init_perturbation(e.value, cfg.init_noise_delta, rng, mask, cfg.domain_min,
                                    cfg.domain_max);
    }

    for (int step = 1; step <= cfg.steps; ++step) {
        Graph g;
        std::vector<Var> inputs;
        std::vector<Var> leaves;
        inputs.reserve(state.size());
        leaves.reserve(perturbable.size());
        for (std::size_t i = 0; i < state.size(); ++i) {
            if (state.at(i).perturbable) {
                Var v = g.leaf(state.at(i).value);
                inputs.push_back(v);
                leaves.push_back(v);
            } else {
                inputs.push_back(g.constant(state.at(i).value));
            }
        }

        Var y_var = model.forward(g, inputs);
        const Var loss_var = [&] {
            if (cfg.loss.targeted()) {
                return directional_loss(directional_delta_i(y_var, *dctx, *embedder),
                                        dctx->delta_r);
            }
            return untargeted_loss(cfg.loss.variant, y_var, result.default_output);
        }();
        const double loss_value = loss_var.value().value();
        if (!std::isfinite(loss_value)) {
            throw NumericError("non-finite attack loss at step " + std::to_string(step));
        }

        TraceRecord rec;
        rec.step = step;
        rec.loss = loss_value;
        std::vector<Tensor> perts;
        for (std::size_t k = 0; k < perturbable.size(); ++k) {
            const std::size_t ci = perturbable[k];
            const Tensor grad = g.gradient(loss_var, leaves[k]);
            const ConditionEntry& orig = conditions.at(ci);
            ConditionEntry& cur = state.at(ci);
            const Tensor* mask = cur.perturb_mask ? &*cur.perturb_mask : nullptr;
            Tensor move = detail::gate_by_mask(policy.move(k, step, grad, eps_cur[k]), mask);
            cur.value = detail::apply_move(orig.value, cur.value, move, cfg.truncation, cfg.c_min,
                                           cfg.c_max, cfg.domain_min, cfg.domain_max, mask);
            rec.eps.push_back(policy.recorded_eps(eps_cur[k]));
            Tensor pert = sub(cur.value, orig.value);
            rec.linf_perturbation.push_back(linf_norm(pert));
            perts.push_back(std::move(pert));
        }
        result.step_perturbations.push_back(std::move(perts));

        Tensor y_next = generate(model, state);
        rec.l1_output_delta = l1_distance(y_next, result.default_output);
        result.step_outputs.push_back(std::move(y_next));
        result.trace.records.push_back(std::move(rec));

        for (double& e : eps_cur) e *= cfg.decay;
    }

    result.final_conditions = std::move(state);
    return result;
}

/// Sign-gradient attack (the primary method).
inline AttackResult run_attack(const Generator& model, const ConditionSet& conditions,
                               const AttackConfig& cfg, const Embedder* embedder = nullptr) {
    SignPolicy policy;
    return run_attack_with_policy(model, conditions, cfg, embedder, policy);
}

}  // namespace advgen
