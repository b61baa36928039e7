#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "advgen/attack.hpp"
#include "advgen/error.hpp"
#include "advgen/models.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

/// Adaptive-moment baseline settings. Shares loss, bounds, truncation, and
/// seed with the sign attack through `base`; only the update rule differs.
struct AdamConfig {
    AttackConfig base;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon_hat = 1e-8;

    void validate() const {
        base.validate();
        // lr = 0 is allowed as the frozen-iterate control run.
        if (lr < 0.0) throw ConfigError("adam: lr must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
            throw ConfigError("adam: betas must lie in [0, 1)");
        }
        if (!(epsilon_hat > 0.0)) throw ConfigError("adam: epsilon_hat must be positive");
    }
};

struct AdamState {
    Tensor m;
    Tensor v;

    explicit AdamState(const Shape& shape) : m(shape, 0.0), v(shape, 0.0) {}
};

namespace detail {

/// Bias-corrected ascent move lr * m_hat / (sqrt(v_hat) + eps_hat).
/// Updates the moment buffers in place; t is the 1-based step index.
inline Tensor adam_raw_move(AdamState& state, const Tensor& grad, int t, const AdamConfig& cfg) {
    if (t < 1) throw ConfigError("adam: step index must be >= 1");
    if (!state.m.same_shape(grad)) throw DimensionError("adam: moment/gradient shape mismatch");
    Tensor move(grad.shape());
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        move[i] = cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon_hat);
    }
    return move;
}

}  // namespace detail

/// One optimizer update on a condition, followed by the same truncation and
/// domain clamp as the sign attack.
inline Tensor adam_step(const Tensor& x_orig, const Tensor& x_cur, AdamState& state,
                        const Tensor& grad, int t, const AdamConfig& cfg,
                        const Tensor* mask = nullptr) {
    if (!x_orig.same_shape(x_cur) || !x_orig.same_shape(grad)) {
        throw DimensionError("adam_step: shape mismatch");
    }
    Tensor move = detail::gate_by_mask(detail::adam_raw_move(state, grad, t, cfg), mask);
    return detail::apply_move(x_orig, x_cur, move, cfg.base.truncation, cfg.base.c_min,
                              cfg.base.c_max, cfg.base.domain_min, cfg.base.domain_max, mask);
}

class AdamPolicy final : public UpdatePolicy {
  public:
    explicit AdamPolicy(const AdamConfig& cfg) : cfg_(cfg) {}

    Tensor move(std::size_t cond, int step, const Tensor& grad, double) override {
        if (states_.size() <= cond) states_.resize(cond + 1);
        if (!states_[cond]) states_[cond].emplace(grad.shape());
        return detail::adam_raw_move(*states_[cond], grad, step, cfg_);
    }

    // The trace's step-size column carries the learning rate for this policy.
    double recorded_eps(double) const override { return cfg_.lr; }

  private:
    AdamConfig cfg_;
    std::vector<std::optional<AdamState>> states_;
};

/// The optimizer-based comparison: the attack loop with adam_step substituted
/// for the sign step. Same init, truncation, domain clamp, loss, and trace
/// schema as run_attack.
inline AttackResult run_optimizer_attack(const Generator& model, const ConditionSet& conditions,
                                         const AdamConfig& cfg, const Embedder* embedder = nullptr) {
    cfg.validate();
    AdamPolicy policy(cfg);
    return run_attack_with_policy(model, conditions, cfg.base, embedder, policy);
}

enum class AttackMethod { kSign, kAdam };

enum class DivergenceMetric {
    kCrossRun,         // pairwise distance between final perturbations across trials
    kConsecutiveStep,  // distance between consecutive iterates within each trial
};

/// Init-sensitivity measurement: how far apart trajectories end up when only
/// the micro init noise differs.
struct DivergenceReport {
    std::string method;
    int trials = 0;
    DivergenceMetric metric = DivergenceMetric::kCrossRun;
    std::vector<double> distances;
    double mean_distance = 0.0;
};

inline const char* method_name(AttackMethod m) {
    return m == AttackMethod::kSign ? "sign" : "adam";
}

/// Runs the chosen method `trials` times with independent tiny inits (std
/// `delta`, everything else fixed) and reports mean pairwise L1 distance
/// between the resulting cumulative perturbations. Per-trial seeds default to
/// base seed + trial index.
inline DivergenceReport path_divergence_experiment(
    const Generator& model, const ConditionSet& conditions, AttackMethod method, int trials,
    double delta, const AdamConfig& cfg, const std::vector<std::uint64_t>& seeds = {},
    DivergenceMetric metric = DivergenceMetric::kCrossRun) {
    if (trials < 2) throw ConfigError("path divergence requires at least 2 trials");
    if (!seeds.empty() && seeds.size() != std::size_t(trials)) {
        throw ConfigError("path divergence: seed list length must equal the trial count");
    }

    // Cumulative perturbations (final - original) per trial, one tensor per
    // perturbable condition; plus per-step iterates for the consecutive metric.
    std::vector<std::vector<Tensor>> final_perts(trials);
    std::vector<std::vector<std::vector<Tensor>>> step_perts(trials);

    for (int t = 0; t < trials; ++t) {
        AdamConfig trial_cfg = cfg;
        trial_cfg.base.init_noise_delta = delta;
        trial_cfg.base.seed = seeds.empty() ? cfg.base.seed + std::uint64_t(t) : seeds[t];
        AttackResult res = method == AttackMethod::kSign
                               ? run_attack(model, conditions, trial_cfg.base)
                               : run_optimizer_attack(model, conditions, trial_cfg);
        for (std::size_t i = 0; i < conditions.size(); ++i) {
            if (!conditions.at(i).perturbable) continue;
            final_perts[t].push_back(sub(res.final_conditions.at(i).value, conditions.at(i).value));
        }
        if (metric == DivergenceMetric::kConsecutiveStep) {
            step_perts[t] = std::move(res.step_perturbations);
        }
    }

    DivergenceReport report;
    report.method = method_name(method);
    report.trials = trials;
    report.metric = metric;

    if (metric == DivergenceMetric::kCrossRun) {
        for (int a = 0; a < trials; ++a) {
            for (int b = a + 1; b < trials; ++b) {
                double d = 0.0;
                for (std::size_t c = 0; c < final_perts[a].size(); ++c) {
                    d += l1_distance(final_perts[a][c], final_perts[b][c]);
                }
                report.distances.push_back(d);
            }
        }
    } else {
        for (int t = 0; t < trials; ++t) {
            const auto& steps = step_perts[t];
            for (std::size_t s = 1; s < steps.size(); ++s) {
                double d = 0.0;
                for (std::size_t c = 0; c < steps[s].size(); ++c) {
                    d += l1_distance(steps[s][c], steps[s - 1][c]);
                }
                report.distances.push_back(d);
            }
        }
    }

    double sum = 0.0;
    for (double d : report.distances) sum += d;
    report.mean_distance = report.distances.empty() ? 0.0 : sum / double(report.distances.size());
    return report;
}

}  // namespace advgen
