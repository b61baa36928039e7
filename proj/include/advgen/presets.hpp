#pragma once

#include <cmath>
#include <cstdint>

#include "advgen/attack.hpp"
#include "advgen/models.hpp"
#include "advgen/optim.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

/// Smooth deterministic test image in [0.2, 0.8], antisymmetric about the
/// center in both axes (its mean is exactly mid-range).
inline Tensor standard_test_image(std::size_t h, std::size_t w) {
    Tensor img(Shape{h, w});
    const double pi = 3.14159265358979323846;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            img.at(y, x) =
                0.5 + 0.3 * std::sin(2.0 * pi * double(y) / double(h)) *
                          std::sin(2.0 * pi * double(x) / double(w));
        }
    }
    return img;
}

inline Tensor center_mask(std::size_t h, std::size_t w, std::size_t hole_h, std::size_t hole_w) {
    Tensor mask(Shape{h, w}, 0.0);
    const std::size_t y0 = (h - hole_h) / 2, x0 = (w - hole_w) / 2;
    for (std::size_t y = y0; y < y0 + hole_h; ++y) {
        for (std::size_t x = x0; x < x0 + hole_w; ++x) {
            mask.at(y, x) = 1.0;
        }
    }
    return mask;
}

struct InpaintingTestbed {
    DiffusionFillGenerator model;
    ConditionSet conditions;
};

/// The standard desk-scale inpainting job: a 32x32 smooth image with a 16x16
/// center hole filled by 25 Jacobi sweeps. The perturbation is confined to
/// the degraded (masked) region, matching what attacking an inpainter's
/// unknown content means; `perturb_hole_only = false` opens the whole image.
inline InpaintingTestbed standard_inpainting_testbed(std::size_t h = 32, std::size_t w = 32,
                                                     std::size_t hole = 16, int k_iters = 25,
                                                     bool perturb_hole_only = true) {
    InpaintingTestbed t{DiffusionFillGenerator(h, w, k_iters), ConditionSet{}};
    Tensor image = standard_test_image(h, w);
    Tensor mask = center_mask(h, w, hole, hole);
    ConditionEntry img_entry{"image", image, true, std::nullopt};
    if (perturb_hole_only) img_entry.perturb_mask = mask;
    t.conditions.add(std::move(img_entry));
    t.conditions.add(ConditionEntry{"mask", mask, false, std::nullopt});
    return t;
}

struct ConvTestbed {
    ConvGenerator model;
    ConditionSet conditions;
};

inline ConvTestbed standard_conv_testbed(std::size_t h = 16, std::size_t w = 16,
                                         std::uint64_t seed = 42) {
    ConvTestbed t{ConvGenerator(h, w, seed), ConditionSet{}};
    t.conditions.add(ConditionEntry{"input", standard_test_image(h, w), true, std::nullopt});
    return t;
}

inline Embedder standard_embedder(std::size_t h = 32, std::size_t w = 32) {
    return Embedder(h, w, 7, 8, 4);
}

inline AttackConfig standard_attack_config(std::uint64_t seed = 1) {
    AttackConfig cfg;
    cfg.steps = 10;
    cfg.epsilon0 = EpsilonInterval::constant(0.01);
    cfg.decay = 0.95;
    cfg.init_noise_delta = 1e-4;
    cfg.c_min = -0.09;
    cfg.c_max = 0.09;
    cfg.truncation = TruncationMode::kNoiseTrunc;
    cfg.loss = LossSpec::untargeted_l1();
    cfg.seed = seed;
    return cfg;
}

/// Standard setup of the init-sensitivity experiment. The variance loss keeps
/// the loss surface smooth at the unperturbed condition, so only the sign
/// quantization can amplify the micro init noise; the L1 loss would sit on
/// its kink there and hand macroscopic randomness to both update rules.
inline AdamConfig standard_divergence_config(std::uint64_t seed = 100) {
    AdamConfig cfg;
    cfg.base = standard_attack_config(seed);
    cfg.base.loss = LossSpec::untargeted_var();
    return cfg;
}

}  // namespace advgen
