#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "advgen/error.hpp"
#include "advgen/models.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

/// Diversity measurements over a set of generated samples. L1 is reported on
/// the 0-255 scale; the embedding distance (an LPIPS stand-in: L2 between
/// unit-norm toy-embedder vectors) lies in [0, 2]. Matrices are symmetric
/// with zero diagonals; means run over K(K-1)/2 pairs.
struct DiversityReport {
    std::size_t sample_count = 0;
    double mean_pairwise_l1 = 0.0;
    double mean_pairwise_embedding = 0.0;
    std::vector<std::vector<double>> l1_matrix;
    std::vector<std::vector<double>> embedding_matrix;
};

namespace detail {

inline void check_sample_set(const std::vector<Tensor>& samples, const char* name) {
    if (samples.size() < 2) {
        throw ConfigError(std::string(name) + ": need at least 2 samples, got " +
                          std::to_string(samples.size()));
    }
    for (std::size_t i = 1; i < samples.size(); ++i) {
        if (!samples[i].same_shape(samples[0])) {
            throw DimensionError(std::string(name) + ": samples have differing shapes");
        }
    }
}

inline double fill_pairwise(std::vector<std::vector<double>>& matrix, std::size_t k,
                            const std::function<double(std::size_t, std::size_t)>& dist) {
    matrix.assign(k, std::vector<double>(k, 0.0));
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
            const double d = dist(i, j);
            matrix[i][j] = d;
            matrix[j][i] = d;
            sum += d;
        }
    }
    return sum / (double(k) * double(k - 1) / 2.0);
}

}  // namespace detail

/// Mean absolute pixel difference per pair, scaled by 255.
inline DiversityReport pairwise_l1(const std::vector<Tensor>& samples) {
    detail::check_sample_set(samples, "pairwise_l1");
    DiversityReport report;
    report.sample_count = samples.size();
    report.mean_pairwise_l1 = detail::fill_pairwise(
        report.l1_matrix, samples.size(), [&](std::size_t i, std::size_t j) {
            return 255.0 * l1_distance(samples[i], samples[j]) / double(samples[i].size());
        });
    return report;
}

/// Mean pairwise L2 distance between unit-norm embeddings; values in [0, 2].
inline DiversityReport pairwise_embedding_distance(const std::vector<Tensor>& samples,
                                                   const Embedder& embedder) {
    detail::check_sample_set(samples, "pairwise_embedding_distance");
    std::vector<Tensor> embeddings;
    embeddings.reserve(samples.size());
    for (const Tensor& s : samples) embeddings.push_back(embedder.embed(s));
    DiversityReport report;
    report.sample_count = samples.size();
    report.mean_pairwise_embedding = detail::fill_pairwise(
        report.embedding_matrix, samples.size(), [&](std::size_t i, std::size_t j) {
            return l2_norm_value(sub(embeddings[i], embeddings[j]));
        });
    return report;
}

/// Both diversity metrics in one report.
inline DiversityReport diversity_report(const std::vector<Tensor>& samples,
                                        const Embedder& embedder) {
    DiversityReport report = pairwise_l1(samples);
    DiversityReport emb = pairwise_embedding_distance(samples, embedder);
    report.mean_pairwise_embedding = emb.mean_pairwise_embedding;
    report.embedding_matrix = std::move(emb.embedding_matrix);
    return report;
}

namespace detail {

/// Per-image feature vector: mean then variance of each full patch cell of a
/// non-overlapping patch grid, concatenated.
inline std::vector<double> patch_features(const Tensor& image, std::size_t patch) {
    const Shape& s = image.shape();
    if (s.size() != 2) {
        throw DimensionError("patch features expect HxW images, got " + shape_to_string(s));
    }
    if (patch == 0 || patch > s[0] || patch > s[1]) {
        throw ConfigError("patch size must be positive and no larger than the image dims");
    }
    const std::size_t gh = s[0] / patch, gw = s[1] / patch;
    std::vector<double> means, vars;
    means.reserve(gh * gw);
    vars.reserve(gh * gw);
    for (std::size_t py = 0; py < gh; ++py) {
        for (std::size_t px = 0; px < gw; ++px) {
            double sum = 0.0;
            for (std::size_t y = 0; y < patch; ++y) {
                for (std::size_t x = 0; x < patch; ++x) {
                    sum += image.at(py * patch + y, px * patch + x);
                }
            }
            const double mu = sum / double(patch * patch);
            double var = 0.0;
            for (std::size_t y = 0; y < patch; ++y) {
                for (std::size_t x = 0; x < patch; ++x) {
                    const double d = image.at(py * patch + y, px * patch + x) - mu;
                    var += d * d;
                }
            }
            means.push_back(mu);
            vars.push_back(var / double(patch * patch));
        }
    }
    means.insert(means.end(), vars.begin(), vars.end());
    return means;
}

struct DiagonalGaussian {
    std::vector<double> mean;
    std::vector<double> var;  // population variance per dimension
};

inline DiagonalGaussian fit_diagonal_gaussian(const std::vector<std::vector<double>>& features) {
    const std::size_t n = features.size(), d = features[0].size();
    DiagonalGaussian g;
    g.mean.assign(d, 0.0);
    g.var.assign(d, 0.0);
    for (const auto& f : features) {
        for (std::size_t i = 0; i < d; ++i) g.mean[i] += f[i];
    }
    for (double& m : g.mean) m /= double(n);
    for (const auto& f : features) {
        for (std::size_t i = 0; i < d; ++i) {
            const double dv = f[i] - g.mean[i];
            g.var[i] += dv * dv;
        }
    }
    for (double& v : g.var) v /= double(n);
    return g;
}

}  // namespace detail

/// Frechet distance between diagonal Gaussians fitted to per-image patch
/// statistics of each set: ||mu1 - mu2||^2 + sum_d(v1 + v2 - 2*sqrt(v1*v2)).
/// A desk-scale quality proxy, not FID.
inline double patch_frechet_distance(const std::vector<Tensor>& set_a,
                                     const std::vector<Tensor>& set_b, std::size_t patch) {
    if (set_a.empty() || set_b.empty()) {
        throw ConfigError("patch_frechet_distance: both sets must be nonempty");
    }
    std::vector<std::vector<double>> fa, fb;
    for (const Tensor& t : set_a) fa.push_back(detail::patch_features(t, patch));
    for (const Tensor& t : set_b) fb.push_back(detail::patch_features(t, patch));
    if (fa[0].size() != fb[0].size()) {
        throw DimensionError("patch_frechet_distance: image shapes differ between sets");
    }
    const auto ga = detail::fit_diagonal_gaussian(fa);
    const auto gb = detail::fit_diagonal_gaussian(fb);
    double dist = 0.0;
    for (std::size_t i = 0; i < ga.mean.size(); ++i) {
        const double dm = ga.mean[i] - gb.mean[i];
        dist += dm * dm + ga.var[i] + gb.var[i] - 2.0 * std::sqrt(ga.var[i] * gb.var[i]);
    }
    return dist;
}

/// 10*log10(1/MSE) for [0,1] images; identical images give +infinity.
inline double psnr(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DimensionError("psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= double(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace advgen
