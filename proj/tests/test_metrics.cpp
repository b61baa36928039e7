#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "advgen/metrics.hpp"
#include "advgen/presets.hpp"
#include "advgen/rng.hpp"

using namespace advgen;

namespace {

Tensor random_image(Rng& rng, std::size_t h, std::size_t w) {
    Tensor t(Shape{h, w});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform01();
    return t;
}

}  // namespace

TEST(PairwiseL1, IdenticalImagesGiveZero) {
    Tensor img = standard_test_image(4, 4);
    DiversityReport r = pairwise_l1({img, img});
    EXPECT_DOUBLE_EQ(r.mean_pairwise_l1, 0.0);
}

TEST(PairwiseL1, FullRangeDifferenceGives255) {
    Tensor zeros(Shape{4, 4}, 0.0);
    Tensor ones(Shape{4, 4}, 1.0);
    DiversityReport r = pairwise_l1({zeros, ones});
    EXPECT_DOUBLE_EQ(r.mean_pairwise_l1, 255.0);
}

TEST(PairwiseL1, MatchesTripleLoopOracle) {
    Rng rng(1);
    std::vector<Tensor> samples{random_image(rng, 4, 4), random_image(rng, 4, 4),
                                random_image(rng, 4, 4)};
    DiversityReport r = pairwise_l1(samples);

    // brute force: all pairs, all pixels
    double sum = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < samples[i].size(); ++p) {
                acc += std::abs(samples[i][p] - samples[j][p]);
            }
            sum += 255.0 * acc / double(samples[i].size());
            ++pairs;
        }
    }
    EXPECT_NEAR(r.mean_pairwise_l1, sum / pairs, 1e-12);
}

TEST(PairwiseL1, ScaleLinearity) {
    Rng rng(2);
    Tensor a = random_image(rng, 5, 5);
    Tensor b = random_image(rng, 5, 5);
    DiversityReport r = pairwise_l1({a, b});
    double direct = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) direct += std::abs(255.0 * a[i] - 255.0 * b[i]);
    direct /= double(a.size());
    EXPECT_NEAR(r.mean_pairwise_l1, direct, 1e-9);
}

TEST(PairwiseL1, ErrorsAndMatrixShape) {
    EXPECT_THROW(pairwise_l1({standard_test_image(4, 4)}), ConfigError);
    EXPECT_THROW(pairwise_l1({Tensor(Shape{4, 4}, 0.0), Tensor(Shape{5, 4}, 0.0)}),
                 DimensionError);
    Rng rng(3);
    std::vector<Tensor> samples{random_image(rng, 4, 4), random_image(rng, 4, 4),
                                random_image(rng, 4, 4)};
    DiversityReport r = pairwise_l1(samples);
    ASSERT_EQ(r.l1_matrix.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(r.l1_matrix[i][i], 0.0);
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_DOUBLE_EQ(r.l1_matrix[i][j], r.l1_matrix[j][i]);
            EXPECT_GE(r.l1_matrix[i][j], 0.0);
        }
    }
}

TEST(PairwiseEmbedding, IdenticalSamplesGiveZero) {
    Embedder embedder(6, 6, 7, 4);
    Tensor img = standard_test_image(6, 6);
    DiversityReport r = pairwise_embedding_distance({img, img}, embedder);
    EXPECT_DOUBLE_EQ(r.mean_pairwise_embedding, 0.0);
}

TEST(PairwiseEmbedding, BoundedByUnitSphereDiameter) {
    Rng rng(4);
    Embedder embedder(6, 6, 7, 4);
    std::vector<Tensor> samples;
    for (int i = 0; i < 4; ++i) samples.push_back(random_image(rng, 6, 6));
    DiversityReport r = pairwise_embedding_distance(samples, embedder);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        EXPECT_DOUBLE_EQ(r.embedding_matrix[i][i], 0.0);
        for (std::size_t j = 0; j < samples.size(); ++j) {
            const double d = r.embedding_matrix[i][j];
            EXPECT_GE(d, 0.0);
            EXPECT_LE(d, 2.0);
            EXPECT_DOUBLE_EQ(d, r.embedding_matrix[j][i]);
        }
    }
}

TEST(PairwiseEmbedding, MatchesDirectEmbedCalls) {
    Rng rng(5);
    Embedder embedder(6, 6, 7, 4);
    std::vector<Tensor> samples{random_image(rng, 6, 6), random_image(rng, 6, 6),
                                random_image(rng, 6, 6)};
    DiversityReport r = pairwise_embedding_distance(samples, embedder);
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = i + 1; j < 3; ++j) {
            sum += l2_norm_value(sub(embedder.embed(samples[i]), embedder.embed(samples[j])));
        }
    }
    EXPECT_NEAR(r.mean_pairwise_embedding, sum / 3.0, 1e-14);
}

TEST(PatchFrechet, IdenticalSetsGiveExactZero) {
    Rng rng(6);
    std::vector<Tensor> set{random_image(rng, 8, 8), random_image(rng, 8, 8)};
    EXPECT_EQ(patch_frechet_distance(set, set, 4), 0.0);
}

TEST(PatchFrechet, ConstantSetsClosedForm) {
    std::vector<Tensor> zeros{Tensor(Shape{8, 8}, 0.0), Tensor(Shape{8, 8}, 0.0)};
    std::vector<Tensor> ones{Tensor(Shape{8, 8}, 1.0), Tensor(Shape{8, 8}, 1.0)};
    // mean features differ by 1 in each of the (8/4)*(8/4) = 4 patch cells;
    // variance features are all zero
    EXPECT_DOUBLE_EQ(patch_frechet_distance(zeros, ones, 4), 4.0);
}

TEST(PatchFrechet, SymmetricAndValidated) {
    Rng rng(7);
    std::vector<Tensor> a{random_image(rng, 8, 8), random_image(rng, 8, 8)};
    std::vector<Tensor> b{random_image(rng, 8, 8), random_image(rng, 8, 8),
                          random_image(rng, 8, 8)};
    const double dab = patch_frechet_distance(a, b, 4);
    const double dba = patch_frechet_distance(b, a, 4);
    EXPECT_NEAR(dab, dba, 1e-12);
    EXPECT_GE(dab, 0.0);
    EXPECT_THROW(patch_frechet_distance({}, b, 4), ConfigError);
    EXPECT_THROW(patch_frechet_distance(a, b, 9), ConfigError);
}

TEST(Psnr, Examples) {
    Tensor a(Shape{4, 4}, 0.0);
    Tensor same(Shape{4, 4}, 0.0);
    EXPECT_TRUE(std::isinf(psnr(a, same)));
    EXPECT_GT(psnr(a, same), 0.0);

    Tensor ones(Shape{4, 4}, 1.0);
    EXPECT_DOUBLE_EQ(psnr(a, ones), 0.0);

    Tensor b(Shape{4, 4}, 0.1);  // MSE = 0.01
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);

    EXPECT_THROW(psnr(a, Tensor(Shape{2, 2}, 0.0)), DimensionError);
}
