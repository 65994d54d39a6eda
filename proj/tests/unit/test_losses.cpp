#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ito/errors.hpp"
#include "ito/gradcheck.hpp"
#include "ito/losses.hpp"
#include "ito/oracle.hpp"
#include "ito/rng.hpp"

using namespace ito;

namespace {

Tensor random_unit(Dims dims, Rng& rng) {
    Tensor t(dims);
    for (auto& v : t.data()) v = rng.normal();
    const std::size_t d = dims.back();
    for (std::size_t r = 0; r < t.size() / d; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += t[r * d + k] * t[r * d + k];
        for (std::size_t k = 0; k < d; ++k) t[r * d + k] /= std::sqrt(s);
    }
    return t;
}

oracle::Matrix rows_of(const Tensor& t, std::size_t b, std::size_t stride_rows, std::size_t offset, std::size_t d) {
    oracle::Matrix m(b, std::vector<double>(d));
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t k = 0; k < d; ++k) m[n][k] = t[((n * stride_rows) + offset) * d + k];
    return m;
}

oracle::FusedViews fused_of(const Tensor& s) {
    const std::size_t b = s.dim(0), vi = s.dim(1), vt = s.dim(2), d = s.dim(3);
    oracle::FusedViews out(b, std::vector<std::vector<std::vector<double>>>(vi, std::vector<std::vector<double>>(vt)));
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < vi; ++i)
            for (std::size_t j = 0; j < vt; ++j)
                out[n][i][j].assign(s.ptr() + ((n * vi + i) * vt + j) * d, s.ptr() + ((n * vi + i) * vt + j + 1) * d);
    return out;
}

Var tau_of(double t) { return Var::scalar(t); }

// Permutes axis 0 of a tensor.
Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
    Tensor out(t.dims());
    const std::size_t stride = t.size() / t.dim(0);
    for (std::size_t n = 0; n < perm.size(); ++n)
        std::copy_n(t.ptr() + perm[n] * stride, stride, out.ptr() + n * stride);
    return out;
}

}  // namespace

TEST(InfoNce, SingletonBatchIsZero) {
    Rng rng(1);
    const Var a = Var::constant(random_unit({1, 5}, rng));
    const Var c = Var::constant(random_unit({1, 5}, rng));
    EXPECT_EQ(infonce_directional(a, c, tau_of(0.07)).item(), 0.0);
}

TEST(InfoNce, IdenticalRowsGiveLogB) {
    Tensor row({4, 3});
    for (std::size_t n = 0; n < 4; ++n) row[n * 3 + 1] = 1.0;
    const Var a = Var::constant(row);
    EXPECT_NEAR(infonce_directional(a, a, tau_of(0.3)).item(), std::log(4.0), 1e-12);
}

TEST(InfoNce, OrthonormalPairMatchesOracle) {
    const Tensor e({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const double expected = oracle::infonce({{1.0, 0.0}, {0.0, 1.0}}, {{1.0, 0.0}, {0.0, 1.0}}, 1.0);
    EXPECT_NEAR(expected, 0.313262, 1e-6);
    const Var a = Var::constant(e);
    EXPECT_NEAR(infonce_directional(a, a, tau_of(1.0)).item(), expected, 1e-12);
    EXPECT_NEAR(clip_loss(a, a, tau_of(1.0)).item(), expected, 1e-12);
}

TEST(InfoNce, RejectsNonUnitRows) {
    const Var a = Var::constant(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.01}));
    EXPECT_THROW(infonce_directional(a, a, tau_of(1.0)), ContractError);
}

TEST(ClipLoss, SymmetricInputsHaveEqualDirections) {
    Rng rng(3);
    const Var y = Var::constant(random_unit({5, 6}, rng));
    const double i2t = infonce_directional(y, y, tau_of(0.1)).item();
    EXPECT_DOUBLE_EQ(clip_loss(y, y, tau_of(0.1)).item(), i2t);
}

TEST(ClipLoss, MatchesOracleOnRandomBatch) {
    Rng rng(4);
    const Tensor y = random_unit({6, 8}, rng), z = random_unit({6, 8}, rng);
    const double expected = oracle::clip(rows_of(y, 6, 1, 0, 8), rows_of(z, 6, 1, 0, 8), 0.07);
    EXPECT_NEAR(clip_loss(Var::constant(y), Var::constant(z), tau_of(0.07)).item(), expected, 1e-10);
}

TEST(ClipLoss, SumReductionScalesByBatch) {
    Rng rng(5);
    const Tensor y = random_unit({6, 8}, rng), z = random_unit({6, 8}, rng);
    const Var yv = Var::constant(y), zv = Var::constant(z);
    const double mean = clip_loss(yv, zv, tau_of(0.2)).item();
    const double sum = clip_loss(yv, zv, tau_of(0.2), Reduction::Sum).item();
    EXPECT_NEAR(sum, 6.0 * mean, 1e-10);
    EXPECT_NEAR(sum, oracle::clip(rows_of(y, 6, 1, 0, 8), rows_of(z, 6, 1, 0, 8), 0.2, true), 1e-10);
}

TEST(AlignLoss, SingleViewGridIsClipLossBitwise) {
    Rng rng(6);
    const Tensor y = random_unit({4, 1, 8}, rng), z = random_unit({4, 1, 8}, rng);
    const double clip = clip_loss(Var::constant(y.reshaped({4, 8})), Var::constant(z.reshaped({4, 8})), tau_of(0.07)).item();
    EXPECT_EQ(align_loss(Var::constant(y), Var::constant(z), tau_of(0.07)).loss.item(), clip);
}

TEST(AlignLoss, DuplicatedImageViewsCollapseToClip) {
    Rng rng(7);
    const Tensor y1 = random_unit({4, 8}, rng), z = random_unit({4, 8}, rng);
    Tensor y({4, 2, 8});
    for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 2; ++i) std::copy_n(y1.ptr() + n * 8, 8, y.ptr() + (n * 2 + i) * 8);
    const double clip = clip_loss(Var::constant(y1), Var::constant(z), tau_of(0.07)).item();
    EXPECT_EQ(align_loss(Var::constant(y), Var::constant(z.reshaped({4, 1, 8})), tau_of(0.07)).loss.item(), clip);
}

TEST(AlignLoss, TwoByTwoGridIsMeanOfPairwiseClip) {
    Rng rng(8);
    const Tensor y = random_unit({4, 2, 8}, rng), z = random_unit({4, 2, 8}, rng);
    double expected = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) expected += oracle::clip(rows_of(y, 4, 2, i, 8), rows_of(z, 4, 2, j, 8), 0.07);
    expected /= 4.0;
    const AlignResult r = align_loss(Var::constant(y), Var::constant(z), tau_of(0.07));
    EXPECT_NEAR(r.loss.item(), expected, 1e-12);
    EXPECT_EQ(r.image_to_text.size(), 4u);
    for (const auto& [key, v] : r.image_to_text) {
        EXPECT_GE(v, 0.0);
        EXPECT_GE(r.text_to_image.at(key), 0.0);
    }
}

TEST(FusionLoss, SingleSampleTwoByTwoIsZeroForAnyValues) {
    Rng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        const Var s = Var::constant(random_unit({1, 2, 2, 6}, rng));
        EXPECT_NEAR(fusion_loss(s, tau_of(0.05)).item(), 0.0, 1e-15);
    }
}

TEST(FusionLoss, IdenticalVectorsGiveLogSevenThirds) {
    Tensor s({2, 2, 2, 4});
    for (std::size_t r = 0; r < 8; ++r) s[r * 4 + 2] = 1.0;
    EXPECT_NEAR(fusion_loss(Var::constant(s), tau_of(0.07)).item(), std::log(7.0 / 3.0), 1e-12);
    EXPECT_NEAR(std::log(7.0 / 3.0), 0.847298, 1e-6);
}

TEST(FusionLoss, TermCountsMatchOracleEnumeration) {
    const FusionMasks m = fusion_masks(5, 2, 2);
    Rng rng(10);
    oracle::TermCounts counts;
    oracle::fusion(fused_of(random_unit({5, 2, 2, 4}, rng)), 0.1, false, &counts);
    ASSERT_EQ(counts.denominator.size(), 20u);
    for (std::size_t a = 0; a < 20; ++a) {
        EXPECT_EQ(m.candidate_counts[a], 19u);
        EXPECT_EQ(m.positive_counts[a], 3u);
        EXPECT_EQ(counts.denominator[a], m.candidate_counts[a]);
        EXPECT_EQ(counts.numerator[a], m.positive_counts[a]);
    }
    const FusionMasks d = fusion_masks(4, 2, 1);
    EXPECT_EQ(d.positive_counts[0], 1u);
    EXPECT_EQ(d.candidate_counts[0], 7u);
}

TEST(FusionLoss, DegenerateGridIsUsageError) {
    Rng rng(11);
    EXPECT_THROW(fusion_loss(Var::constant(random_unit({1, 1, 1, 4}, rng)), tau_of(0.1)), UsageError);
    EXPECT_THROW(fusion_loss(Var::constant(random_unit({3, 1, 1, 4}, rng)), tau_of(0.1)), UsageError);
}

TEST(TotalLoss, LambdaZeroIsAlignBitwise) {
    Rng rng(12);
    const Var y = Var::constant(random_unit({4, 2, 8}, rng));
    const Var z = Var::constant(random_unit({4, 1, 8}, rng));
    const Var s = Var::constant(random_unit({4, 2, 1, 8}, rng));
    const AlignResult a = align_loss(y, z, tau_of(0.07));
    const LossReport r = total_loss(a, fusion_loss(s, tau_of(0.07)), 0.0);
    EXPECT_EQ(r.total, a.loss.item());
    const LossReport r2 = total_loss(a, fusion_loss(s, tau_of(0.07)), 2.0);
    EXPECT_NEAR(r2.total, r2.align + 2.0 * r2.fusion, 1e-12);
    EXPECT_GE(r2.fusion, 0.0);
}

TEST(TotalLoss, InvariantUnderSamplePermutation) {
    Rng rng(13);
    const Tensor y = random_unit({6, 2, 8}, rng), z = random_unit({6, 2, 8}, rng), s = random_unit({6, 2, 2, 8}, rng);
    auto total = [](const Tensor& y, const Tensor& z, const Tensor& s) {
        return total_loss(align_loss(Var::constant(y), Var::constant(z), tau_of(0.07)),
                          fusion_loss(Var::constant(s), tau_of(0.05)), 2.0)
            .total;
    };
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    EXPECT_NEAR(total(y, z, s), total(permute_rows(y, perm), permute_rows(z, perm), permute_rows(s, perm)), 1e-10);
}

TEST(Oracle, AgreesOnHundredRandomInstances) {
    Rng rng(14);
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t b = 1 + rng.below(8), d = 2 + rng.below(15);
        const std::size_t vi = 1 + rng.below(2), vt = 1 + rng.below(2);
        const double tau = 0.05 + rng.uniform() * 0.5;
        const Tensor y = random_unit({b, vi, d}, rng), z = random_unit({b, vt, d}, rng);
        const Var t = tau_of(tau);
        // Directional InfoNCE on view 0.
        const auto y0 = rows_of(y, b, vi, 0, d), z0 = rows_of(z, b, vt, 0, d);
        Tensor y0t({b, d}), z0t({b, d});
        for (std::size_t n = 0; n < b; ++n)
            for (std::size_t k = 0; k < d; ++k) {
                y0t[n * d + k] = y0[n][k];
                z0t[n * d + k] = z0[n][k];
            }
        worst = std::max(worst, std::abs(infonce_directional(Var::constant(y0t), Var::constant(z0t), t).item() -
                                         oracle::infonce(y0, z0, tau)));
        std::vector<oracle::Matrix> ys, zs;
        for (std::size_t i = 0; i < vi; ++i) ys.push_back(rows_of(y, b, vi, i, d));
        for (std::size_t j = 0; j < vt; ++j) zs.push_back(rows_of(z, b, vt, j, d));
        worst = std::max(worst, std::abs(align_loss(Var::constant(y), Var::constant(z), t).loss.item() -
                                         oracle::align(ys, zs, tau)));
        const std::size_t fvi = 2, fvt = 1 + rng.below(2);
        const Tensor s = random_unit({b, fvi, fvt, d}, rng);
        worst = std::max(worst, std::abs(fusion_loss(Var::constant(s), t).item() - oracle::fusion(fused_of(s), tau)));
        worst = std::max(worst, std::abs(fusion_loss(Var::constant(s), t, Reduction::Sum).item() -
                                         oracle::fusion(fused_of(s), tau, true)));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(LossGradients, ClipThroughNormalizeAndLogTemperature) {
    Rng rng(15);
    Tensor y({4, 8}), z({4, 8});
    for (auto& v : y.data()) v = rng.normal();
    for (auto& v : z.data()) v = rng.normal();
    const auto f = [](const std::vector<Var>& in) {
        return clip_loss(l2_normalize(in[0]), l2_normalize(in[1]), exp(in[2]));
    };
    const auto r = grad_check(f, {y, z, Tensor::scalar(std::log(0.07))}, 1e-4);
    EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(LossGradients, AlignGridAndTemperature) {
    Rng rng(16);
    Tensor y({3, 2, 6}), z({3, 2, 6});
    for (auto& v : y.data()) v = rng.normal();
    for (auto& v : z.data()) v = rng.normal();
    const auto f = [](const std::vector<Var>& in) {
        return align_loss(l2_normalize(in[0]), l2_normalize(in[1]), exp(in[2])).loss;
    };
    EXPECT_LT(grad_check(f, {y, z, Tensor::scalar(std::log(0.1))}, 1e-4).max_rel_error, 1e-5);
}

TEST(LossGradients, FusionAndTemperature) {
    Rng rng(17);
    for (Dims dims : {Dims{2, 2, 1, 6}, Dims{2, 2, 2, 5}}) {
        Tensor s(dims);
        for (auto& v : s.data()) v = rng.normal();
        const auto f = [](const std::vector<Var>& in) { return fusion_loss(l2_normalize(in[0]), exp(in[1])); };
        EXPECT_LT(grad_check(f, {s, Tensor::scalar(std::log(0.07))}, 1e-4).max_rel_error, 1e-5);
    }
}
