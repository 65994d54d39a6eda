#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "ito/checkpoint.hpp"
#include "ito/errors.hpp"
#include "ito/eval.hpp"
#include "ito/model.hpp"
#include "ito/rng.hpp"

namespace ito {
namespace {

Tensor random_rows(std::size_t n, std::size_t d, Rng& rng, bool unit = true) {
    Tensor t({n, d});
    for (auto& v : t.data()) v = rng.normal();
    if (unit)
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += t[r * d + c] * t[r * d + c];
            for (std::size_t c = 0; c < d; ++c) t[r * d + c] /= std::sqrt(s);
        }
    return t;
}

// Independent ranking: sort every candidate by (cosine desc, index asc), find the match position.
std::vector<std::size_t> brute_force_ranks(const Tensor& q, const Tensor& c) {
    const std::size_t n = q.dim(0), m = c.dim(0), d = q.dim(1);
    const auto cosine = [&](std::size_t i, std::size_t j) {
        double dot = 0, nq = 0, nc = 0;
        for (std::size_t k = 0; k < d; ++k) {
            dot += q[i * d + k] * c[j * d + k];
            nq += q[i * d + k] * q[i * d + k];
            nc += c[j * d + k] * c[j * d + k];
        }
        return dot / (std::sqrt(nq) * std::sqrt(nc));
    };
    std::vector<std::size_t> ranks(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(m);
        for (std::size_t j = 0; j < m; ++j) s[j] = cosine(i, j);
        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
        ranks[i] = static_cast<std::size_t>(std::find(order.begin(), order.end(), i) - order.begin()) + 1;
    }
    return ranks;
}

TEST(ZeroShot, ExactPrototypeIsPredicted) {
    Rng rng(1);
    const Tensor protos = random_rows(32, 8, rng);
    const auto pred = zero_shot_predict(protos, protos);
    for (std::size_t k = 0; k < 32; ++k) EXPECT_EQ(pred[k], k);
}

TEST(ZeroShot, LargerCosineWins) {
    const Tensor protos({2, 3}, {1, 0, 0, 0, 1, 0});
    const Tensor img({1, 3}, {0.6, 0.8, 0.0});
    EXPECT_EQ(zero_shot_predict(img, protos)[0], 1u);
}

TEST(ZeroShot, TiesGoToLowestIndex) {
    const Tensor protos({3, 2}, {0, 1, 1, 0, 1, 0});
    const Tensor img({1, 2}, {1.0, 1.0});
    EXPECT_EQ(zero_shot_predict(img, protos)[0], 0u);
}

TEST(ZeroShot, RandomEmbeddingsGiveChance) {
    Rng rng(2);
    const std::size_t n = 10000;
    const Tensor protos = random_rows(32, 16, rng);
    const Tensor imgs = random_rows(n, 16, rng);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.below(32);
    const double acc = accuracy(zero_shot_predict(imgs, protos), labels);
    const double p = 1.0 / 32.0, sigma = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(acc, p, 3 * sigma);
    EXPECT_THROW(accuracy({1}, {1, 2}), ConfigError);
}

TEST(Retrieval, IdentityIsPerfect) {
    Tensor e({4, 4});
    for (std::size_t i = 0; i < 4; ++i) e[i * 4 + i] = 1.0;
    const RetrievalReport r = retrieval_recall(e, e);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(r.image_to_text[k], 1.0);
        EXPECT_EQ(r.text_to_image[k], 1.0);
    }
}

TEST(Retrieval, SwappedPairsRankSecond) {
    // Y = I and Z chosen so Y Z^T = [[0.1, 0.9], [0.9, 0.1]] up to normalization.
    const Tensor y({2, 2}, {1, 0, 0, 1});
    const Tensor z({2, 2}, {0.1, 0.9, 0.9, 0.1});
    const auto ranks = match_ranks(y, z);
    EXPECT_EQ(ranks, (std::vector<std::size_t>{2, 2}));
    const RetrievalReport r = retrieval_recall(y, z);
    EXPECT_EQ(r.image_to_text[0], 0.0);
    EXPECT_EQ(r.image_to_text[1], 1.0);
}

TEST(Retrieval, EqualScoresBreakTowardLowerIndex) {
    const Tensor q({2, 2}, {1, 0, 1, 0});
    const Tensor c({2, 2}, {1, 0, 1, 0});
    EXPECT_EQ(match_ranks(q, c), (std::vector<std::size_t>{1, 2}));
}

TEST(Retrieval, AgreesWithBruteForceOracle) {
    Rng rng(3);
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t n = 2 + rng.below(31), d = 2 + rng.below(6);
        Tensor y = random_rows(n, d, rng, false), z = random_rows(n, d, rng, false);
        // Duplicate rows so equal scores occur.
        if (inst % 5 == 0) std::copy_n(z.ptr(), d, z.ptr() + (n - 1) * d);
        EXPECT_EQ(match_ranks(y, z), brute_force_ranks(y, z));
        EXPECT_EQ(match_ranks(z, y), brute_force_ranks(z, y));
        const RetrievalReport r = retrieval_recall(y, z);
        for (const auto* v : {&r.image_to_text, &r.text_to_image}) {
            EXPECT_LE((*v)[0], (*v)[1]);
            EXPECT_LE((*v)[1], (*v)[2]);
            EXPECT_LE((*v)[2], 1.0);
        }
    }
}

TEST(Probe, SeparableTwoClass) {
    Rng rng(4);
    const std::size_t n = 100;
    Tensor x({n, 2});
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2;
        x[i * 2] = (y[i] ? 1.0 : -1.0) + 0.2 * rng.normal();
        x[i * 2 + 1] = rng.normal();
    }
    const auto r = linear_probe(x, y, x, y);
    EXPECT_EQ(r.accuracy, 1.0);
    EXPECT_EQ(r.loss_history.size(), 500u);
}

TEST(Probe, ShuffledLabelsGiveChance) {
    Rng rng(5);
    const std::size_t ntr = 700, nte = 2000;
    const Tensor xtr = random_rows(ntr, 8, rng, false), xte = random_rows(nte, 8, rng, false);
    std::vector<std::size_t> ytr(ntr), yte(nte);
    for (auto& l : ytr) l = rng.below(4);
    for (auto& l : yte) l = rng.below(4);
    const double acc = linear_probe(xtr, ytr, xte, yte).accuracy;
    EXPECT_NEAR(acc, 0.25, 3 * std::sqrt(0.25 * 0.75 / nte));
}

TEST(Probe, LossNonIncreasingPerWindow) {
    Rng rng(6);
    const Tensor x = random_rows(200, 6, rng, false);
    std::vector<std::size_t> y(200);
    for (std::size_t i = 0; i < 200; ++i) y[i] = (x[i * 6] + 0.5 * x[i * 6 + 1] > 0) + 2 * (x[i * 6 + 2] > 0);
    const auto r = linear_probe(x, y, x, y);
    for (std::size_t w = 50; w < r.loss_history.size(); w += 50) EXPECT_LE(r.loss_history[w], r.loss_history[w - 50]);
    EXPECT_LT(r.loss_history.back(), r.loss_history.front());
}

TEST(Probe, SingleClassIsUsageError) {
    const Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
    EXPECT_THROW(linear_probe(x, {1, 1, 1}, x, {1, 1, 1}), UsageError);
}

TEST(Split, IsDeterministicPermutation) {
    const Split a = train_test_split(100, 0.7, 9), b = train_test_split(100, 0.7, 9);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.train.size(), 70u);
    EXPECT_EQ(a.test.size(), 30u);
    std::vector<std::size_t> all = a.train;
    all.insert(all.end(), a.test.begin(), a.test.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
}

TEST(Geometry, SeparatedModalitiesClosedForm) {
    const std::size_t n = 120, d = 4;
    Tensor y({n, d}), z({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        y[i * d] = 1.0;
        z[i * d + 1] = 1.0;
    }
    const GeometryReport g = geometry(y, z);
    EXPECT_NEAR(g.centroid_gap, std::sqrt(2.0), 1e-12);
    EXPECT_EQ(g.modality_probe_acc, 1.0);
    EXPECT_EQ(g.knn_mix, 0.0);
}

TEST(Geometry, IdenticalPoolsHaveNoGap) {
    Rng rng(7);
    const Tensor y = random_rows(150, 8, rng);
    const GeometryReport g = geometry(y, y);
    EXPECT_NEAR(g.centroid_gap, 0.0, 1e-15);
    // Each point's twin is its nearest neighbour and belongs to the other modality.
    EXPECT_GE(g.knn_mix, 0.1);
    EXPECT_LE(g.knn_mix, 1.0);
}

TEST(Geometry, SharedDistributionGivesChanceProbe) {
    Rng rng(8);
    const std::size_t n = 500;
    const GeometryReport g = geometry(random_rows(n, 8, rng), random_rows(n, 8, rng));
    const double nte = 2.0 * n - std::llround(0.7 * 2 * n);
    EXPECT_NEAR(g.modality_probe_acc, 0.5, 3 * std::sqrt(0.25 / nte));
    EXPECT_NEAR(g.knn_mix, 0.5, 0.1);
}

TEST(Geometry, InvariantUnderCommonRotation) {
    Rng rng(9);
    const std::size_t n = 120, d = 6;
    Tensor y = random_rows(n, d, rng), z = random_rows(n, d, rng);
    for (std::size_t i = 0; i < n; ++i) z[i * d] += 0.8;  // add a modality offset
    // Random orthogonal matrix by Gram-Schmidt.
    Tensor q = random_rows(d, d, rng, false);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0;
            for (std::size_t k = 0; k < d; ++k) dot += q[i * d + k] * q[j * d + k];
            for (std::size_t k = 0; k < d; ++k) q[i * d + k] -= dot * q[j * d + k];
        }
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += q[i * d + k] * q[i * d + k];
        for (std::size_t k = 0; k < d; ++k) q[i * d + k] /= std::sqrt(s);
    }
    const auto rotate = [&](const Tensor& a) {
        Tensor out({a.dim(0), d});
        for (std::size_t r = 0; r < a.dim(0); ++r)
            for (std::size_t c = 0; c < d; ++c)
                for (std::size_t k = 0; k < d; ++k) out[r * d + c] += a[r * d + k] * q[k * d + c];
        return out;
    };
    const GeometryReport a = geometry(y, z), b = geometry(rotate(y), rotate(z));
    EXPECT_NEAR(a.centroid_gap, b.centroid_gap, 1e-12);
    EXPECT_NEAR(a.knn_mix, b.knn_mix, 1e-12);
    EXPECT_NEAR(a.modality_probe_acc, b.modality_probe_acc, 1.0 / 72.0 + 1e-12);
}

TEST(Evaluate, RunsThroughDualEncoderAndRejectsFusion) {
    ModelConfig cfg;
    cfg.vision.width = 16;
    cfg.vision.layers = 1;
    cfg.vision.heads = 2;
    cfg.vision.embed_dim = 16;
    cfg.text.width = 16;
    cfg.text.layers = 1;
    cfg.text.heads = 2;
    cfg.text.embed_dim = 16;
    cfg.text.vocab_size = vocabulary().size();
    cfg.fusion.width = 16;
    cfg.fusion.heads = 2;
    cfg.fusion.blocks = 1;
    const ItoModel model(cfg, 1);
    const DualEncoder enc = DualEncoder::from_entries(dual_encoder_entries(model));
    const Dataset data = generate_dataset(11, 120);
    const EvalReport r = evaluate(enc, data);
    EXPECT_EQ(r.samples, 120u);
    EXPECT_EQ(r.fusion_params_loaded, 0u);
    EXPECT_EQ(r.param_name_checksum, enc.name_checksum());
    EXPECT_GE(r.zero_shot_acc, 0.0);
    EXPECT_LE(r.geometry.centroid_gap, 2.0);
    EXPECT_EQ(to_json(r), to_json(evaluate(enc, data)));
    EXPECT_NE(to_json(r).find("\"zero_shot_acc\""), std::string::npos);
}

}  // namespace
}  // namespace ito
