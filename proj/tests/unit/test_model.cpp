#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <unistd.h>

#include "ito/checkpoint.hpp"
#include "ito/errors.hpp"
#include "ito/gradcheck.hpp"
#include "ito/model.hpp"

using namespace ito;

namespace {

ModelConfig small_config(std::size_t width = 16, std::size_t layers = 1) {
    ModelConfig c;
    c.vision.width = width;
    c.vision.layers = layers;
    c.vision.heads = 2;
    c.vision.embed_dim = 8;
    c.text.width = width;
    c.text.layers = layers;
    c.text.heads = 2;
    c.text.embed_dim = 8;
    c.text.vocab_size = 12;
    c.fusion.width = width;
    c.fusion.heads = 2;
    return c;
}

Tensor random_images(Dims dims, Rng& rng) {
    Tensor t(std::move(dims));
    for (auto& v : t.data()) v = rng.uniform();
    return t;
}

// BOS=1, EOT=2, PAD=0, content ids from 3.
std::vector<std::int32_t> random_ids(std::size_t rows, std::size_t len, std::size_t vocab, Rng& rng) {
    std::vector<std::int32_t> ids(rows * len, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t words = 1 + rng.below(len - 3);
        ids[r * len] = 1;
        for (std::size_t t = 1; t <= words; ++t) ids[r * len + t] = static_cast<std::int32_t>(3 + rng.below(vocab - 3));
        ids[r * len + words + 1] = 2;
    }
    return ids;
}

void expect_unit_rows(const Tensor& t, double tol) {
    const std::size_t d = t.dims().back();
    for (std::size_t r = 0; r < t.size() / d; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += t[r * d + k] * t[r * d + k];
        EXPECT_NEAR(std::sqrt(s), 1.0, tol);
    }
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("ito_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Model, DefaultImageSequenceLength) {
    ModelConfig cfg;
    EXPECT_EQ(cfg.vision.num_patches(), 16u);
    EXPECT_EQ(cfg.vision.seq_len(), 17u);
    ItoModel model(cfg, 1);
    Rng rng(2);
    const auto enc = model.vision().forward(random_images({2, 3, 32, 32}, rng));
    EXPECT_EQ(enc.tokens.dims(), (Dims{2, 17, 64}));
    EXPECT_EQ(enc.pooled.dims(), (Dims{2, 64}));
}

TEST(Model, RejectsWrongImageSize) {
    ItoModel model(small_config(), 1);
    EXPECT_THROW(model.vision().forward(Tensor({1, 3, 16, 16})), ConfigError);
}

TEST(Model, RejectsIndivisibleConfig) {
    ModelConfig cfg = small_config();
    cfg.vision.patch_size = 7;
    EXPECT_THROW(ItoModel(cfg, 0), ConfigError);
    cfg = small_config();
    cfg.text.heads = 3;
    EXPECT_THROW(ItoModel(cfg, 0), ConfigError);
}

TEST(Model, EmbeddingsAreUnitNormAndViewsDeterministic) {
    ItoModel model(small_config(), 3);
    Rng rng(4);
    Tensor images = random_images({3, 2, 3, 32, 32}, rng);
    // Second view of sample 0 duplicates the first.
    std::copy_n(images.ptr(), 3 * 32 * 32, images.ptr() + 3 * 32 * 32);
    const auto ids = random_ids(3 * 1, 16, 12, rng);
    const EmbeddingGrid g = model.encode(images, ids, 1);
    expect_unit_rows(g.Y.value(), 1e-6);
    expect_unit_rows(g.Z.value(), 1e-6);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(g.Y.value()[k], g.Y.value()[8 + k]);
    const FusedGrid f = model.fuse_grid(g);
    EXPECT_EQ(f.S.dims(), (Dims{3, 2, 1, 16}));
    expect_unit_rows(f.S.value(), 1e-6);
}

TEST(Model, EotPositionAndErrors) {
    const std::vector<std::int32_t> ids{1, 5, 6, 2, 0, 0, 0, 0};
    EXPECT_EQ(find_eot(ids, 1, 8, 2), std::vector<std::size_t>{3});
    const std::vector<std::int32_t> none{1, 5, 6, 0, 0, 0, 0, 0, 1, 5, 2, 0, 0, 0, 0, 0};
    try {
        find_eot(none, 2, 8, 2);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("sample 0"), std::string::npos);
    }
    const std::vector<std::int32_t> twice{1, 2, 2, 0};
    EXPECT_THROW(find_eot(twice, 1, 4, 2), DataError);
}

TEST(Model, PaddingAfterEotDoesNotChangeTextEmbedding) {
    ItoModel model(small_config(), 5);
    std::vector<std::int32_t> ids(16, 0);
    ids[0] = 1;
    ids[1] = 7;
    ids[2] = 9;
    ids[3] = 2;
    const Tensor a = model.text().forward(ids, 1).pooled.value();
    for (std::size_t t = 4; t < 16; ++t) ids[t] = static_cast<std::int32_t>(3 + t % 9);
    const Tensor b = model.text().forward(ids, 1).pooled.value();
    EXPECT_EQ(a, b);
}

TEST(Fusion, OutputShapeAndGradientsReachBothModalities) {
    ItoModel model(small_config(), 6);
    Rng rng(7);
    Tensor it({17, 16}), tt({16, 16});
    for (auto& v : it.data()) v = rng.normal();
    for (auto& v : tt.data()) v = rng.normal();
    const Var img = Var::leaf(it), txt = Var::leaf(tt);
    const Var fused = model.fusion().fuse(img, txt, 5);
    EXPECT_EQ(fused.dims(), (Dims{16}));
    Tensor w({16});
    for (auto& v : w.data()) v = rng.normal();
    backward(sum_all(fused * Var::constant(w)));
    double gi = 0.0, gt = 0.0;
    for (double g : img.grad().data()) gi += std::abs(g);
    for (double g : txt.grad().data()) gt += std::abs(g);
    EXPECT_GT(gi, 0.0);
    EXPECT_GT(gt, 0.0);
}

TEST(Fusion, EveryTextTokenUpToEotInfluencesOutput) {
    ItoModel model(small_config(), 8);
    Rng rng(9);
    Tensor it({17, 16}), tt({16, 16});
    for (auto& v : it.data()) v = rng.normal();
    for (auto& v : tt.data()) v = rng.normal();
    const std::size_t eot = 6;
    const Tensor base = model.fusion().fuse(Var::constant(it), Var::constant(tt), eot).value();
    for (std::size_t t = 0; t <= eot; ++t) {
        Tensor p = tt;
        p[t * 16 + 3] += 0.5;
        const Tensor out = model.fusion().fuse(Var::constant(it), Var::constant(p), eot).value();
        double diff = 0.0;
        for (std::size_t k = 0; k < 16; ++k) diff += std::abs(out[k] - base[k]);
        EXPECT_GT(diff, 1e-8) << "token " << t;
    }
}

TEST(Fusion, ExtraBlockAddsExactlyOneBlockOfParameters) {
    ModelConfig cfg;
    ItoModel two(cfg, 0);
    cfg.fusion.blocks = 3;
    ItoModel three(cfg, 0);
    const std::size_t w = cfg.fusion.width, h = w * cfg.fusion.mlp_ratio;
    // ln1, qkv, out, ln2, fc1, fc2 (weights and biases).
    const std::size_t block = 2 * w + (w * 3 * w + 3 * w) + (w * w + w) + 2 * w + (w * h + h) + (h * w + w);
    EXPECT_EQ(three.params().scalar_count() - two.params().scalar_count(), block);
    EXPECT_EQ(three.params().count() - two.params().count(), 12u);
    // Encoders are initialized from their own streams.
    EXPECT_EQ(two.params().get("visual.proj").value(), three.params().get("visual.proj").value());
}

TEST(Fusion, GradCheckThroughImageEncoderAndFusion) {
    ModelConfig cfg = small_config(8, 1);
    cfg.fusion.blocks = 1;
    ItoModel model(cfg, 10);
    Rng rng(11);
    const Tensor image = random_images({1, 3, 32, 32}, rng);
    const auto ids = random_ids(1, 16, 12, rng);
    Tensor w({8});
    for (auto& v : w.data()) v = rng.normal();
    const auto f = [&]() {
        const auto img = model.vision().forward(image);
        const auto txt = model.text().forward(ids, 1);
        const Var fused = model.fusion().fuse(reshape(img.tokens, {17, 8}), reshape(txt.tokens, {16, 8}), txt.eot[0]);
        return sum_all(fused * Var::constant(w));
    };
    std::vector<Var> leaves;
    for (auto& [name, v] : model.params().items())
        if (!name.starts_with("text.") && !name.starts_with("loss.") && name != "fusion.log_tau") leaves.push_back(v);
    const auto r = grad_check_leaves(f, leaves, 1e-5, 6, 12);
    EXPECT_GT(r.coordinates_checked, 0u);
    EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Temperatures, InitAndClamp) {
    ItoModel model(small_config(), 0);
    EXPECT_NEAR(model.tau_align().item(), 0.07, 1e-15);
    EXPECT_NEAR(model.tau_fusion().item(), 0.07, 1e-15);
    model.params().get("loss.log_tau_align").mutable_value()[0] = -20.0;
    model.params().get("fusion.log_tau").mutable_value()[0] = 3.0;
    model.clamp_temperatures();
    EXPECT_GE(model.tau_align().item(), 0.005);
    EXPECT_LE(model.tau_fusion().item(), 1.0);
    EXPECT_NEAR(model.tau_align().item(), 0.005, 1e-15);
}

TEST(Checkpoint, ExportedDualEncoderReproducesEmbeddingsBitwise) {
    ItoModel model(small_config(), 12);
    Rng rng(13);
    const Tensor images = random_images({2, 2, 3, 32, 32}, rng);
    const auto ids = random_ids(2, 16, 12, rng);
    const EmbeddingGrid g = model.encode(images, ids, 1);

    const auto path = temp_file("dual.ito");
    export_dual_encoder(model, path);
    const DualEncoder dual = DualEncoder::load(path);
    EXPECT_EQ(dual.embed_images(images.reshaped({4, 3, 32, 32})), g.Y.value().reshaped({4, 8}));
    EXPECT_EQ(dual.embed_texts(ids, 2), g.Z.value().reshaped({2, 8}));
    EXPECT_EQ(dual.fusion_param_count(), 0u);
    for (const auto& e : read_checkpoint(path)) EXPECT_FALSE(e.name.starts_with(kFusionPrefix)) << e.name;
    EXPECT_LT(dual.scalar_count(), model.params().scalar_count());
    std::filesystem::remove(path);
}

TEST(Checkpoint, FullRoundTripAndHeader) {
    ItoModel model(small_config(), 14);
    model.params().get("fusion.log_tau").mutable_value()[0] = -1.5;
    const auto path = temp_file("full.ito");
    save_full_checkpoint(model, path);
    {
        std::ifstream is(path, std::ios::binary);
        char head[12];
        is.read(head, 12);
        EXPECT_EQ(std::string(head, 4), "ITO1");
        std::uint32_t version, count;
        std::memcpy(&version, head + 4, 4);
        std::memcpy(&count, head + 8, 4);
        EXPECT_EQ(version, 1u);
        EXPECT_EQ(count, model.params().count() + 3);
    }
    const ItoModel back = load_full_checkpoint(path);
    ASSERT_EQ(back.params().count(), model.params().count());
    for (const auto& [name, v] : model.params().items()) EXPECT_EQ(back.params().get(name).value(), v.value()) << name;
    EXPECT_EQ(back.config().fusion.width, 16u);
    std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesAreIoErrors) {
    const auto path = temp_file("bad.ito");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    EXPECT_THROW(read_checkpoint(path), IoError);
    {
        std::ofstream os(path, std::ios::binary);
        os.write("ITO1\x01\x00\x00\x00\x05\x00\x00\x00", 12);
    }
    EXPECT_THROW(read_checkpoint(path), IoError);
    std::filesystem::remove(path);
    EXPECT_THROW(read_checkpoint(path), IoError);
}

namespace ito {
namespace {

TEST(Transformer, ReadoutMatchesFullStackAtGatheredTokens) {
    for (std::size_t layers : {1u, 3u}) {
        ParamStore store;
        Rng init(21);
        const TransformerStack stack(store, "s.", 8, 2, layers, 4, &init);
        Rng rng(22);
        Tensor x({3, 6, 8});
        for (auto& v : x.data()) v = rng.normal();
        const std::vector<std::size_t> pos{0, 5, 2};
        const Var xv = Var::constant(x);
        const Tensor full = gather_tokens(stack.forward(xv, false), pos).value();
        const Tensor fast = stack.forward_readout(xv, pos).value();
        ASSERT_EQ(full.dims(), fast.dims());
        for (std::size_t i = 0; i < full.size(); ++i) EXPECT_NEAR(fast[i], full[i], 1e-12) << "layers " << layers;
    }
}

}  // namespace
}  // namespace ito
