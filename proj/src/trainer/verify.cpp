#include "ito/verify.hpp"

#include <chrono>
#include <cmath>

#include "ito/losses.hpp"
#include "ito/model.hpp"

namespace ito {

namespace {

Tensor unit_rows(Dims dims, Rng& rng) {
    Tensor t(std::move(dims));
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

ModelConfig toy_config() {
    ModelConfig c;
    c.vision.width = 8;
    c.vision.layers = 1;
    c.vision.heads = 2;
    c.vision.embed_dim = 8;
    c.text.width = 8;
    c.text.layers = 1;
    c.text.heads = 2;
    c.text.embed_dim = 8;
    c.text.vocab_size = 12;
    c.fusion.width = 8;
    c.fusion.heads = 2;
    c.fusion.blocks = 2;
    return c;
}

}  // namespace

GradCheckSuiteReport run_gradcheck_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckSuiteReport out;
    const auto add = [&](std::string name, const GradCheckReport& r) {
        out.max_rel_error = std::max(out.max_rel_error, r.max_rel_error);
        out.entries.push_back({std::move(name), r});
    };

    for (const auto& c : primitive_op_cases())
        for (std::uint64_t trial = 0; trial < 3; ++trial) add("op/" + c.name + "#" + std::to_string(trial), check_op_case(c, trial));

    // Losses take raw vectors through l2_normalize and exp(log tau), so the check covers the whole path.
    Rng rng(7);
    const auto clip_f = [](const std::vector<Var>& x) {
        return clip_loss(l2_normalize(x[0]), l2_normalize(x[1]), exp(x[2]));
    };
    add("loss/clip", grad_check(clip_f, {unit_rows({4, 8}, rng), unit_rows({4, 8}, rng), Tensor::scalar(std::log(0.07))}, 1e-4));
    const auto align_f = [](const std::vector<Var>& x) {
        return align_loss(l2_normalize(x[0]), l2_normalize(x[1]), exp(x[2])).loss;
    };
    add("loss/align_2x2",
        grad_check(align_f, {unit_rows({3, 2, 6}, rng), unit_rows({3, 2, 6}, rng), Tensor::scalar(std::log(0.1))}, 1e-4));
    const auto fusion_f = [](const std::vector<Var>& x) { return fusion_loss(l2_normalize(x[0]), exp(x[1])); };
    add("loss/fusion_2x1", grad_check(fusion_f, {unit_rows({3, 2, 1, 6}, rng), Tensor::scalar(std::log(0.07))}, 1e-4));
    add("loss/fusion_2x2", grad_check(fusion_f, {unit_rows({2, 2, 2, 6}, rng), Tensor::scalar(std::log(0.07))}, 1e-4));

    // Full objective, B = 2, 2x1 views, lambda = 2, gradients with respect to every parameter tensor.
    ItoModel model(toy_config(), 3);
    Rng data_rng(5);
    Tensor images({2, 2, 3, 32, 32});
    for (auto& v : images.data()) v = data_rng.uniform();
    std::vector<std::int32_t> ids(2 * 16, 0);
    for (std::size_t n = 0; n < 2; ++n) {
        ids[n * 16] = 1;
        const std::size_t eot = 4 + n * 3;
        for (std::size_t t = 1; t < eot; ++t) ids[n * 16 + t] = static_cast<std::int32_t>(3 + data_rng.below(9));
        ids[n * 16 + eot] = 2;
    }
    const auto objective = [&]() {
        const EmbeddingGrid grid = model.encode(images, ids, 1);
        const AlignResult align = align_loss(grid.Y, grid.Z, model.tau_align());
        const Var fusion = fusion_loss(model.fuse_grid(grid).S, model.tau_fusion());
        return total_loss(align, fusion, 2.0).total_var;
    };
    std::vector<Var> leaves = model.params().vars();
    add("objective/full_B2", grad_check_leaves(objective, leaves, 1e-5, 4, 11));

    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace ito
