#include "ito/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ito/errors.hpp"
#include "ito/rng.hpp"

namespace ito {

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (max_coords == 0 || max_coords >= n) return idx;
    for (std::size_t i = 0; i < max_coords; ++i) {
        std::swap(idx[i], idx[i + rng.below(n - i)]);
    }
    idx.resize(max_coords);
    std::sort(idx.begin(), idx.end());
    return idx;
}

double eval_at(const std::function<Var()>& f, std::size_t input, std::size_t coord) {
    double v;
    try {
        v = f().item();
    } catch (const NumericError& e) {
        throw NumericError("grad_check: " + std::string(e.what()) + " at input " + std::to_string(input) +
                           " coordinate " + std::to_string(coord));
    }
    if (!std::isfinite(v)) {
        throw NumericError("grad_check: non-finite value at input " + std::to_string(input) + " coordinate " +
                           std::to_string(coord));
    }
    return v;
}

}  // namespace

GradCheckReport grad_check_leaves(const std::function<Var()>& f, std::span<Var> leaves, double h,
                                  std::size_t max_coords, std::uint64_t seed) {
    std::vector<bool> saved(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        saved[i] = leaves[i].requires_grad();
        leaves[i].set_requires_grad(true);
        leaves[i].zero_grad();
    }
    const Var root = f();
    if (root.value().size() != 1) throw UsageError("grad_check needs a scalar-valued function");
    backward(root);
    std::vector<Tensor> analytic;
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    // Finite differences need no graph.
    for (auto& leaf : leaves) leaf.set_requires_grad(false);

    GradCheckReport report;
    Rng rng(seed);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        Tensor& value = leaves[i].mutable_value();
        for (std::size_t c : pick_coords(value.size(), max_coords, rng)) {
            const double orig = value[c];
            value[c] = orig + h;
            const double fp = eval_at(f, i, c);
            value[c] = orig - h;
            const double fm = eval_at(f, i, c);
            value[c] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = relative_error(analytic[i][c], numeric);
            ++report.coordinates_checked;
            if (err >= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_input = i;
                report.worst_index = c;
                report.analytic = analytic[i][c];
                report.numeric = numeric;
            }
        }
    }
    for (std::size_t i = 0; i < leaves.size(); ++i) leaves[i].set_requires_grad(saved[i]);
    return report;
}

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& point, double h, std::size_t max_coords,
                           std::uint64_t seed) {
    std::vector<Var> leaves;
    leaves.reserve(point.size());
    for (const auto& t : point) leaves.push_back(Var::leaf(t));
    return grad_check_leaves([&] { return f(leaves); }, leaves, h, max_coords, seed);
}

namespace {

Tensor uniform_tensor(Dims dims, Rng& rng, double lo, double hi) {
    Tensor t(std::move(dims));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

std::vector<OpCase> primitive_op_cases() {
    const std::vector<std::size_t> sel{2, 0, 2, 1};
    const std::vector<std::size_t> pos{3, 0};
    const std::vector<std::int32_t> ids{0, 4, 4, 2, 1, 0};
    Tensor mask({3, 4});
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) mask[r * 4 + c] = (r + c) % 3 == 0 ? 0.0 : 1.0;
    return {
        {"add_same", {{2, 3}, {2, 3}}, [](auto& x) { return x[0] + x[1]; }},
        {"add_bcast_suffix", {{2, 3, 4}, {4}}, [](auto& x) { return x[0] + x[1]; }},
        {"sub_bcast_middle", {{2, 3, 4}, {3, 1}}, [](auto& x) { return x[0] - x[1]; }},
        {"mul_bcast_both", {{2, 1, 4}, {3, 1}}, [](auto& x) { return x[0] * x[1]; }},
        {"div_scalar", {{2, 3}, {}}, [](auto& x) { return x[0] / x[1]; }, 0.5, 1.5},
        {"div_bcast", {{4, 3}, {4, 1}}, [](auto& x) { return x[0] / x[1]; }, 0.5, 1.5},
        {"scale", {{5}}, [](auto& x) { return scale(x[0], -2.5); }},
        {"add_scalar", {{5}}, [](auto& x) { return add_scalar(x[0], 0.75); }},
        {"exp", {{2, 3}}, [](auto& x) { return exp(x[0]); }},
        {"log", {{2, 3}}, [](auto& x) { return log(x[0]); }, 0.5, 2.0},
        {"gelu", {{2, 5}}, [](auto& x) { return gelu(x[0]); }, -3.0, 3.0},
        {"tanh", {{2, 5}}, [](auto& x) { return tanh(x[0]); }},
        {"matmul_2d", {{3, 4}, {4, 2}}, [](auto& x) { return matmul(x[0], x[1]); }},
        {"matmul_leading", {{2, 3, 4}, {4, 5}}, [](auto& x) { return matmul(x[0], x[1]); }},
        {"matmul_batched", {{2, 3, 4}, {2, 4, 2}}, [](auto& x) { return matmul(x[0], x[1]); }},
        {"linear", {{2, 3, 4}, {4, 5}, {5}}, [](auto& x) { return linear(x[0], x[1], x[2]); }},
        {"transpose", {{2, 3, 4}}, [](auto& x) { return transpose(x[0]); }},
        {"reshape", {{2, 6}}, [](auto& x) { return reshape(x[0], {3, 4}); }},
        {"sum_axis0", {{3, 4}}, [](auto& x) { return sum(x[0], 0); }},
        {"sum_axis_mid_keep", {{2, 3, 4}}, [](auto& x) { return sum(x[0], 1, true); }},
        {"mean_last", {{2, 3, 4}}, [](auto& x) { return mean(x[0], -1); }},
        {"mean_all", {{2, 3}}, [](auto& x) { return mean_all(x[0]); }},
        {"max_last", {{3, 5}}, [](auto& x) { return max(x[0], -1); }},
        {"softmax", {{3, 4}}, [](auto& x) { return softmax(x[0]); }, -2.0, 2.0},
        {"logsumexp", {{3, 4}}, [](auto& x) { return logsumexp(x[0]); }, -2.0, 2.0},
        {"masked_logsumexp", {{3, 4}}, [mask](auto& x) { return masked_logsumexp(x[0], mask); }, -2.0, 2.0},
        {"l2_normalize", {{3, 4}}, [](auto& x) { return l2_normalize(x[0]); }},
        {"concat_axis1", {{2, 3, 2}, {2, 1, 2}}, [](auto& x) { return concat({x[0], x[1]}, 1); }},
        {"slice_axis1", {{2, 5, 3}}, [](auto& x) { return slice(x[0], 1, 1, 3); }},
        {"index_select_repeat", {{3, 2, 2}}, [sel](auto& x) { return index_select(x[0], sel); }},
        {"gather_tokens", {{2, 4, 3}}, [pos](auto& x) { return gather_tokens(x[0], pos); }},
        {"layer_norm", {{2, 3, 6}, {6}, {6}}, [](auto& x) { return layer_norm(x[0], x[1], x[2]); }},
        {"attention", {{2, 5, 4}, {2, 5, 4}, {2, 5, 4}}, [](auto& x) { return attention(x[0], x[1], x[2], 2, false); }},
        {"attention_single_query",
         {{2, 1, 4}, {2, 5, 4}, {2, 5, 4}},
         [](auto& x) { return attention(x[0], x[1], x[2], 2, false); }},
        {"attention_causal",
         {{2, 5, 4}, {2, 5, 4}, {2, 5, 4}},
         [](auto& x) { return attention(x[0], x[1], x[2], 2, true); }},
        {"embedding", {{5, 3}}, [ids](auto& x) { return embedding(x[0], ids, {2, 3}); }},
    };
}

GradCheckReport check_op_case(const OpCase& c, std::uint64_t trial) {
    Rng rng(100 + trial);
    std::vector<Tensor> point;
    for (const auto& d : c.input_dims) point.push_back(uniform_tensor(d, rng, c.lo, c.hi));
    // Contract the output with fixed random weights so every output coordinate matters.
    return grad_check(
        [&](const std::vector<Var>& x) {
            const Var out = c.op(x);
            Rng wrng(900 + trial);
            return sum_all(out * Var::constant(uniform_tensor(out.dims(), wrng, -1.0, 1.0)));
        },
        point, 1e-5);
}

}  // namespace ito
