#include "ito/losses.hpp"

#include <cmath>
#include <string>

#include "ito/errors.hpp"

namespace ito {

void require_unit_rows(const Tensor& t, const char* what) {
    const std::size_t d = t.dims().back();
    for (std::size_t r = 0; r < t.size() / d; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += t[r * d + j] * t[r * d + j];
        if (std::abs(std::sqrt(s) - 1.0) > kUnitNormTolerance) {
            throw ContractError(std::string(what) + ": row " + std::to_string(r) + " has norm " +
                                std::to_string(std::sqrt(s)) + ", expected unit norm");
        }
    }
}

namespace {

void check_tau(const Var& tau) {
    if (tau.value().size() != 1 || !(tau.item() > 0.0)) throw ContractError("temperature must be a positive scalar");
}

Var reduce_anchors(const Var& per_anchor, Reduction reduction) {
    return reduction == Reduction::Mean ? mean_all(per_anchor) : sum_all(per_anchor);
}

}  // namespace

Var infonce_directional(const Var& anchors, const Var& candidates, const Var& tau, Reduction reduction) {
    if (anchors.rank() != 2 || anchors.dims() != candidates.dims()) {
        throw ConfigError("infonce expects matching [B, d] inputs, got " + dims_str(anchors.dims()) + " and " +
                          dims_str(candidates.dims()));
    }
    check_tau(tau);
    require_unit_rows(anchors.value(), "infonce anchors");
    require_unit_rows(candidates.value(), "infonce candidates");
    const Var logits = matmul(anchors, transpose(candidates)) / tau;  // [B, B]
    const Var matched = sum(anchors * candidates, -1) / tau;          // diagonal of logits
    return reduce_anchors(logsumexp(logits) - matched, reduction);
}

Var clip_loss(const Var& Y, const Var& Z, const Var& tau, Reduction reduction) {
    return scale(infonce_directional(Y, Z, tau, reduction) + infonce_directional(Z, Y, tau, reduction), 0.5);
}

AlignResult align_loss(const Var& Y, const Var& Z, const Var& tau, Reduction reduction) {
    if (Y.rank() != 3 || Z.rank() != 3 || Y.dim(0) != Z.dim(0) || Y.dim(2) != Z.dim(2)) {
        throw ConfigError("align_loss expects Y [B, V_I, d] and Z [B, V_T, d], got " + dims_str(Y.dims()) + " and " +
                          dims_str(Z.dims()));
    }
    const std::size_t b = Y.dim(0), vi = Y.dim(1), vt = Z.dim(1), d = Y.dim(2);
    if (vi == 0 || vt == 0) throw UsageError("align_loss on an empty view grid");
    std::vector<Var> yv, zv;
    for (std::size_t i = 0; i < vi; ++i) yv.push_back(vi == 1 ? reshape(Y, {b, d}) : reshape(slice(Y, 1, i, 1), {b, d}));
    for (std::size_t j = 0; j < vt; ++j) zv.push_back(vt == 1 ? reshape(Z, {b, d}) : reshape(slice(Z, 1, j, 1), {b, d}));

    AlignResult result;
    Var acc;
    for (std::size_t i = 0; i < vi; ++i) {
        for (std::size_t j = 0; j < vt; ++j) {
            const Var i2t = infonce_directional(yv[i], zv[j], tau, reduction);
            const Var t2i = infonce_directional(zv[j], yv[i], tau, reduction);
            result.image_to_text[{i, j}] = i2t.item();
            result.text_to_image[{i, j}] = t2i.item();
            const Var pair = scale(i2t + t2i, 0.5);
            acc = acc.defined() ? acc + pair : pair;
        }
    }
    result.loss = (vi * vt == 1) ? acc : scale(acc, 1.0 / static_cast<double>(vi * vt));
    return result;
}

FusionMasks fusion_masks(std::size_t batch, std::size_t image_views, std::size_t text_views) {
    const std::size_t k = image_views * text_views;
    const std::size_t rows = batch * k;
    if (k < 2) {
        throw UsageError("fusion loss needs at least two fused views per sample (V_I*V_T >= 2), got " +
                         std::to_string(k));
    }
    FusionMasks m{Tensor({rows, rows}), Tensor({rows, rows}), std::vector<std::size_t>(rows, 0),
                  std::vector<std::size_t>(rows, 0)};
    for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t c = 0; c < rows; ++c) {
            if (a == c) continue;
            m.candidates[a * rows + c] = 1.0;
            ++m.candidate_counts[a];
            if (a / k == c / k) {
                m.positives[a * rows + c] = 1.0;
                ++m.positive_counts[a];
            }
        }
    }
    return m;
}

Var fusion_loss(const Var& S, const Var& tau, Reduction reduction) {
    if (S.rank() != 4) throw ConfigError("fusion_loss expects S [B, V_I, V_T, d], got " + dims_str(S.dims()));
    check_tau(tau);
    const std::size_t b = S.dim(0), vi = S.dim(1), vt = S.dim(2), d = S.dim(3);
    if (b * vi * vt == 1) throw UsageError("fusion loss is degenerate for a single fused view (empty denominator)");
    const FusionMasks masks = fusion_masks(b, vi, vt);
    require_unit_rows(S.value(), "fusion_loss");
    const Var flat = reshape(S, {b * vi * vt, d});
    const Var logits = matmul(flat, transpose(flat)) / tau;
    // -log(sum_pos / sum_candidates) per anchor.
    const Var per_anchor = masked_logsumexp(logits, masks.candidates) - masked_logsumexp(logits, masks.positives);
    return reduce_anchors(per_anchor, reduction);
}

LossReport total_loss(const AlignResult& align, const std::optional<Var>& fusion, double lambda) {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    LossReport r;
    r.lambda = lambda;
    r.align = align.loss.item();
    r.image_to_text = align.image_to_text;
    r.text_to_image = align.text_to_image;
    if (fusion && lambda > 0.0) {
        r.fusion = fusion->item();
        r.total_var = align.loss + scale(*fusion, lambda);
    } else {
        r.fusion = fusion ? fusion->item() : 0.0;
        r.total_var = align.loss;
    }
    r.total = r.total_var.item();
    return r;
}

}  // namespace ito
