#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "ito/autodiff.hpp"

namespace ito {

// Mean normalizes the per-anchor sum by the number of anchors; Sum keeps the
// literal per-direction sum over the batch.
enum class Reduction { Mean, Sum };

// Tolerance on ||row|| - 1 before a loss rejects its input.
inline constexpr double kUnitNormTolerance = 1e-4;

// -log softmax of the matched pair: anchors [B, d] vs candidates [B, d], row n matches row n.
Var infonce_directional(const Var& anchors, const Var& candidates, const Var& tau,
                        Reduction reduction = Reduction::Mean);

// 1/2 (L_{I->T} + L_{T->I}).
Var clip_loss(const Var& Y, const Var& Z, const Var& tau, Reduction reduction = Reduction::Mean);

using ViewPair = std::pair<std::size_t, std::size_t>;  // (image view i, text view j)

struct AlignResult {
    Var loss;
    std::map<ViewPair, double> image_to_text;
    std::map<ViewPair, double> text_to_image;
};

// Average over all (i, j) of the bidirectional InfoNCE between image view i and text view j.
// Y [B, V_I, d], Z [B, V_T, d].
AlignResult align_loss(const Var& Y, const Var& Z, const Var& tau, Reduction reduction = Reduction::Mean);

// Masks over the flattened fused grid (row = n*V_I*V_T + i*V_T + j), [BK, BK] with K = V_I*V_T.
// positives: same sample, not self. candidates: everything but self.
struct FusionMasks {
    Tensor positives;
    Tensor candidates;
    std::vector<std::size_t> positive_counts;
    std::vector<std::size_t> candidate_counts;
};
FusionMasks fusion_masks(std::size_t batch, std::size_t image_views, std::size_t text_views);

// Multi-positive contrastive loss over fused representations S [B, V_I, V_T, d].
Var fusion_loss(const Var& S, const Var& tau, Reduction reduction = Reduction::Mean);

struct LossReport {
    Var total_var;
    double total = 0.0;
    double align = 0.0;
    double fusion = 0.0;
    double lambda = 0.0;
    std::map<ViewPair, double> image_to_text;
    std::map<ViewPair, double> text_to_image;
};

// total = align + lambda * fusion. With lambda == 0 (or no fusion term) total is the align Var itself.
LossReport total_loss(const AlignResult& align, const std::optional<Var>& fusion, double lambda);

// Rejects rows whose L2 norm is off by more than kUnitNormTolerance.
void require_unit_rows(const Tensor& t, const char* what);

}  // namespace ito
