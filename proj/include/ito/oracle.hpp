#pragma once

#include <cstddef>
#include <vector>

// Brute-force reference losses. Plain nested loops over std::vector with
// explicit exp/log; shares no code with the graph-based losses.
namespace ito::oracle {

using Matrix = std::vector<std::vector<double>>;  // [rows][d]
using FusedViews = std::vector<std::vector<std::vector<std::vector<double>>>>;  // [B][V_I][V_T][d]

double cosine(const std::vector<double>& a, const std::vector<double>& b);

double infonce(const Matrix& anchors, const Matrix& candidates, double tau, bool sum_reduction = false);
double clip(const Matrix& y, const Matrix& z, double tau, bool sum_reduction = false);
// y[i] is image view i as [B][d]; z[j] likewise.
double align(const std::vector<Matrix>& y, const std::vector<Matrix>& z, double tau, bool sum_reduction = false);

struct TermCounts {
    std::vector<std::size_t> numerator;    // per anchor, flattened (n, i, j)
    std::vector<std::size_t> denominator;
};

// Multi-positive fused loss by direct enumeration of every (anchor, other) pair.
double fusion(const FusedViews& s, double tau, bool sum_reduction = false, TermCounts* counts = nullptr);

}  // namespace ito::oracle
