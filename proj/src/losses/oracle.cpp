#include "ito/oracle.hpp"

#include <cmath>

namespace ito::oracle {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

double infonce(const Matrix& anchors, const Matrix& candidates, double tau, bool sum_reduction) {
    const std::size_t b = anchors.size();
    double total = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
        double denom = 0.0;
        for (std::size_t m = 0; m < b; ++m) denom += std::exp(cosine(anchors[n], candidates[m]) / tau);
        const double numer = std::exp(cosine(anchors[n], candidates[n]) / tau);
        total += -std::log(numer / denom);
    }
    return sum_reduction ? total : total / static_cast<double>(b);
}

double clip(const Matrix& y, const Matrix& z, double tau, bool sum_reduction) {
    return 0.5 * (infonce(y, z, tau, sum_reduction) + infonce(z, y, tau, sum_reduction));
}

double align(const std::vector<Matrix>& y, const std::vector<Matrix>& z, double tau, bool sum_reduction) {
    double total = 0.0;
    for (const auto& yi : y)
        for (const auto& zj : z) total += 0.5 * (infonce(yi, zj, tau, sum_reduction) + infonce(zj, yi, tau, sum_reduction));
    return total / static_cast<double>(y.size() * z.size());
}

double fusion(const FusedViews& s, double tau, bool sum_reduction, TermCounts* counts) {
    const std::size_t b = s.size();
    const std::size_t vi = s[0].size();
    const std::size_t vt = s[0][0].size();
    double total = 0.0;
    std::size_t anchors = 0;
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < vi; ++i)
            for (std::size_t j = 0; j < vt; ++j) {
                double numer = 0.0, denom = 0.0;
                std::size_t n_terms = 0, d_terms = 0;
                for (std::size_t m = 0; m < b; ++m)
                    for (std::size_t i2 = 0; i2 < vi; ++i2)
                        for (std::size_t j2 = 0; j2 < vt; ++j2) {
                            if (m == n && i2 == i && j2 == j) continue;  // self-pair
                            const double e = std::exp(cosine(s[n][i][j], s[m][i2][j2]) / tau);
                            denom += e;
                            ++d_terms;
                            if (m == n) {
                                numer += e;
                                ++n_terms;
                            }
                        }
                if (counts) {
                    counts->numerator.push_back(n_terms);
                    counts->denominator.push_back(d_terms);
                }
                total += -std::log(numer / denom);
                ++anchors;
            }
    return sum_reduction ? total : total / static_cast<double>(anchors);
}

}  // namespace ito::oracle
