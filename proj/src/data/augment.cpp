#include <algorithm>
#include <cmath>

#include "ito/data.hpp"

namespace ito {

namespace {

constexpr double kJitterProb = 0.8;
constexpr double kJitterStrength = 0.4;
constexpr double kGrayProb = 0.2;
constexpr double kNoise = 0.02;
constexpr int kCropAttempts = 10;
constexpr std::size_t kPlane = kImageSize * kImageSize;

void clip01(std::vector<double>& img) {
    for (auto& v : img) v = std::clamp(v, 0.0, 1.0);
}

double gray_at(const std::vector<double>& img, std::size_t p) {
    return 0.299 * img[p] + 0.587 * img[kPlane + p] + 0.114 * img[2 * kPlane + p];
}

}  // namespace

void color_jitter(std::vector<double>& img, double brightness, double contrast, double saturation) {
    for (auto& v : img) v *= brightness;
    clip01(img);
    double mean = 0.0;
    for (std::size_t p = 0; p < kPlane; ++p) mean += gray_at(img, p);
    mean /= static_cast<double>(kPlane);
    for (auto& v : img) v = (v - mean) * contrast + mean;
    clip01(img);
    for (std::size_t p = 0; p < kPlane; ++p) {
        const double g = gray_at(img, p);
        for (std::size_t c = 0; c < kChannels; ++c) {
            double& v = img[c * kPlane + p];
            v = (v - g) * saturation + g;
        }
    }
    clip01(img);
}

void to_grayscale(std::vector<double>& img) {
    for (std::size_t p = 0; p < kPlane; ++p) {
        const double g = gray_at(img, p);
        for (std::size_t c = 0; c < kChannels; ++c) img[c * kPlane + p] = g;
    }
}

std::vector<double> augment_image(const double* image, const std::array<std::size_t, 4>& box, Rng& rng) {
    const double n = static_cast<double>(kImageSize);
    const double box_area = static_cast<double>((box[2] - box[0]) * (box[3] - box[1]));
    std::size_t cx0 = 0, cy0 = 0, cw = kImageSize, ch = kImageSize;
    for (int attempt = 0; attempt < kCropAttempts; ++attempt) {
        const double area = rng.uniform(0.5, 1.0);
        const double aspect = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
        const auto w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(n * std::sqrt(area * aspect))), 1, kImageSize);
        const auto h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(n * std::sqrt(area / aspect))), 1, kImageSize);
        const std::size_t x0 = rng.below(kImageSize - w + 1), y0 = rng.below(kImageSize - h + 1);
        const std::size_t ix = std::max<std::ptrdiff_t>(0, std::ptrdiff_t(std::min(x0 + w, box[2])) - std::ptrdiff_t(std::max(x0, box[0])));
        const std::size_t iy = std::max<std::ptrdiff_t>(0, std::ptrdiff_t(std::min(y0 + h, box[3])) - std::ptrdiff_t(std::max(y0, box[1])));
        if (static_cast<double>(ix * iy) >= 0.5 * box_area) {
            cx0 = x0, cy0 = y0, cw = w, ch = h;
            break;
        }
    }
    std::vector<double> out(kImageValues);
    for (std::size_t c = 0; c < kChannels; ++c)
        for (std::size_t y = 0; y < kImageSize; ++y) {
            const std::size_t sy = cy0 + (y * ch) / kImageSize;
            for (std::size_t x = 0; x < kImageSize; ++x) {
                const std::size_t sx = cx0 + (x * cw) / kImageSize;
                out[c * kPlane + y * kImageSize + x] = image[c * kPlane + sy * kImageSize + sx];
            }
        }

    // Draw every random quantity unconditionally so the stream length is fixed.
    const bool jitter = rng.bernoulli(kJitterProb);
    const double b = rng.uniform(1.0 - kJitterStrength, 1.0 + kJitterStrength);
    const double ct = rng.uniform(1.0 - kJitterStrength, 1.0 + kJitterStrength);
    const double s = rng.uniform(1.0 - kJitterStrength, 1.0 + kJitterStrength);
    if (jitter) color_jitter(out, b, ct, s);
    if (rng.bernoulli(kGrayProb)) to_grayscale(out);
    for (auto& v : out) v += rng.uniform(-kNoise, kNoise);
    clip01(out);
    return out;
}

}  // namespace ito
