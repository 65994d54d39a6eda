#include <algorithm>
#include <cmath>

#include "ito/data.hpp"
#include "ito/errors.hpp"

namespace ito {

namespace {

constexpr std::uint64_t kSceneTag = 0x5CE9E;
constexpr std::size_t kPrimaryRadius = 6;
constexpr std::size_t kSecondaryRadius = 4;

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) r = c, g = x;
    else if (hp < 2) r = x, g = c;
    else if (hp < 3) g = c, b = x;
    else if (hp < 4) g = x, b = c;
    else if (hp < 5) r = x, b = c;
    else r = c, b = x;
    const double m = v - c;
    return {r + m, g + m, b + m};
}

constexpr std::array<double, kNumColors> kHues{0.0, 30.0, 60.0, 120.0, 180.0, 230.0, 270.0, 315.0};

bool inside(std::size_t shape, double px, double py, double r) {
    const double ax = std::abs(px), ay = std::abs(py);
    switch (shape) {
        case 0:  // circle
            return px * px + py * py <= r * r;
        case 1:  // square
            return ax <= 0.85 * r && ay <= 0.85 * r;
        case 2:  // triangle, apex up
            return py >= -r && py <= r && ax <= 0.5 * (py + r);
        default:  // cross
            return (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r);
    }
}

std::pair<double, double> centre(const SceneObject& obj) {
    const double half = kImageSize / 2.0;
    const bool right = obj.quadrant == Quadrant::TopRight || obj.quadrant == Quadrant::BottomRight;
    const bool bottom = obj.quadrant == Quadrant::BottomLeft || obj.quadrant == Quadrant::BottomRight;
    return {(right ? half : 0.0) + half / 2.0 + obj.dx, (bottom ? half : 0.0) + half / 2.0 + obj.dy};
}

}  // namespace

const std::array<std::string, kNumShapes>& shape_names() {
    static const std::array<std::string, kNumShapes> n{"circle", "square", "triangle", "cross"};
    return n;
}

const std::array<std::string, kNumColors>& color_names() {
    static const std::array<std::string, kNumColors> n{"red", "orange", "yellow", "green",
                                                       "cyan", "blue", "purple", "magenta"};
    return n;
}

const std::array<std::array<double, 3>, kNumColors>& palette() {
    static const auto p = [] {
        std::array<std::array<double, 3>, kNumColors> out{};
        for (std::size_t c = 0; c < kNumColors; ++c) out[c] = hsv_to_rgb(kHues[c], 0.8, 0.65);
        return out;
    }();
    return p;
}

double hue_degrees(double r, double g, double b) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double d = mx - mn;
    if (d <= 0.0) return 0.0;
    double h;
    if (mx == r) h = 60.0 * std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = 60.0 * ((b - r) / d + 2.0);
    else h = 60.0 * ((r - g) / d + 4.0);
    return h < 0.0 ? h + 360.0 : h;
}

std::size_t nearest_palette_hue(double r, double g, double b) {
    const double h = hue_degrees(r, g, b);
    std::size_t best = 0;
    double best_d = 1e9;
    for (std::size_t c = 0; c < kNumColors; ++c) {
        double d = std::abs(h - kHues[c]);
        d = std::min(d, 360.0 - d);
        if (d < best_d) best_d = d, best = c;
    }
    return best;
}

std::size_t class_id(std::size_t shape, std::size_t color) { return shape * kNumColors + color; }

std::string class_name(std::size_t label) {
    if (label >= kNumClasses) throw DataError("class id " + std::to_string(label) + " out of range");
    return color_names()[label % kNumColors] + " " + shape_names()[label / kNumColors];
}

std::string class_prompt(std::size_t label) { return "a photo of a " + class_name(label); }

Scene sample_scene(Rng& rng) {
    Scene s;
    const std::size_t count = 1 + rng.below(3);
    std::array<Quadrant, 4> quads{Quadrant::TopLeft, Quadrant::TopRight, Quadrant::BottomLeft, Quadrant::BottomRight};
    for (std::size_t i = 0; i < 3; ++i) std::swap(quads[i], quads[i + rng.below(4 - i)]);
    for (std::size_t k = 0; k < count; ++k) {
        SceneObject o;
        o.shape = rng.below(kNumShapes);
        o.color = rng.below(kNumColors);
        o.quadrant = quads[k];
        o.dx = static_cast<int>(rng.below(3)) - 1;
        o.dy = static_cast<int>(rng.below(3)) - 1;
        o.radius = k == 0 ? kPrimaryRadius : kSecondaryRadius;
        s.objects.push_back(o);
    }
    const SceneObject& p = s.objects[0];
    s.label = class_id(p.shape, p.color);
    const auto [cx, cy] = centre(p);
    const double r = static_cast<double>(p.radius);
    s.primary_box = {static_cast<std::size_t>(std::floor(cx - r)), static_cast<std::size_t>(std::floor(cy - r)),
                     static_cast<std::size_t>(std::ceil(cx + r)), static_cast<std::size_t>(std::ceil(cy + r))};
    return s;
}

std::vector<double> render_scene(const Scene& scene) {
    std::vector<double> img(kImageValues, 0.0);
    const std::size_t plane = kImageSize * kImageSize;
    for (const auto& o : scene.objects) {
        const auto [cx, cy] = centre(o);
        const auto& rgb = palette()[o.color];
        for (std::size_t y = 0; y < kImageSize; ++y)
            for (std::size_t x = 0; x < kImageSize; ++x) {
                if (!inside(o.shape, x + 0.5 - cx, y + 0.5 - cy, static_cast<double>(o.radius))) continue;
                for (std::size_t c = 0; c < kChannels; ++c) img[c * plane + y * kImageSize + x] = rgb[c];
            }
    }
    return img;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t n) {
    if (n == 0) throw UsageError("dataset size must be >= 1");
    Dataset d;
    d.seed = seed;
    d.scenes.resize(n);
    d.images.resize(n * kImageValues);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, {kSceneTag, i}));
        d.scenes[i] = sample_scene(rng);
        const auto img = render_scene(d.scenes[i]);
        std::copy(img.begin(), img.end(), d.images.begin() + static_cast<std::ptrdiff_t>(i * kImageValues));
    }
    return d;
}

}  // namespace ito
