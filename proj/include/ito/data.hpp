#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ito/rng.hpp"
#include "ito/tensor.hpp"

namespace ito {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kImageValues = kChannels * kImageSize * kImageSize;
inline constexpr std::size_t kTextLen = 16;
inline constexpr std::size_t kNumShapes = 4;
inline constexpr std::size_t kNumColors = 8;
inline constexpr std::size_t kNumClasses = kNumShapes * kNumColors;

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kBosId = 1;
inline constexpr std::int32_t kEotId = 2;

enum class Quadrant { TopLeft, TopRight, BottomLeft, BottomRight };

const std::array<std::string, kNumShapes>& shape_names();
const std::array<std::string, kNumColors>& color_names();
// RGB in [0, 1].
const std::array<std::array<double, 3>, kNumColors>& palette();
// Hue in degrees [0, 360) of an RGB triple; 0 for grays.
double hue_degrees(double r, double g, double b);
// Palette index whose hue is nearest (circular distance).
std::size_t nearest_palette_hue(double r, double g, double b);

struct SceneObject {
    std::size_t shape = 0;
    std::size_t color = 0;
    Quadrant quadrant = Quadrant::TopLeft;
    int dx = 0, dy = 0;      // centre offset within the quadrant
    std::size_t radius = 4;  // half extent in pixels
};

struct Scene {
    std::vector<SceneObject> objects;  // 1..3, distinct quadrants
    std::size_t label = 0;             // shape * kNumColors + color of objects[0]
    std::array<std::size_t, 4> primary_box{};  // x0, y0, x1, y1 (exclusive)
};

std::size_t class_id(std::size_t shape, std::size_t color);
std::string class_name(std::size_t label);  // "red circle"
// Zero-shot prompt: "a photo of a red circle".
std::string class_prompt(std::size_t label);

// Closed word-level vocabulary. Ids 0..2 are PAD, BOS, EOT.
class Vocabulary {
   public:
    Vocabulary();
    std::int32_t id(const std::string& word) const;  // DataError when unknown
    const std::string& word(std::int32_t id) const;
    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }

   private:
    std::vector<std::string> words_;
    std::map<std::string, std::int32_t> ids_;
};

const Vocabulary& vocabulary();
// Fixed synonym table: canonical word -> replacement.
const std::map<std::string, std::string>& synonyms();

// "a red circle at top left".
std::vector<std::string> clause_words(const SceneObject& obj);

struct Dataset {
    std::uint64_t seed = 0;
    std::vector<Scene> scenes;
    std::vector<double> images;  // [N, 3, 32, 32]
    std::size_t size() const { return scenes.size(); }
    const double* image(std::size_t n) const { return images.data() + n * kImageValues; }
};

Scene sample_scene(Rng& rng);
// Renders onto a black background.
std::vector<double> render_scene(const Scene& scene);
Dataset generate_dataset(std::uint64_t seed, std::size_t n);

// Crop (area in [0.5, 1], overlapping >= 50% of the primary box), nearest-neighbour
// resize, colour jitter, grayscale, uniform noise, clip to [0, 1].
std::vector<double> augment_image(const double* image, const std::array<std::size_t, 4>& primary_box, Rng& rng);

// Brightness, contrast and saturation factors applied in that order.
void color_jitter(std::vector<double>& image, double brightness, double contrast, double saturation);
void to_grayscale(std::vector<double>& image);

enum class TextMode { Full, Sub };

// Uniform over the 2^k - 1 non-empty subsets; bit c set keeps clause c.
std::uint32_t sample_clause_subset(std::size_t clauses, Rng& rng);

struct TextView {
    std::vector<std::int32_t> ids;  // kTextLen ids: BOS, words, EOT, PAD...
    std::uint32_t clause_mask = 0;  // clauses actually emitted after truncation
};

// Clauses are joined by "and"; whole clauses are dropped from the end when the
// sequence would exceed kTextLen. Sub mode also applies synonyms with prob 0.3 per word.
TextView augment_text(const std::vector<std::vector<std::string>>& clauses, TextMode mode, Rng& rng);
TextView tokenize_clauses(const std::vector<std::vector<std::string>>& clauses, std::uint32_t mask);
std::vector<std::vector<std::string>> scene_clauses(const Scene& scene);
std::vector<std::int32_t> tokenize_prompt(const std::string& text);

struct ViewBatch {
    std::size_t batch = 0, image_views = 0, text_views = 0;
    Tensor images;                   // [B, V_I, 3, 32, 32]
    std::vector<std::int32_t> texts;  // [B, V_T, kTextLen]
    std::vector<std::size_t> labels;
    std::vector<std::size_t> sample_ids;
};

// Sample order for one epoch, keyed by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);
std::size_t batches_per_epoch(std::size_t n, std::size_t batch);
// Batch k of an epoch. Views are drawn from RNGs derived from (seed, epoch, sample, slot),
// so the stream does not depend on anything else the caller does.
ViewBatch assemble_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t k,
                         std::size_t batch, std::size_t image_views, std::size_t text_views, std::uint64_t seed,
                         std::size_t epoch);
std::vector<ViewBatch> make_batches(const Dataset& data, std::size_t batch, std::size_t image_views,
                                    std::size_t text_views, std::uint64_t seed, std::size_t epoch);

// Manifest: seed, size, vocabulary (id and token per line), class names.
void write_manifest(const Dataset& data, const std::filesystem::path& path);
struct Manifest {
    std::uint64_t seed = 0;
    std::size_t size = 0;
    std::vector<std::string> vocab;
    std::vector<std::string> classes;
};
Manifest read_manifest(const std::filesystem::path& path);
// Regenerates a dataset from its manifest and checks vocabulary and classes match.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Per sample: image as float32 LE [3, 32, 32], full-caption token ids as u16 LE [kTextLen], label u16 LE.
void write_raw_dump(const Dataset& data, const std::filesystem::path& path);

}  // namespace ito
