#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ito/data.hpp"
#include "ito/errors.hpp"

namespace ito {

namespace {

constexpr std::uint64_t kShuffleTag = 0x5A0FF1E;
constexpr std::uint64_t kViewTag = 0x71E35;

static_assert(std::endian::native == std::endian::little, "raw dump assumes a little-endian host");

}  // namespace

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {kShuffleTag, epoch}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch) { return batch == 0 ? 0 : n / batch; }

ViewBatch assemble_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t k,
                         std::size_t batch, std::size_t image_views, std::size_t text_views, std::uint64_t seed,
                         std::size_t epoch) {
    if (batch == 0 || batch > data.size()) {
        throw ConfigError("batch size " + std::to_string(batch) + " must be in [1, " + std::to_string(data.size()) + "]");
    }
    if (image_views == 0 || text_views == 0) throw ConfigError("view counts must be >= 1");
    if ((k + 1) * batch > order.size()) throw ConfigError("batch index out of range");
    ViewBatch vb;
    vb.batch = batch;
    vb.image_views = image_views;
    vb.text_views = text_views;
    vb.images = Tensor({batch, image_views, kChannels, kImageSize, kImageSize});
    vb.texts.resize(batch * text_views * kTextLen);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t id = order[k * batch + b];
        const Scene& scene = data.scenes[id];
        vb.sample_ids.push_back(id);
        vb.labels.push_back(scene.label);
        for (std::size_t i = 0; i < image_views; ++i) {
            Rng rng(derive_seed(seed, {kViewTag, epoch, id, 0, i}));
            const auto view = augment_image(data.image(id), scene.primary_box, rng);
            std::copy(view.begin(), view.end(), vb.images.ptr() + (b * image_views + i) * kImageValues);
        }
        const auto clauses = scene_clauses(scene);
        for (std::size_t j = 0; j < text_views; ++j) {
            Rng rng(derive_seed(seed, {kViewTag, epoch, id, 1, j}));
            // A single text view is the caption itself.
            const TextView tv = augment_text(clauses, text_views == 1 ? TextMode::Full : TextMode::Sub, rng);
            std::copy(tv.ids.begin(), tv.ids.end(), vb.texts.begin() + static_cast<std::ptrdiff_t>((b * text_views + j) * kTextLen));
        }
    }
    return vb;
}

std::vector<ViewBatch> make_batches(const Dataset& data, std::size_t batch, std::size_t image_views,
                                    std::size_t text_views, std::uint64_t seed, std::size_t epoch) {
    const auto order = epoch_order(data.size(), seed, epoch);
    std::vector<ViewBatch> out;
    for (std::size_t k = 0; k < batches_per_epoch(data.size(), batch); ++k)
        out.push_back(assemble_batch(data, order, k, batch, image_views, text_views, seed, epoch));
    return out;
}

void write_manifest(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "seed " << data.seed << "\n";
    os << "size " << data.size() << "\n";
    const auto& words = vocabulary().words();
    os << "vocab " << words.size() << "\n";
    for (std::size_t i = 0; i < words.size(); ++i) os << i << " " << words[i] << "\n";
    os << "classes " << kNumClasses << "\n";
    for (std::size_t c = 0; c < kNumClasses; ++c) os << c << " " << class_name(c) << "\n";
    if (!os) throw IoError("write failed: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path.string());
    Manifest m;
    auto expect_key = [&](const char* key) {
        std::string k;
        if (!(is >> k) || k != key) throw DataError("manifest " + path.string() + ": expected '" + key + "'");
    };
    std::size_t count = 0;
    expect_key("seed");
    is >> m.seed;
    expect_key("size");
    is >> m.size;
    expect_key("vocab");
    is >> count;
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t id;
        std::string w;
        if (!(is >> id >> w) || id != i) throw DataError("manifest " + path.string() + ": bad vocabulary line " + std::to_string(i));
        m.vocab.push_back(w);
    }
    expect_key("classes");
    is >> count;
    std::string line;
    std::getline(is, line);
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(is, line)) throw DataError("manifest " + path.string() + ": truncated class list");
        const auto sp = line.find(' ');
        m.classes.push_back(sp == std::string::npos ? "" : line.substr(sp + 1));
    }
    if (!is && !is.eof()) throw DataError("manifest " + path.string() + ": parse error");
    return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    const Manifest m = read_manifest(manifest_path);
    if (m.vocab != vocabulary().words()) throw DataError("manifest vocabulary does not match this build");
    for (std::size_t c = 0; c < m.classes.size(); ++c)
        if (c >= kNumClasses || m.classes[c] != class_name(c)) throw DataError("manifest class list does not match this build");
    return generate_dataset(m.seed, m.size);
}

void write_raw_dump(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    for (std::size_t n = 0; n < data.size(); ++n) {
        for (std::size_t k = 0; k < kImageValues; ++k) {
            const float f = static_cast<float>(data.image(n)[k]);
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
        const auto clauses = scene_clauses(data.scenes[n]);
        const TextView tv = tokenize_clauses(clauses, (1u << clauses.size()) - 1);
        for (auto id : tv.ids) {
            const auto u = static_cast<std::uint16_t>(id);
            os.write(reinterpret_cast<const char*>(&u), 2);
        }
        const auto label = static_cast<std::uint16_t>(data.scenes[n].label);
        os.write(reinterpret_cast<const char*>(&label), 2);
    }
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace ito
