#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <unistd.h>

#include "ito/data.hpp"
#include "ito/errors.hpp"

using namespace ito;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("ito_data_" + std::to_string(::getpid()) + "_" + name);
}

std::size_t count_word(const std::vector<std::int32_t>& ids, const std::string& w) {
    const auto id = vocabulary().id(w);
    return static_cast<std::size_t>(std::count(ids.begin(), ids.end(), id));
}

}  // namespace

TEST(Dataset, SameSeedIsBitwiseIdentical) {
    const Dataset a = generate_dataset(7, 64), b = generate_dataset(7, 64);
    EXPECT_EQ(a.images, b.images);
    for (std::size_t n = 0; n < 64; ++n) EXPECT_EQ(a.scenes[n].label, b.scenes[n].label);
    EXPECT_NE(a.images, generate_dataset(8, 64).images);
}

TEST(Dataset, ScenesAreValidAndVisible) {
    const Dataset d = generate_dataset(3, 500);
    for (std::size_t n = 0; n < d.size(); ++n) {
        const Scene& s = d.scenes[n];
        ASSERT_GE(s.objects.size(), 1u);
        ASSERT_LE(s.objects.size(), 3u);
        std::set<Quadrant> quads;
        for (const auto& o : s.objects) quads.insert(o.quadrant);
        EXPECT_EQ(quads.size(), s.objects.size());
        EXPECT_EQ(s.label, class_id(s.objects[0].shape, s.objects[0].color));
        double mx = 0.0;
        for (std::size_t k = 0; k < kImageValues; ++k) mx = std::max(mx, d.image(n)[k]);
        EXPECT_GT(mx, 0.0) << "sample " << n;
        EXPECT_LE(s.primary_box[2], kImageSize);
        EXPECT_LE(s.primary_box[3], kImageSize);
    }
}

TEST(Dataset, ClassHistogramIsNearUniform) {
    const Dataset d = generate_dataset(11, 4096);
    std::vector<double> hist(kNumClasses, 0.0);
    for (const auto& s : d.scenes) hist[s.label] += 1.0;
    const double p = 1.0 / kNumClasses, expected = 4096 * p, sd = std::sqrt(4096 * p * (1 - p));
    for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_LT(std::abs(hist[c] - expected), 5 * sd) << class_name(c);
}

TEST(Dataset, ClassNamesAndPrompts) {
    EXPECT_EQ(class_name(class_id(0, 0)), "red circle");
    EXPECT_EQ(class_prompt(class_id(3, 5)), "a photo of a blue cross");
    const auto ids = tokenize_prompt(class_prompt(0));
    EXPECT_EQ(ids[0], kBosId);
    EXPECT_EQ(ids[7], kEotId);
    EXPECT_EQ(ids.size(), kTextLen);
}

TEST(Augment, DeterministicGivenRngState) {
    const Dataset d = generate_dataset(5, 4);
    Rng r1(99), r2(99);
    EXPECT_EQ(augment_image(d.image(0), d.scenes[0].primary_box, r1),
              augment_image(d.image(0), d.scenes[0].primary_box, r2));
}

TEST(Augment, RangeAndGrayscale) {
    const Dataset d = generate_dataset(5, 16);
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        const auto v = augment_image(d.image(t % 16), d.scenes[t % 16].primary_box, rng);
        for (double x : v) {
            EXPECT_GE(x, 0.0);
            EXPECT_LE(x, 1.0);
        }
    }
    std::vector<double> img(d.image(0), d.image(0) + kImageValues);
    to_grayscale(img);
    const std::size_t plane = kImageSize * kImageSize;
    for (std::size_t p = 0; p < plane; ++p) {
        EXPECT_EQ(img[p], img[plane + p]);
        EXPECT_EQ(img[p], img[2 * plane + p]);
    }
}

TEST(Augment, JitterPreservesNearestPaletteHue) {
    const std::vector<double> factors{0.6, 0.8, 1.0, 1.2, 1.4};
    for (std::size_t c = 0; c < kNumColors; ++c) {
        for (double b : factors)
            for (double ct : factors)
                for (double s : factors) {
                    std::vector<double> swatch(kImageValues);
                    const std::size_t plane = kImageSize * kImageSize;
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        std::fill_n(swatch.begin() + ch * plane, plane, palette()[c][ch]);
                    color_jitter(swatch, b, ct, s);
                    EXPECT_EQ(nearest_palette_hue(swatch[0], swatch[plane], swatch[2 * plane]), c)
                        << color_names()[c] << " b=" << b << " c=" << ct << " s=" << s;
                }
    }
}

TEST(Text, SingleClauseSubModeKeepsClause) {
    const std::vector<std::vector<std::string>> one{{"a", "red", "circle", "at", "top", "left"}};
    Rng rng(2);
    for (int t = 0; t < 50; ++t) EXPECT_EQ(augment_text(one, TextMode::Sub, rng).clause_mask, 1u);
}

TEST(Text, FullCaptionLayout) {
    const std::vector<std::vector<std::string>> two{{"a", "red", "circle", "at", "top", "left"},
                                                    {"a", "blue", "square", "at", "bottom", "right"}};
    Rng rng(0);
    const TextView v = augment_text(two, TextMode::Full, rng);
    EXPECT_EQ(v.clause_mask, 3u);
    EXPECT_EQ(v.ids[0], kBosId);
    EXPECT_EQ(v.ids[7], vocabulary().id("and"));
    EXPECT_EQ(v.ids[14], kEotId);
    EXPECT_EQ(v.ids[15], kPadId);
}

TEST(Text, ThirdClauseIsTruncatedWholly) {
    const std::vector<std::vector<std::string>> three{{"a", "red", "circle", "at", "top", "left"},
                                                      {"a", "blue", "square", "at", "bottom", "right"},
                                                      {"a", "green", "cross", "at", "top", "right"}};
    const TextView v = tokenize_clauses(three, 7u);
    EXPECT_EQ(v.clause_mask, 3u);
    EXPECT_EQ(count_word(v.ids, "green"), 0u);
    EXPECT_EQ(count_word(v.ids, "<eot>"), 1u);
    const TextView only_third = tokenize_clauses(three, 4u);
    EXPECT_EQ(count_word(only_third.ids, "green"), 1u);
    const std::vector<std::vector<std::string>> huge{std::vector<std::string>(20, "a")};
    EXPECT_THROW(tokenize_clauses(huge, 1u), DataError);
}

TEST(Text, SynonymsAppearInSubMode) {
    const std::vector<std::vector<std::string>> one{{"a", "red", "circle", "at", "top", "left"}};
    Rng rng(3);
    std::size_t crimson = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) crimson += count_word(augment_text(one, TextMode::Sub, rng).ids, "crimson");
    const double sd = std::sqrt(trials * 0.3 * 0.7);
    EXPECT_LT(std::abs(static_cast<double>(crimson) - trials * 0.3), 5 * sd);
    EXPECT_EQ(synonyms().at("red"), "crimson");
}

TEST(Text, ClauseSubsetsAreUniform) {
    Rng rng(4);
    std::vector<double> hist(8, 0.0);
    const int draws = 100000;
    for (int t = 0; t < draws; ++t) hist[sample_clause_subset(3, rng)] += 1.0;
    EXPECT_EQ(hist[0], 0.0);
    const double p = 1.0 / 7.0, sd = std::sqrt(draws * p * (1 - p));
    for (std::size_t m = 1; m < 8; ++m) EXPECT_LT(std::abs(hist[m] - draws * p), 5 * sd) << "mask " << m;
}

TEST(Batches, DeterministicShapesAndCoverage) {
    const Dataset d = generate_dataset(9, 70);
    const auto a = make_batches(d, 16, 2, 2, 123, 4);
    const auto b = make_batches(d, 16, 2, 2, 123, 4);
    ASSERT_EQ(a.size(), 4u);
    std::set<std::size_t> seen;
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k].images, b[k].images);
        EXPECT_EQ(a[k].texts, b[k].texts);
        EXPECT_EQ(a[k].images.dims(), (Dims{16, 2, 3, 32, 32}));
        EXPECT_EQ(a[k].texts.size(), 16u * 2 * kTextLen);
        for (auto id : a[k].sample_ids) seen.insert(id);
        for (std::size_t r = 0; r < 16 * 2; ++r)
            EXPECT_EQ(std::count(a[k].texts.begin() + r * kTextLen, a[k].texts.begin() + (r + 1) * kTextLen, kEotId), 1);
    }
    EXPECT_EQ(seen.size(), 64u);
    const auto c = make_batches(d, 16, 2, 1, 123, 5);
    EXPECT_EQ(c[0].texts.size(), 16u * kTextLen);
    EXPECT_NE(c[0].sample_ids, a[0].sample_ids);
}

TEST(Batches, FirstImageViewIndependentOfViewCount) {
    const Dataset d = generate_dataset(9, 32);
    const auto one = make_batches(d, 8, 1, 1, 5, 0);
    const auto two = make_batches(d, 8, 2, 1, 5, 0);
    for (std::size_t b = 0; b < 8; ++b)
        for (std::size_t k = 0; k < kImageValues; ++k)
            ASSERT_EQ(one[0].images[b * kImageValues + k], two[0].images[(b * 2) * kImageValues + k]);
}

TEST(Manifest, RoundTripRegeneratesDataset) {
    const Dataset d = generate_dataset(21, 40);
    const auto path = temp_file("manifest.txt");
    write_manifest(d, path);
    const Manifest m = read_manifest(path);
    EXPECT_EQ(m.seed, 21u);
    EXPECT_EQ(m.size, 40u);
    EXPECT_EQ(m.vocab, vocabulary().words());
    EXPECT_EQ(m.classes.size(), kNumClasses);
    EXPECT_EQ(m.classes[0], "red circle");
    EXPECT_EQ(load_dataset(path).images, d.images);
    std::filesystem::remove(path);
    EXPECT_THROW(read_manifest(path), IoError);
}

TEST(Manifest, RawDumpSize) {
    const Dataset d = generate_dataset(22, 5);
    const auto path = temp_file("raw.bin");
    write_raw_dump(d, path);
    EXPECT_EQ(std::filesystem::file_size(path), 5u * (kImageValues * 4 + kTextLen * 2 + 2));
    std::filesystem::remove(path);
}
