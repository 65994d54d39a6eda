#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ito/checkpoint.hpp"
#include "ito/data.hpp"

namespace ito {

// Argmax of cosine similarity against each prototype row; ties go to the lowest index.
std::vector<std::size_t> zero_shot_predict(const Tensor& image_embeddings, const Tensor& prototypes);
double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels);

// Normalized text embeddings of "a photo of a {color} {shape}" for every class, [32, d].
Tensor class_prototypes(const DualEncoder& enc);
// Un-augmented dataset images and full captions, embedded in fixed-size chunks.
Tensor embed_dataset_images(const DualEncoder& enc, const Dataset& data);
Tensor embed_dataset_texts(const DualEncoder& enc, const Dataset& data);
std::vector<std::size_t> dataset_labels(const Dataset& data);

double zero_shot_accuracy(const DualEncoder& enc, const Dataset& data);

inline constexpr std::array<std::size_t, 3> kRecallKs{1, 5, 10};

struct RetrievalReport {
    std::array<double, 3> image_to_text{};  // R@1, R@5, R@10
    std::array<double, 3> text_to_image{};
};

// 1-based rank of the matching candidate (row q of `candidates`) for every query row,
// ranking by cosine descending with ties broken by lower candidate index.
std::vector<std::size_t> match_ranks(const Tensor& queries, const Tensor& candidates);
RetrievalReport retrieval_recall(const Tensor& Y, const Tensor& Z);

struct ProbeResult {
    double accuracy = 0.0;
    std::vector<double> loss_history;  // training loss before each iteration
};

struct ProbeOptions {
    std::size_t iterations = 500;
    double lr = 0.1;
};

// Multinomial logistic regression by full-batch gradient descent; accuracy on the test rows.
ProbeResult linear_probe(const Tensor& train_x, const std::vector<std::size_t>& train_y, const Tensor& test_x,
                         const std::vector<std::size_t>& test_y, const ProbeOptions& opt = {});

// Deterministic 70/30 split of n indices from a seeded permutation.
struct Split {
    std::vector<std::size_t> train, test;
};
Split train_test_split(std::size_t n, double train_fraction, std::uint64_t seed);
Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows);

struct GeometryReport {
    double centroid_gap = 0.0;
    double modality_probe_acc = 0.0;
    double knn_mix = 0.0;
};

inline constexpr std::size_t kKnnNeighbours = 10;

// Y and Z are pools of unit-norm image and text embeddings.
GeometryReport geometry(const Tensor& Y, const Tensor& Z, std::uint64_t seed = 0);

struct EvalReport {
    std::size_t samples = 0;
    double zero_shot_acc = 0.0;
    RetrievalReport retrieval;
    double linear_probe_acc = 0.0;
    GeometryReport geometry;
    std::uint64_t param_name_checksum = 0;
    std::size_t fusion_params_loaded = 0;
    std::size_t param_count = 0;
};

// Everything is computed through the dual encoder alone.
EvalReport evaluate(const DualEncoder& enc, const Dataset& data, std::uint64_t seed = 0);
std::string to_json(const EvalReport& r);
void write_report(const EvalReport& r, const std::filesystem::path& path);

// Writes Y, Z and labels (as float64) in the checkpoint layout.
void export_embeddings(const DualEncoder& enc, const Dataset& data, const std::filesystem::path& path);

}  // namespace ito
