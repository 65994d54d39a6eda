#include "ito/eval.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "ito/errors.hpp"

namespace ito {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapR = Eigen::Map<const MatR>;

constexpr std::size_t kEmbedChunk = 128;

MatR normalized_rows(const Tensor& t) {
    if (t.rank() != 2) throw ConfigError("expected a [N, d] embedding matrix, got " + dims_str(t.dims()));
    MatR m = CMapR(t.ptr(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
    // Scalar loops: equal rows must stay bitwise equal wherever they sit in memory.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        double sq = 0.0;
        for (Eigen::Index k = 0; k < m.cols(); ++k) sq += m(r, k) * m(r, k);
        const double n = std::sqrt(sq);
        if (n > 0.0)
            for (Eigen::Index k = 0; k < m.cols(); ++k) m(r, k) /= n;
    }
    return m;
}

// Cosine similarities in a fixed summation order, so identical rows score identically and ties are exact.
MatR cosine_matrix(const MatR& a, const MatR& b) {
    MatR sim(a.rows(), b.rows());
    const Eigen::Index d = a.cols();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double* x = a.data() + i * d;
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double* y = b.data() + j * d;
            double s = 0.0;
            for (Eigen::Index k = 0; k < d; ++k) s += x[k] * y[k];
            sim(i, j) = s;
        }
    }
    return sim;
}

Tensor from_matrix(const MatR& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    Eigen::Map<MatR>(t.ptr(), m.rows(), m.cols()) = m;
    return t;
}

}  // namespace

std::vector<std::size_t> zero_shot_predict(const Tensor& image_embeddings, const Tensor& prototypes) {
    const MatR sim = cosine_matrix(normalized_rows(image_embeddings), normalized_rows(prototypes));
    std::vector<std::size_t> pred(static_cast<std::size_t>(sim.rows()));
    for (Eigen::Index r = 0; r < sim.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < sim.cols(); ++c)
            if (sim(r, c) > sim(r, best)) best = c;
        pred[static_cast<std::size_t>(r)] = static_cast<std::size_t>(best);
    }
    return pred;
}

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels) {
    if (predicted.size() != labels.size() || labels.empty()) throw ConfigError("accuracy needs equal, non-empty inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Tensor class_prototypes(const DualEncoder& enc) {
    std::vector<std::int32_t> ids;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const auto row = tokenize_prompt(class_prompt(c));
        ids.insert(ids.end(), row.begin(), row.end());
    }
    return from_matrix(normalized_rows(enc.embed_texts(ids, kNumClasses)));
}

Tensor embed_dataset_images(const DualEncoder& enc, const Dataset& data) {
    const std::size_t n = data.size();
    const std::size_t d = enc.vision_config().embed_dim;
    Tensor out({n, d});
    for (std::size_t start = 0; start < n; start += kEmbedChunk) {
        const std::size_t len = std::min(kEmbedChunk, n - start);
        Tensor chunk({len, kChannels, kImageSize, kImageSize},
                     std::vector<double>(data.image(start), data.image(start) + len * kImageValues));
        const Tensor e = enc.embed_images(chunk);
        std::copy(e.ptr(), e.ptr() + len * d, out.ptr() + start * d);
    }
    return out;
}

Tensor embed_dataset_texts(const DualEncoder& enc, const Dataset& data) {
    const std::size_t n = data.size();
    const std::size_t d = enc.text_config().embed_dim;
    Tensor out({n, d});
    for (std::size_t start = 0; start < n; start += kEmbedChunk) {
        const std::size_t len = std::min(kEmbedChunk, n - start);
        std::vector<std::int32_t> ids;
        for (std::size_t i = start; i < start + len; ++i) {
            const auto clauses = scene_clauses(data.scenes[i]);
            const auto row = tokenize_clauses(clauses, (1u << clauses.size()) - 1).ids;
            ids.insert(ids.end(), row.begin(), row.end());
        }
        const Tensor e = enc.embed_texts(ids, len);
        std::copy(e.ptr(), e.ptr() + len * d, out.ptr() + start * d);
    }
    return out;
}

std::vector<std::size_t> dataset_labels(const Dataset& data) {
    std::vector<std::size_t> labels;
    for (const auto& s : data.scenes) labels.push_back(s.label);
    return labels;
}

double zero_shot_accuracy(const DualEncoder& enc, const Dataset& data) {
    return accuracy(zero_shot_predict(embed_dataset_images(enc, data), class_prototypes(enc)), dataset_labels(data));
}

std::vector<std::size_t> match_ranks(const Tensor& queries, const Tensor& candidates) {
    if (queries.dims() != candidates.dims()) {
        throw ConfigError("retrieval needs paired [N, d] inputs, got " + dims_str(queries.dims()) + " and " +
                          dims_str(candidates.dims()));
    }
    const MatR sim = cosine_matrix(normalized_rows(queries), normalized_rows(candidates));
    std::vector<std::size_t> ranks(static_cast<std::size_t>(sim.rows()));
    for (Eigen::Index q = 0; q < sim.rows(); ++q) {
        const double s = sim(q, q);
        std::size_t ahead = 0;
        for (Eigen::Index c = 0; c < sim.cols(); ++c)
            if (sim(q, c) > s || (sim(q, c) == s && c < q)) ++ahead;
        ranks[static_cast<std::size_t>(q)] = ahead + 1;
    }
    return ranks;
}

RetrievalReport retrieval_recall(const Tensor& Y, const Tensor& Z) {
    RetrievalReport r;
    const auto fill = [](const std::vector<std::size_t>& ranks, std::array<double, 3>& out) {
        for (std::size_t k = 0; k < kRecallKs.size(); ++k) {
            const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](std::size_t rk) { return rk <= kRecallKs[k]; });
            out[k] = static_cast<double>(hits) / static_cast<double>(ranks.size());
        }
    };
    fill(match_ranks(Y, Z), r.image_to_text);
    fill(match_ranks(Z, Y), r.text_to_image);
    return r;
}

ProbeResult linear_probe(const Tensor& train_x, const std::vector<std::size_t>& train_y, const Tensor& test_x,
                         const std::vector<std::size_t>& test_y, const ProbeOptions& opt) {
    if (train_x.rank() != 2 || test_x.rank() != 2 || train_x.dim(1) != test_x.dim(1)) {
        throw ConfigError("linear_probe expects [N, d] features with matching d");
    }
    if (train_y.size() != train_x.dim(0) || test_y.size() != test_x.dim(0) || test_y.empty()) {
        throw ConfigError("linear_probe: label counts do not match feature rows");
    }
    std::vector<std::size_t> distinct(train_y);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw UsageError("linear_probe needs at least two classes in the training split");
    const auto classes = static_cast<Eigen::Index>(
        std::max(*std::max_element(train_y.begin(), train_y.end()), *std::max_element(test_y.begin(), test_y.end())) + 1);

    const auto n = static_cast<Eigen::Index>(train_x.dim(0)), d = static_cast<Eigen::Index>(train_x.dim(1));
    const CMapR x(train_x.ptr(), n, d);
    MatR onehot = MatR::Zero(n, classes);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, static_cast<Eigen::Index>(train_y[static_cast<std::size_t>(i)])) = 1.0;
    MatR w = MatR::Zero(d, classes);
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(classes);
    ProbeResult result;
    for (std::size_t it = 0; it < opt.iterations; ++it) {
        MatR logits = x * w;
        logits.rowwise() += b;
        double loss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mx = logits.row(i).maxCoeff();
            logits.row(i).array() = (logits.row(i).array() - mx).exp();
            const double z = logits.row(i).sum();
            logits.row(i) /= z;
            loss -= std::log(std::max(logits(i, static_cast<Eigen::Index>(train_y[static_cast<std::size_t>(i)])), 1e-300));
        }
        result.loss_history.push_back(loss / static_cast<double>(n));
        const MatR delta = (logits - onehot) / static_cast<double>(n);
        w.noalias() -= opt.lr * (x.transpose() * delta);
        b -= opt.lr * delta.colwise().sum();
    }
    MatR test_logits = CMapR(test_x.ptr(), static_cast<Eigen::Index>(test_x.dim(0)), d) * w;
    test_logits.rowwise() += b;
    std::vector<std::size_t> pred(test_y.size());
    for (Eigen::Index i = 0; i < test_logits.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < classes; ++c)
            if (test_logits(i, c) > test_logits(i, best)) best = c;
        pred[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
    }
    result.accuracy = accuracy(pred, test_y);
    return result;
}

Split train_test_split(std::size_t n, double train_fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {0x5B117}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
    return s;
}

Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const std::size_t d = x.dim(1);
    Tensor out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.ptr() + rows[i] * d, d, out.ptr() + i * d);
    return out;
}

GeometryReport geometry(const Tensor& Y, const Tensor& Z, std::uint64_t seed) {
    if (Y.rank() != 2 || Z.rank() != 2 || Y.dim(1) != Z.dim(1)) {
        throw ConfigError("geometry expects pools [N, d] and [M, d], got " + dims_str(Y.dims()) + " and " +
                          dims_str(Z.dims()));
    }
    const MatR y = CMapR(Y.ptr(), static_cast<Eigen::Index>(Y.dim(0)), static_cast<Eigen::Index>(Y.dim(1)));
    const MatR z = CMapR(Z.ptr(), static_cast<Eigen::Index>(Z.dim(0)), static_cast<Eigen::Index>(Z.dim(1)));
    GeometryReport g;
    g.centroid_gap = (y.colwise().mean() - z.colwise().mean()).norm();

    MatR all(y.rows() + z.rows(), y.cols());
    all << y, z;
    const std::size_t total = static_cast<std::size_t>(all.rows());
    std::vector<std::size_t> modality(total, 0);
    std::fill(modality.begin() + Y.dim(0), modality.end(), 1);

    const Tensor pooled = from_matrix(all);
    const Split split = train_test_split(total, 0.7, seed);
    std::vector<std::size_t> ytr, yte;
    for (auto i : split.train) ytr.push_back(modality[i]);
    for (auto i : split.test) yte.push_back(modality[i]);
    g.modality_probe_acc = linear_probe(take_rows(pooled, split.train), ytr, take_rows(pooled, split.test), yte).accuracy;

    const MatR unit = normalized_rows(pooled);
    const MatR sim = cosine_matrix(unit, unit);
    const std::size_t k = std::min(kKnnNeighbours, total - 1);
    double mix = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < total; ++i) {
        idx.clear();
        for (std::size_t j = 0; j < total; ++j)
            if (j != i) idx.push_back(j);
        const auto row = static_cast<Eigen::Index>(i);
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
            const double sa = sim(row, static_cast<Eigen::Index>(a)), sb = sim(row, static_cast<Eigen::Index>(b));
            return sa > sb || (sa == sb && a < b);
        });
        std::size_t other = 0;
        for (std::size_t t = 0; t < k; ++t) other += modality[idx[t]] != modality[i];
        mix += static_cast<double>(other) / static_cast<double>(k);
    }
    g.knn_mix = mix / static_cast<double>(total);
    return g;
}

EvalReport evaluate(const DualEncoder& enc, const Dataset& data, std::uint64_t seed) {
    EvalReport r;
    r.samples = data.size();
    r.param_name_checksum = enc.name_checksum();
    r.fusion_params_loaded = enc.fusion_param_count();
    r.param_count = enc.scalar_count();
    if (r.fusion_params_loaded != 0) throw ContractError("evaluation encoder carries fusion parameters");
    const Tensor y = embed_dataset_images(enc, data);
    const Tensor z = embed_dataset_texts(enc, data);
    const auto labels = dataset_labels(data);
    r.zero_shot_acc = accuracy(zero_shot_predict(y, class_prototypes(enc)), labels);
    r.retrieval = retrieval_recall(y, z);
    const Split split = train_test_split(data.size(), 0.7, seed);
    std::vector<std::size_t> ytr, yte;
    for (auto i : split.train) ytr.push_back(labels[i]);
    for (auto i : split.test) yte.push_back(labels[i]);
    r.linear_probe_acc = linear_probe(take_rows(y, split.train), ytr, take_rows(y, split.test), yte).accuracy;
    r.geometry = geometry(y, z, seed);
    return r;
}

std::string to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["samples"] = r.samples;
    j["zero_shot_acc"] = r.zero_shot_acc;
    const auto recall = [](const std::array<double, 3>& v) {
        return nlohmann::ordered_json{{"r1", v[0]}, {"r5", v[1]}, {"r10", v[2]}};
    };
    j["retrieval"] = {{"image_to_text", recall(r.retrieval.image_to_text)},
                      {"text_to_image", recall(r.retrieval.text_to_image)}};
    j["linear_probe_acc"] = r.linear_probe_acc;
    j["geometry"] = {{"centroid_gap", r.geometry.centroid_gap},
                     {"modality_probe_acc", r.geometry.modality_probe_acc},
                     {"knn_mix", r.geometry.knn_mix}};
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(r.param_name_checksum));
    j["param_name_checksum"] = hex;
    j["fusion_params_loaded"] = r.fusion_params_loaded;
    j["param_count"] = r.param_count;
    return j.dump(2);
}

void write_report(const EvalReport& r, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << to_json(r) << "\n";
    if (!os) throw IoError("write failed: " + path.string());
}

void export_embeddings(const DualEncoder& enc, const Dataset& data, const std::filesystem::path& path) {
    Tensor labels({data.size()});
    for (std::size_t i = 0; i < data.size(); ++i) labels[i] = static_cast<double>(data.scenes[i].label);
    const std::vector<NamedTensor> entries{{"Y", embed_dataset_images(enc, data)},
                                           {"Z", embed_dataset_texts(enc, data)},
                                           {"labels", std::move(labels)}};
    write_checkpoint(path, entries);
}

}  // namespace ito
