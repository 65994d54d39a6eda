#include <sstream>

#include "ito/data.hpp"
#include "ito/errors.hpp"

namespace ito {

namespace {

constexpr double kSynonymProb = 0.3;

const std::array<std::string, 9> kFunctionWords{"a", "photo", "of", "and", "at", "top", "bottom", "left", "right"};

}  // namespace

const std::map<std::string, std::string>& synonyms() {
    static const std::map<std::string, std::string> table{
        {"red", "crimson"},   {"orange", "amber"},  {"yellow", "golden"}, {"green", "emerald"},
        {"cyan", "teal"},     {"blue", "azure"},    {"purple", "violet"}, {"magenta", "fuchsia"},
        {"circle", "disk"},   {"square", "block"},  {"triangle", "wedge"}, {"cross", "plus"},
    };
    return table;
}

Vocabulary::Vocabulary() {
    words_ = {"<pad>", "<bos>", "<eot>"};
    for (const auto& w : kFunctionWords) words_.push_back(w);
    for (const auto& w : shape_names()) words_.push_back(w);
    for (const auto& w : color_names()) words_.push_back(w);
    for (const auto& w : shape_names()) words_.push_back(synonyms().at(w));
    for (const auto& w : color_names()) words_.push_back(synonyms().at(w));
    for (std::size_t i = 0; i < words_.size(); ++i) ids_[words_[i]] = static_cast<std::int32_t>(i);
}

std::int32_t Vocabulary::id(const std::string& word) const {
    auto it = ids_.find(word);
    if (it == ids_.end()) throw DataError("word '" + word + "' is not in the vocabulary");
    return it->second;
}

const std::string& Vocabulary::word(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) throw DataError("token id out of range");
    return words_[static_cast<std::size_t>(id)];
}

const Vocabulary& vocabulary() {
    static const Vocabulary v;
    return v;
}

std::vector<std::string> clause_words(const SceneObject& obj) {
    const bool right = obj.quadrant == Quadrant::TopRight || obj.quadrant == Quadrant::BottomRight;
    const bool bottom = obj.quadrant == Quadrant::BottomLeft || obj.quadrant == Quadrant::BottomRight;
    return {"a", color_names()[obj.color], shape_names()[obj.shape], "at", bottom ? "bottom" : "top",
            right ? "right" : "left"};
}

std::vector<std::vector<std::string>> scene_clauses(const Scene& scene) {
    std::vector<std::vector<std::string>> out;
    for (const auto& o : scene.objects) out.push_back(clause_words(o));
    return out;
}

std::uint32_t sample_clause_subset(std::size_t clauses, Rng& rng) {
    if (clauses == 0 || clauses > 16) throw DataError("caption must have 1..16 clauses");
    return static_cast<std::uint32_t>(1 + rng.below((std::uint64_t{1} << clauses) - 1));
}

TextView tokenize_clauses(const std::vector<std::vector<std::string>>& clauses, std::uint32_t mask) {
    const Vocabulary& vocab = vocabulary();
    TextView view;
    view.ids.assign(kTextLen, kPadId);
    std::size_t pos = 0;
    view.ids[pos++] = kBosId;
    for (std::size_t c = 0; c < clauses.size(); ++c) {
        if (!(mask & (1u << c))) continue;
        const std::size_t joiner = view.clause_mask ? 1 : 0;
        // Room for the clause, its joiner and the closing EOT.
        if (pos + joiner + clauses[c].size() + 1 > kTextLen) break;
        if (joiner) view.ids[pos++] = vocab.id("and");
        for (const auto& w : clauses[c]) view.ids[pos++] = vocab.id(w);
        view.clause_mask |= 1u << c;
    }
    if (view.clause_mask == 0) throw DataError("caption clause does not fit in " + std::to_string(kTextLen) + " tokens");
    view.ids[pos] = kEotId;
    return view;
}

TextView augment_text(const std::vector<std::vector<std::string>>& clauses, TextMode mode, Rng& rng) {
    if (clauses.empty()) throw DataError("caption has no clauses");
    if (mode == TextMode::Full) return tokenize_clauses(clauses, (1u << clauses.size()) - 1);
    const std::uint32_t mask = sample_clause_subset(clauses.size(), rng);
    auto chosen = clauses;
    for (std::size_t c = 0; c < chosen.size(); ++c) {
        if (!(mask & (1u << c))) continue;
        for (auto& w : chosen[c]) {
            auto it = synonyms().find(w);
            if (it != synonyms().end() && rng.bernoulli(kSynonymProb)) w = it->second;
        }
    }
    return tokenize_clauses(chosen, mask);
}

std::vector<std::int32_t> tokenize_prompt(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> words;
    for (std::string w; is >> w;) words.push_back(w);
    return tokenize_clauses({words}, 1u).ids;
}

}  // namespace ito
