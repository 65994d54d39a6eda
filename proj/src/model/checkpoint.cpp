#include "ito/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "ito/errors.hpp"

namespace ito {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint: " + path.string());
    return v;
}

bool is_dual_entry(const std::string& name) {
    return name.starts_with("visual.") || name.starts_with("text.") || name.starts_with("meta.vision") ||
           name.starts_with("meta.text");
}

Tensor sizes(std::initializer_list<double> v) { return Tensor({v.size()}, std::vector<double>(v)); }

const Tensor* find_entry(std::span<const NamedTensor> entries, const std::string& name) {
    for (const auto& e : entries)
        if (e.name == name) return &e.value;
    return nullptr;
}

std::size_t field(const Tensor& t, std::size_t i) { return static_cast<std::size_t>(t[i]); }

}  // namespace

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("ITO1", 4);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xFFFF) throw ConfigError("parameter name too long: " + e.name);
        put<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put<std::uint8_t>(os, static_cast<std::uint8_t>(e.value.rank()));
        for (auto d : e.value.dims()) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(e.value.ptr()), static_cast<std::streamsize>(e.value.size() * 8));
    }
    if (!os) throw IoError("write failed: " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "ITO1", 4) != 0) throw IoError("bad checkpoint magic: " + path.string());
    const auto version = get<std::uint32_t>(is, path);
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
    }
    const auto count = get<std::uint32_t>(is, path);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint16_t>(is, path);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw IoError("truncated checkpoint: " + path.string());
        const auto rank = get<std::uint8_t>(is, path);
        Dims dims(rank);
        for (auto& d : dims) d = get<std::uint32_t>(is, path);
        Tensor t(dims);
        if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * 8))) {
            throw IoError("truncated checkpoint: " + path.string());
        }
        out.push_back({std::move(name), std::move(t)});
    }
    return out;
}

std::vector<NamedTensor> config_entries(const ModelConfig& cfg, bool include_fusion) {
    const auto& v = cfg.vision;
    const auto& t = cfg.text;
    std::vector<NamedTensor> out{
        {"meta.vision", sizes({double(v.image_size), double(v.patch_size), double(v.channels), double(v.width),
                               double(v.layers), double(v.heads), double(v.embed_dim), double(v.mlp_ratio)})},
        {"meta.text", sizes({double(t.vocab_size), double(t.max_len), double(t.width), double(t.layers),
                             double(t.heads), double(t.embed_dim), double(t.mlp_ratio), double(t.eot_id)})},
    };
    if (include_fusion && cfg.with_fusion) {
        const auto& f = cfg.fusion;
        out.push_back({"meta.fusion", sizes({double(f.blocks), double(f.width), double(f.heads), double(f.mlp_ratio),
                                             cfg.shared_tau ? 1.0 : 0.0})});
    }
    return out;
}

ModelConfig config_from_entries(std::span<const NamedTensor> entries) {
    const Tensor* v = find_entry(entries, "meta.vision");
    const Tensor* t = find_entry(entries, "meta.text");
    if (!v || !t || v->size() != 8 || t->size() != 8) throw IoError("checkpoint lacks model configuration entries");
    ModelConfig cfg;
    cfg.vision = {field(*v, 0), field(*v, 1), field(*v, 2), field(*v, 3),
                  field(*v, 4), field(*v, 5), field(*v, 6), field(*v, 7)};
    cfg.text = {field(*t, 0), field(*t, 1), field(*t, 2), field(*t, 3),
                field(*t, 4), field(*t, 5), field(*t, 6), static_cast<std::int32_t>((*t)[7])};
    if (const Tensor* f = find_entry(entries, "meta.fusion"); f && f->size() == 5) {
        cfg.with_fusion = true;
        cfg.fusion = {field(*f, 0), field(*f, 1), field(*f, 2), field(*f, 3)};
        cfg.shared_tau = (*f)[4] != 0.0;
    } else {
        cfg.with_fusion = false;
    }
    return cfg;
}

void save_full_checkpoint(const ItoModel& model, const std::filesystem::path& path) {
    auto entries = config_entries(model.config(), true);
    for (const auto& [name, var] : model.params().items()) entries.push_back({name, var.value()});
    write_checkpoint(path, entries);
}

std::vector<NamedTensor> dual_encoder_entries(const ItoModel& model) {
    auto entries = config_entries(model.config(), false);
    for (const auto& [name, var] : model.params().items()) {
        if (is_dual_entry(name)) entries.push_back({name, var.value()});
    }
    return entries;
}

void export_dual_encoder(const ItoModel& model, const std::filesystem::path& path) {
    write_checkpoint(path, dual_encoder_entries(model));
}

void load_into(ParamStore& store, std::span<const NamedTensor> entries) {
    for (auto& [name, var] : store.items()) {
        const Tensor* t = find_entry(entries, name);
        if (!t) throw IoError("checkpoint is missing parameter '" + name + "'");
        if (t->dims() != var.dims()) {
            throw IoError("checkpoint parameter '" + name + "' has dims " + dims_str(t->dims()) + ", model expects " +
                          dims_str(var.dims()));
        }
        var.mutable_value() = *t;
    }
}

ItoModel load_full_checkpoint(const std::filesystem::path& path) {
    const auto entries = read_checkpoint(path);
    ItoModel model(config_from_entries(entries), 0);
    load_into(model.params(), entries);
    return model;
}

DualEncoder DualEncoder::from_entries(std::span<const NamedTensor> entries) {
    ModelConfig cfg = config_from_entries(entries);
    DualEncoder enc;
    for (const auto& e : entries) {
        if (e.name.starts_with("visual.") || e.name.starts_with("text.")) enc.store_.add(e.name, e.value);
    }
    enc.vision_ = VisionEncoder(enc.store_, cfg.vision, nullptr);
    enc.text_ = TextEncoder(enc.store_, cfg.text, nullptr);
    for (auto& v : enc.store_.vars()) v.set_requires_grad(false);
    return enc;
}

DualEncoder DualEncoder::load(const std::filesystem::path& path) { return from_entries(read_checkpoint(path)); }

Tensor DualEncoder::embed_images(const Tensor& images) const { return vision_.forward(images).pooled.value(); }

Tensor DualEncoder::embed_texts(std::span<const std::int32_t> ids, std::size_t n) const {
    return text_.forward(ids, n).pooled.value();
}

std::vector<std::string> DualEncoder::param_names() const {
    std::vector<std::string> names;
    for (const auto& p : store_.items()) names.push_back(p.first);
    std::sort(names.begin(), names.end());
    return names;
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t DualEncoder::name_checksum() const {
    std::string joined;
    for (const auto& n : param_names()) {
        joined += n;
        joined += '\n';
    }
    return fnv1a64(joined);
}

std::size_t DualEncoder::fusion_param_count() const {
    std::size_t n = 0;
    for (const auto& p : store_.items())
        if (p.first.starts_with(kFusionPrefix)) ++n;
    return n;
}

}  // namespace ito
