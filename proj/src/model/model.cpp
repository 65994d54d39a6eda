#include "ito/model.hpp"

#include <algorithm>
#include <cmath>

#include "ito/errors.hpp"

namespace ito {

namespace {

Tensor normal_init(Dims dims, double stddev, Rng* rng) {
    Tensor t(std::move(dims));
    if (rng) {
        for (auto& v : t.data()) v = rng->normal(0.0, stddev);
    }
    return t;
}

Tensor const_init(Dims dims, double value) { return Tensor(std::move(dims), value); }

// Registers a parameter when initializing, or binds an existing one when loading.
Var bind_param(ParamStore& store, const std::string& name, Tensor init, Rng* rng) {
    if (rng) return store.add(name, std::move(init));
    if (!store.contains(name)) throw ConfigError("missing parameter '" + name + "'");
    const Var& v = store.get(name);
    if (v.dims() != init.dims()) {
        throw ConfigError("parameter '" + name + "' has dims " + dims_str(v.dims()) + ", expected " +
                          dims_str(init.dims()));
    }
    return v;
}

}  // namespace

void VisionConfig::validate() const {
    if (patch_size == 0 || image_size % patch_size != 0) {
        throw ConfigError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                          std::to_string(patch_size));
    }
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("vision width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
    }
    if (layers == 0 || embed_dim == 0 || channels == 0) throw ConfigError("vision layers/embed_dim must be positive");
}

void TextConfig::validate() const {
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("text width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
    }
    if (layers == 0 || embed_dim == 0 || max_len < 2 || vocab_size == 0) {
        throw ConfigError("text layers/embed_dim/max_len/vocab_size out of range");
    }
    if (eot_id < 0 || static_cast<std::size_t>(eot_id) >= vocab_size) throw ConfigError("eot_id outside vocabulary");
}

void FusionConfig::validate() const {
    if (blocks < 1) throw ConfigError("fusion blocks must be >= 1");
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("fusion width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
    }
}

void ModelConfig::validate() const {
    vision.validate();
    text.validate();
    if (with_fusion) fusion.validate();
    if (vision.embed_dim != text.embed_dim) throw ConfigError("vision and text embed_dim differ");
    if (!(init_tau > 0.0)) throw ConfigError("init_tau must be positive");
}

Var& ParamStore::add(const std::string& name, Tensor init) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    params_.emplace_back(name, Var::leaf(std::move(init)));
    return params_.back().second;
}

const Var& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second].second;
}

Var& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second].second;
}

std::size_t ParamStore::scalar_count() const { return scalar_count_with_prefix(""); }

std::size_t ParamStore::scalar_count_with_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_) {
        if (name.starts_with(prefix)) n += v.value().size();
    }
    return n;
}

std::vector<Var> ParamStore::vars() const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.second);
    return out;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.second.zero_grad();
}

TransformerStack::TransformerStack(ParamStore& store, const std::string& prefix, std::size_t width, std::size_t heads,
                                   std::size_t layers, std::size_t mlp_ratio, Rng* init)
    : width_(width), heads_(heads) {
    const std::size_t hidden = width * mlp_ratio;
    const double std_w = 0.02;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string p = prefix + "blocks." + std::to_string(l) + ".";
        Block b;
        b.ln1_g = bind_param(store, p + "ln1.weight", const_init({width}, 1.0), init);
        b.ln1_b = bind_param(store, p + "ln1.bias", const_init({width}, 0.0), init);
        b.qkv_w = bind_param(store, p + "attn.qkv.weight", normal_init({width, 3 * width}, std_w, init), init);
        b.qkv_b = bind_param(store, p + "attn.qkv.bias", const_init({3 * width}, 0.0), init);
        b.out_w = bind_param(store, p + "attn.out.weight", normal_init({width, width}, std_w, init), init);
        b.out_b = bind_param(store, p + "attn.out.bias", const_init({width}, 0.0), init);
        b.ln2_g = bind_param(store, p + "ln2.weight", const_init({width}, 1.0), init);
        b.ln2_b = bind_param(store, p + "ln2.bias", const_init({width}, 0.0), init);
        b.fc1_w = bind_param(store, p + "mlp.fc1.weight", normal_init({width, hidden}, std_w, init), init);
        b.fc1_b = bind_param(store, p + "mlp.fc1.bias", const_init({hidden}, 0.0), init);
        b.fc2_w = bind_param(store, p + "mlp.fc2.weight", normal_init({hidden, width}, std_w, init), init);
        b.fc2_b = bind_param(store, p + "mlp.fc2.bias", const_init({width}, 0.0), init);
        blocks_.push_back(std::move(b));
    }
}

Var TransformerStack::forward(const Var& input, bool causal) const {
    Var x = input;
    for (const auto& b : blocks_) {
        const Var h = layer_norm(x, b.ln1_g, b.ln1_b);
        const Var qkv = linear(h, b.qkv_w, b.qkv_b);
        const Var a = attention(slice(qkv, -1, 0, width_), slice(qkv, -1, width_, width_),
                                slice(qkv, -1, 2 * width_, width_), heads_, causal);
        x = x + linear(a, b.out_w, b.out_b);
        const Var h2 = layer_norm(x, b.ln2_g, b.ln2_b);
        x = x + linear(gelu(linear(h2, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
    }
    return x;
}

Var TransformerStack::forward_readout(const Var& input, std::span<const std::size_t> pos) const {
    if (blocks_.empty()) return gather_tokens(input, pos);
    Var x = input;
    for (std::size_t l = 0; l + 1 < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        const Var h = layer_norm(x, b.ln1_g, b.ln1_b);
        const Var qkv = linear(h, b.qkv_w, b.qkv_b);
        const Var a = attention(slice(qkv, -1, 0, width_), slice(qkv, -1, width_, width_),
                                slice(qkv, -1, 2 * width_, width_), heads_, false);
        x = x + linear(a, b.out_w, b.out_b);
        const Var h2 = layer_norm(x, b.ln2_g, b.ln2_b);
        x = x + linear(gelu(linear(h2, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
    }
    // Last block: keys and values for every token, everything else only at the read-out position.
    const Block& b = blocks_.back();
    const std::size_t n = x.dim(0);
    const Var h = layer_norm(x, b.ln1_g, b.ln1_b);
    const Var kv = linear(h, slice(b.qkv_w, -1, width_, 2 * width_), slice(b.qkv_b, -1, width_, 2 * width_));
    const Var hr = reshape(gather_tokens(h, pos), {n, 1, width_});
    const Var q = linear(hr, slice(b.qkv_w, -1, 0, width_), slice(b.qkv_b, -1, 0, width_));
    const Var a = attention(q, slice(kv, -1, 0, width_), slice(kv, -1, width_, width_), heads_, false);
    Var xr = reshape(gather_tokens(x, pos), {n, 1, width_}) + linear(a, b.out_w, b.out_b);
    const Var h2 = layer_norm(xr, b.ln2_g, b.ln2_b);
    xr = xr + linear(gelu(linear(h2, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
    return reshape(xr, {n, width_});
}

Tensor patchify(const Tensor& images, std::size_t ps) {
    if (images.rank() != 4) throw ConfigError("patchify expects [N, C, H, W], got " + dims_str(images.dims()));
    const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (h % ps != 0 || w % ps != 0) throw ConfigError("image " + dims_str(images.dims()) + " not divisible into patches");
    const std::size_t gh = h / ps, gw = w / ps, pd = c * ps * ps;
    Tensor out({n, gh * gw, pd});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t py = 0; py < gh; ++py)
            for (std::size_t px = 0; px < gw; ++px) {
                double* dst = out.ptr() + (b * gh * gw + py * gw + px) * pd;
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t y = 0; y < ps; ++y)
                        for (std::size_t x = 0; x < ps; ++x)
                            *dst++ = images[((b * c + ch) * h + py * ps + y) * w + px * ps + x];
            }
    return out;
}

VisionEncoder::VisionEncoder(ParamStore& store, const VisionConfig& cfg, Rng* init) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t w = cfg_.width;
    patch_w_ = bind_param(store, "visual.patch_embed.weight", normal_init({cfg_.patch_dim(), w}, 0.02, init), init);
    patch_b_ = bind_param(store, "visual.patch_embed.bias", const_init({w}, 0.0), init);
    cls_ = bind_param(store, "visual.cls", normal_init({w}, 0.02, init), init);
    pos_ = bind_param(store, "visual.pos", normal_init({cfg_.seq_len(), w}, 0.01, init), init);
    stack_ = TransformerStack(store, "visual.", w, cfg_.heads, cfg_.layers, cfg_.mlp_ratio, init);
    ln_g_ = bind_param(store, "visual.ln_post.weight", const_init({w}, 1.0), init);
    ln_b_ = bind_param(store, "visual.ln_post.bias", const_init({w}, 0.0), init);
    proj_ = bind_param(store, "visual.proj", normal_init({w, cfg_.embed_dim}, 1.0 / std::sqrt(double(w)), init), init);
}

ImageEncoding VisionEncoder::forward(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != cfg_.channels || images.dim(2) != cfg_.image_size ||
        images.dim(3) != cfg_.image_size) {
        throw ConfigError("vision encoder expects [N, " + std::to_string(cfg_.channels) + ", " +
                          std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) + "], got " +
                          dims_str(images.dims()));
    }
    const std::size_t n = images.dim(0), w = cfg_.width;
    const Var patches = Var::constant(patchify(images, cfg_.patch_size));
    const Var x = linear(patches, patch_w_, patch_b_);
    const Var cls = Var::constant(Tensor({n, 1, w})) + reshape(cls_, {1, w});
    Var seq = concat({cls, x}, 1) + pos_;
    seq = stack_.forward(seq, /*causal=*/false);
    const Var tokens = layer_norm(seq, ln_g_, ln_b_);
    const std::vector<std::size_t> cls_pos(n, 0);
    const Var pooled = l2_normalize(matmul(gather_tokens(tokens, cls_pos), proj_));
    return {pooled, tokens};
}

std::vector<std::size_t> find_eot(std::span<const std::int32_t> ids, std::size_t n, std::size_t len,
                                  std::int32_t eot_id) {
    if (ids.size() != n * len) {
        throw ConfigError("text batch has " + std::to_string(ids.size()) + " ids, expected " +
                          std::to_string(n) + " x " + std::to_string(len));
    }
    std::vector<std::size_t> eot(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t found = 0, where = 0;
        for (std::size_t t = 0; t < len; ++t) {
            if (ids[r * len + t] == eot_id) {
                ++found;
                where = t;
            }
        }
        if (found != 1) {
            throw DataError("text sample " + std::to_string(r) + (found == 0 ? " has no EOT token" : " has multiple EOT tokens"));
        }
        eot[r] = where;
    }
    return eot;
}

TextEncoder::TextEncoder(ParamStore& store, const TextConfig& cfg, Rng* init) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t w = cfg_.width;
    tok_ = bind_param(store, "text.token_embed", normal_init({cfg_.vocab_size, w}, 0.02, init), init);
    pos_ = bind_param(store, "text.pos", normal_init({cfg_.max_len, w}, 0.01, init), init);
    stack_ = TransformerStack(store, "text.", w, cfg_.heads, cfg_.layers, cfg_.mlp_ratio, init);
    ln_g_ = bind_param(store, "text.ln_final.weight", const_init({w}, 1.0), init);
    ln_b_ = bind_param(store, "text.ln_final.bias", const_init({w}, 0.0), init);
    proj_ = bind_param(store, "text.proj", normal_init({w, cfg_.embed_dim}, 1.0 / std::sqrt(double(w)), init), init);
}

TextEncoding TextEncoder::forward(std::span<const std::int32_t> ids, std::size_t n) const {
    auto eot = find_eot(ids, n, cfg_.max_len, cfg_.eot_id);
    Var x = embedding(tok_, ids, {n, cfg_.max_len}) + pos_;
    x = stack_.forward(x, /*causal=*/true);
    const Var tokens = layer_norm(x, ln_g_, ln_b_);
    const Var pooled = l2_normalize(matmul(gather_tokens(tokens, eot), proj_));
    return {pooled, tokens, std::move(eot)};
}

FusionModule::FusionModule(ParamStore& store, const FusionConfig& cfg, std::size_t image_width,
                           std::size_t text_width, std::size_t image_len, std::size_t text_len, Rng* init)
    : cfg_(cfg), image_len_(image_len), text_len_(text_len) {
    cfg_.validate();
    const std::size_t f = cfg_.width;
    img_in_w_ = bind_param(store, "fusion.img_in.weight", normal_init({image_width, f}, 0.02, init), init);
    img_in_b_ = bind_param(store, "fusion.img_in.bias", const_init({f}, 0.0), init);
    txt_in_w_ = bind_param(store, "fusion.txt_in.weight", normal_init({text_width, f}, 0.02, init), init);
    txt_in_b_ = bind_param(store, "fusion.txt_in.bias", const_init({f}, 0.0), init);
    pos_ = bind_param(store, "fusion.pos", normal_init({image_len + text_len, f}, 0.01, init), init);
    stack_ = TransformerStack(store, "fusion.", f, cfg_.heads, cfg_.blocks, cfg_.mlp_ratio, init);
    ln_g_ = bind_param(store, "fusion.ln_post.weight", const_init({f}, 1.0), init);
    ln_b_ = bind_param(store, "fusion.ln_post.bias", const_init({f}, 0.0), init);
}

Var FusionModule::forward(const Var& img_tokens, const Var& txt_tokens, std::span<const std::size_t> image_rows,
                          std::span<const std::size_t> text_rows, std::span<const std::size_t> eot) const {
    if (image_rows.size() != text_rows.size() || image_rows.empty()) {
        throw ConfigError("fusion needs equally many (non-zero) image and text rows");
    }
    if (img_tokens.rank() != 3 || img_tokens.dim(1) != image_len_ || txt_tokens.rank() != 3 ||
        txt_tokens.dim(1) != text_len_) {
        throw ConfigError("fusion token shapes " + dims_str(img_tokens.dims()) + " / " + dims_str(txt_tokens.dims()) +
                          " do not match configured lengths");
    }
    if (eot.size() != txt_tokens.dim(0)) throw ConfigError("fusion needs one EOT index per text row");
    ++forward_calls_;
    // Project each modality once, then pair rows.
    const Var img = linear(img_tokens, img_in_w_, img_in_b_);
    const Var txt = linear(txt_tokens, txt_in_w_, txt_in_b_);
    Var seq = concat({index_select(img, image_rows), index_select(txt, text_rows)}, 1) + pos_;
    std::vector<std::size_t> readout(text_rows.size());
    for (std::size_t p = 0; p < text_rows.size(); ++p) readout[p] = image_len_ + eot[text_rows[p]];
    return l2_normalize(layer_norm(stack_.forward_readout(seq, readout), ln_g_, ln_b_));
}

Var FusionModule::fuse(const Var& img_tokens, const Var& txt_tokens, std::size_t eot_index) const {
    if (img_tokens.rank() != 2 || txt_tokens.rank() != 2) {
        throw ConfigError("fuse expects img [L_I, d] and txt [L_T, d], got " + dims_str(img_tokens.dims()) + " / " +
                          dims_str(txt_tokens.dims()));
    }
    if (eot_index >= text_len_) throw ConfigError("eot_index out of range");
    const std::size_t zero = 0;
    const Var img = reshape(img_tokens, {1, img_tokens.dim(0), img_tokens.dim(1)});
    const Var txt = reshape(txt_tokens, {1, txt_tokens.dim(0), txt_tokens.dim(1)});
    const Var out = forward(img, txt, {&zero, 1}, {&zero, 1}, {&eot_index, 1});
    return reshape(out, {cfg_.width});
}

ItoModel::ItoModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    // Independent init streams, so toggling or resizing fusion never moves encoder weights.
    Rng vision_rng(derive_seed(init_seed, {1}));
    Rng text_rng(derive_seed(init_seed, {2}));
    vision_ = VisionEncoder(params_, cfg_.vision, &vision_rng);
    text_ = TextEncoder(params_, cfg_.text, &text_rng);
    log_tau_align_ = params_.add("loss.log_tau_align", Tensor::scalar(std::log(cfg_.init_tau)));
    if (cfg_.with_fusion) {
        Rng fusion_rng(derive_seed(init_seed, {3}));
        fusion_ = FusionModule(params_, cfg_.fusion, cfg_.vision.width, cfg_.text.width, cfg_.vision.seq_len(),
                               cfg_.text.max_len, &fusion_rng);
        log_tau_fusion_ = params_.add("fusion.log_tau", Tensor::scalar(std::log(cfg_.init_tau)));
    }
}

const FusionModule& ItoModel::fusion() const {
    if (!cfg_.with_fusion) throw UsageError("model was built without a fusion module");
    return fusion_;
}

EmbeddingGrid ItoModel::encode(const Tensor& images, std::span<const std::int32_t> ids, std::size_t text_views) const {
    if (images.rank() != 5) throw ConfigError("encode expects images [B, V_I, C, H, W], got " + dims_str(images.dims()));
    const std::size_t b = images.dim(0), vi = images.dim(1);
    const Dims& d = images.dims();
    const ImageEncoding img = vision_.forward(images.reshaped({b * vi, d[2], d[3], d[4]}));
    if (text_views == 0 || ids.size() != b * text_views * cfg_.text.max_len) {
        throw ConfigError("encode: text ids do not match [B, V_T, L_T] = [" + std::to_string(b) + ", " +
                          std::to_string(text_views) + ", " + std::to_string(cfg_.text.max_len) + "]");
    }
    TextEncoding txt = text_.forward(ids, b * text_views);
    EmbeddingGrid grid;
    grid.batch = b;
    grid.image_views = vi;
    grid.text_views = text_views;
    grid.Y = reshape(img.pooled, {b, vi, cfg_.vision.embed_dim});
    grid.Z = reshape(txt.pooled, {b, text_views, cfg_.text.embed_dim});
    grid.img_tokens = img.tokens;
    grid.txt_tokens = txt.tokens;
    grid.eot = std::move(txt.eot);
    return grid;
}

FusedGrid ItoModel::fuse_grid(const EmbeddingGrid& grid) const {
    const FusionModule& f = fusion();
    std::vector<std::size_t> image_rows, text_rows;
    for (std::size_t n = 0; n < grid.batch; ++n)
        for (std::size_t i = 0; i < grid.image_views; ++i)
            for (std::size_t j = 0; j < grid.text_views; ++j) {
                image_rows.push_back(n * grid.image_views + i);
                text_rows.push_back(n * grid.text_views + j);
            }
    const Var s = f.forward(grid.img_tokens, grid.txt_tokens, image_rows, text_rows, grid.eot);
    return {reshape(s, {grid.batch, grid.image_views, grid.text_views, f.config().width})};
}

Var ItoModel::tau_align() const { return exp(log_tau_align_); }

Var ItoModel::tau_fusion() const {
    if (cfg_.shared_tau || !cfg_.with_fusion) return tau_align();
    return exp(log_tau_fusion_);
}

void ItoModel::clamp_temperatures(double lo, double hi) {
    const double llo = std::log(lo), lhi = std::log(hi);
    for (Var* v : {&log_tau_align_, &log_tau_fusion_}) {
        if (!v->defined()) continue;
        double& x = v->mutable_value()[0];
        x = std::clamp(x, llo, lhi);
        // exp(log(lo)) may round below lo; step inward until the exponentiated value is in range.
        while (std::exp(x) < lo) x = std::nextafter(x, lhi);
        while (std::exp(x) > hi) x = std::nextafter(x, llo);
    }
}

}  // namespace ito
