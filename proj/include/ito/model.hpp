#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ito/autodiff.hpp"
#include "ito/rng.hpp"

namespace ito {

struct VisionConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t channels = 3;
    std::size_t width = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t embed_dim = 64;
    std::size_t mlp_ratio = 4;

    void validate() const;
    std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }
    // Patch tokens plus the CLS token.
    std::size_t seq_len() const { return num_patches() + 1; }
};

struct TextConfig {
    std::size_t vocab_size = 64;
    std::size_t max_len = 16;
    std::size_t width = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t embed_dim = 64;
    std::size_t mlp_ratio = 4;
    std::int32_t eot_id = 2;

    void validate() const;
};

struct FusionConfig {
    std::size_t blocks = 2;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;

    void validate() const;
};

struct ModelConfig {
    VisionConfig vision;
    TextConfig text;
    FusionConfig fusion;
    bool with_fusion = true;
    // Fusion loss reuses the alignment temperature instead of its own.
    bool shared_tau = false;
    double init_tau = 0.07;

    void validate() const;
};

inline constexpr const char* kFusionPrefix = "fusion.";

// Ordered named parameters. Vars are shared handles, so optimizer updates to
// a stored Var are visible to every module holding it.
class ParamStore {
   public:
    Var& add(const std::string& name, Tensor init);
    const Var& get(const std::string& name) const;
    Var& get(const std::string& name);
    bool contains(const std::string& name) const { return index_.contains(name); }

    std::size_t count() const { return params_.size(); }
    // Total number of scalar values.
    std::size_t scalar_count() const;
    std::size_t scalar_count_with_prefix(const std::string& prefix) const;

    const std::vector<std::pair<std::string, Var>>& items() const { return params_; }
    std::vector<std::pair<std::string, Var>>& items() { return params_; }
    std::vector<Var> vars() const;
    void zero_grad();

   private:
    std::vector<std::pair<std::string, Var>> params_;
    std::map<std::string, std::size_t> index_;
};

// Pre-layer-norm transformer blocks: x + attn(ln1(x)), then x + mlp(ln2(x)).
class TransformerStack {
   public:
    TransformerStack() = default;
    TransformerStack(ParamStore& store, const std::string& prefix, std::size_t width, std::size_t heads,
                     std::size_t layers, std::size_t mlp_ratio, Rng* init);
    Var forward(const Var& x, bool causal) const;
    // Bidirectional stack evaluated only where it is read: row n of the result equals
    // forward(x, false)[n, pos[n]].
    Var forward_readout(const Var& x, std::span<const std::size_t> pos) const;
    std::size_t layers() const { return blocks_.size(); }

   private:
    struct Block {
        Var ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };
    std::vector<Block> blocks_;
    std::size_t width_ = 0;
    std::size_t heads_ = 0;
};

struct ImageEncoding {
    Var pooled;  // [N, embed_dim], unit rows
    Var tokens;  // [N, seq_len, width], post-final-LN, pre-pool
};

struct TextEncoding {
    Var pooled;                    // [N, embed_dim], unit rows
    Var tokens;                    // [N, max_len, width]
    std::vector<std::size_t> eot;  // [N]
};

// Pass `init == nullptr` to bind to parameters already present in the store.
class VisionEncoder {
   public:
    VisionEncoder() = default;
    VisionEncoder(ParamStore& store, const VisionConfig& cfg, Rng* init);
    // images [N, C, H, W]
    ImageEncoding forward(const Tensor& images) const;
    const VisionConfig& config() const { return cfg_; }

   private:
    VisionConfig cfg_;
    Var patch_w_, patch_b_, cls_, pos_, ln_g_, ln_b_, proj_;
    TransformerStack stack_;
};

class TextEncoder {
   public:
    TextEncoder() = default;
    TextEncoder(ParamStore& store, const TextConfig& cfg, Rng* init);
    // ids: n rows of max_len token ids, each containing exactly one EOT.
    TextEncoding forward(std::span<const std::int32_t> ids, std::size_t n) const;
    const TextConfig& config() const { return cfg_; }

   private:
    TextConfig cfg_;
    Var tok_, pos_, ln_g_, ln_b_, proj_;
    TransformerStack stack_;
};

// Position of the single EOT id in each row; DataError with the sample index otherwise.
std::vector<std::size_t> find_eot(std::span<const std::int32_t> ids, std::size_t n, std::size_t len,
                                  std::int32_t eot_id);

// Training-only fusion transformer over [image tokens ; text tokens].
class FusionModule {
   public:
    FusionModule() = default;
    FusionModule(ParamStore& store, const FusionConfig& cfg, std::size_t image_width, std::size_t text_width,
                 std::size_t image_len, std::size_t text_len, Rng* init);

    // Fuses pairs (image_rows[p], text_rows[p]) -> [P, width], unit rows.
    // img_tokens [Ni, L_I, d_img], txt_tokens [Nt, L_T, d_txt], eot indexed by text row.
    Var forward(const Var& img_tokens, const Var& txt_tokens, std::span<const std::size_t> image_rows,
                std::span<const std::size_t> text_rows, std::span<const std::size_t> eot) const;
    // Single pair: img [L_I, d], txt [L_T, d] -> [width].
    Var fuse(const Var& img_tokens, const Var& txt_tokens, std::size_t eot_index) const;

    std::size_t forward_calls() const { return forward_calls_; }
    const FusionConfig& config() const { return cfg_; }

   private:
    FusionConfig cfg_;
    std::size_t image_len_ = 0, text_len_ = 0;
    Var img_in_w_, img_in_b_, txt_in_w_, txt_in_b_, pos_, ln_g_, ln_b_;
    TransformerStack stack_;
    mutable std::size_t forward_calls_ = 0;
};

// Per-batch embeddings. Token tensors keep views flattened sample-major:
// img_tokens [B*V_I, L_I, d_m] with row n*V_I + i.
struct EmbeddingGrid {
    std::size_t batch = 0, image_views = 0, text_views = 0;
    Var Y;  // [B, V_I, d_e]
    Var Z;  // [B, V_T, d_e]
    Var img_tokens;
    Var txt_tokens;
    std::vector<std::size_t> eot;  // [B*V_T]
};

struct FusedGrid {
    Var S;  // [B, V_I, V_T, d_f], unit rows
};

// Dual encoder plus training-only fusion and temperatures.
class ItoModel {
   public:
    explicit ItoModel(const ModelConfig& cfg, std::uint64_t init_seed = 0);
    ItoModel(const ItoModel&) = delete;
    ItoModel& operator=(const ItoModel&) = delete;
    ItoModel(ItoModel&&) = default;
    ItoModel& operator=(ItoModel&&) = default;

    // images [B, V_I, C, H, W]; ids [B, V_T, L_T] flattened.
    EmbeddingGrid encode(const Tensor& images, std::span<const std::int32_t> ids, std::size_t text_views) const;
    FusedGrid fuse_grid(const EmbeddingGrid& grid) const;

    Var tau_align() const;
    Var tau_fusion() const;
    // Clamps exp(log tau) into [lo, hi] for both temperatures.
    void clamp_temperatures(double lo = 0.005, double hi = 1.0);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const VisionEncoder& vision() const { return vision_; }
    const TextEncoder& text() const { return text_; }
    const FusionModule& fusion() const;
    bool has_fusion() const { return cfg_.with_fusion; }

   private:
    ModelConfig cfg_;
    ParamStore params_;
    VisionEncoder vision_;
    TextEncoder text_;
    FusionModule fusion_;
    Var log_tau_align_, log_tau_fusion_;
};

// images [N, C, H, W] -> [N, num_patches, patch_dim], patches in raster order.
Tensor patchify(const Tensor& images, std::size_t patch_size);

}  // namespace ito
