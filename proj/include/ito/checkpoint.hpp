#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ito/model.hpp"

namespace ito {

// Binary layout (all little-endian):
//   "ITO1" | version u32 | count u32 |
//   per entry: name_len u16, name bytes, rank u8, dims u32 x rank, float64 x prod(dims)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
};

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> entries);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

// Model configuration travels with the weights as "meta.*" entries.
std::vector<NamedTensor> config_entries(const ModelConfig& cfg, bool include_fusion);
ModelConfig config_from_entries(std::span<const NamedTensor> entries);

void save_full_checkpoint(const ItoModel& model, const std::filesystem::path& path);
// Image/text encoders and their projection heads, plus their configuration.
std::vector<NamedTensor> dual_encoder_entries(const ItoModel& model);
// Writes only the image/text encoders and their projection heads.
void export_dual_encoder(const ItoModel& model, const std::filesystem::path& path);
ItoModel load_full_checkpoint(const std::filesystem::path& path);

// Copies values by name into an existing store. Every store entry must be present.
void load_into(ParamStore& store, std::span<const NamedTensor> entries);

// Inference-time model: image and text encoders only.
class DualEncoder {
   public:
    // Loads the "visual.", "text." and "meta." entries of any checkpoint; everything else is skipped.
    static DualEncoder load(const std::filesystem::path& path);
    static DualEncoder from_entries(std::span<const NamedTensor> entries);

    // images [N, C, H, W] -> [N, d_e] unit rows
    Tensor embed_images(const Tensor& images) const;
    // n rows of max_len ids -> [n, d_e] unit rows
    Tensor embed_texts(std::span<const std::int32_t> ids, std::size_t n) const;

    const VisionConfig& vision_config() const { return vision_.config(); }
    const TextConfig& text_config() const { return text_.config(); }
    std::vector<std::string> param_names() const;
    // FNV-1a over the sorted, newline-joined parameter names.
    std::uint64_t name_checksum() const;
    std::size_t fusion_param_count() const;
    std::size_t scalar_count() const { return store_.scalar_count(); }

   private:
    DualEncoder() = default;
    ParamStore store_;
    VisionEncoder vision_;
    TextEncoder text_;
};

std::uint64_t fnv1a64(std::string_view data);

}  // namespace ito
