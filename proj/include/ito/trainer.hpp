#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ito/data.hpp"
#include "ito/losses.hpp"
#include "ito/model.hpp"

namespace ito {

struct TrainConfig {
    // Optimizer and schedule.
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.1;
    std::size_t warmup_steps = 200;
    std::size_t epochs = 30;
    std::size_t batch = 64;
    // 0 runs every step of every epoch.
    std::size_t max_steps = 0;
    double grad_clip = 1.0;  // 0 disables
    bool clamp_tau = true;
    double tau_min = 0.005;
    double tau_max = 1.0;

    // Objective.
    double lambda = 2.0;
    std::size_t image_views = 2;
    std::size_t text_views = 1;
    Reduction reduction = Reduction::Mean;
    bool shared_tau = false;
    double init_tau = 0.07;

    // Model.
    std::size_t width = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t embed_dim = 64;
    std::size_t fusion_blocks = 2;
    std::size_t fusion_width = 64;
    std::size_t fusion_heads = 4;

    // Seeds and data.
    std::uint64_t seed = 0;       // weight init and augmentation streams
    std::uint64_t data_seed = 1;  // training scenes
    std::size_t train_size = 4096;
    std::uint64_t eval_seed = 2;
    std::size_t eval_size = 1024;
    std::size_t eval_every = 1;  // epochs; 0 disables the per-epoch hook

    // Wall-clock step timing in metrics.jsonl. Off by default so metrics are reproducible byte for byte.
    bool record_timing = false;

    void validate() const;
    std::size_t steps_per_epoch() const { return batches_per_epoch(train_size, batch); }
    std::size_t total_steps() const;
    ModelConfig model_config() const;
};

// Sets one field from its textual key/value; ConfigError for unknown keys or bad values.
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
// key=value lines, '#' comments, blank lines ignored.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
std::string format_config(const TrainConfig& cfg);
std::vector<std::string> config_keys();

// Linear warmup to cfg.lr over warmup_steps, then cosine decay to 0 at total_steps.
double lr_at(std::size_t step, double base_lr, std::size_t warmup, std::size_t total);

struct AdamState {
    std::vector<Tensor> m, v;
    std::size_t step = 0;
};

// One decoupled-weight-decay Adam update. decay[k] selects which params receive weight decay.
// Throws NumericError naming the step when a gradient is non-finite.
void adamw_step(std::vector<Var>& params, const std::vector<bool>& decay, AdamState& state, double lr,
                const TrainConfig& cfg);

// Matrices decay; biases, gains, vectors and temperatures do not.
std::vector<bool> weight_decay_mask(const ParamStore& store);

double global_grad_norm(const std::vector<Var>& params);
// Scales gradients so the global norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::vector<Var>& params, double max_norm);

struct MetricsRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_align = 0.0;
    double loss_fusion = 0.0;
    double tau_align = 0.0;
    double tau_fusion = 0.0;
    double step_wall_ms = 0.0;
    double grad_norm = 0.0;
};

std::string to_json_line(const MetricsRecord& r);
MetricsRecord parse_metrics_line(const std::string& line);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

struct EpochEval {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double zero_shot_acc = 0.0;
};

struct TrainResult {
    std::vector<MetricsRecord> metrics;
    std::vector<EpochEval> evals;
    std::size_t fusion_forward_calls = 0;
    std::filesystem::path final_checkpoint;
    std::filesystem::path dual_checkpoint;
};

struct StepOutput {
    LossReport loss;
    double grad_norm = 0.0;
};

// Owns model, optimizer state and data streams for one run.
class Trainer {
   public:
    explicit Trainer(const TrainConfig& cfg);

    // Forward, backward, clip, AdamW and temperature clamp for global step `step` (1-based).
    StepOutput train_step(const ViewBatch& batch, std::size_t step);
    // Full loss (no update) on a batch.
    LossReport evaluate_loss(const ViewBatch& batch) const;

    ViewBatch batch_for(std::size_t epoch, std::size_t k) const;

    // Runs every step; writes metrics.jsonl, eval.jsonl, ckpt_final.ito and ckpt_dual.ito under out_dir
    // when out_dir is non-empty.
    TrainResult run(const std::filesystem::path& out_dir, const Dataset* eval_data = nullptr);

    ItoModel& model() { return model_; }
    const ItoModel& model() const { return model_; }
    const TrainConfig& config() const { return cfg_; }
    const Dataset& train_data() const { return train_; }

   private:
    TrainConfig cfg_;
    ItoModel model_;
    Dataset train_;
    std::vector<Var> params_;
    std::vector<bool> decay_;
    AdamState adam_;
    std::uint64_t stream_seed_;
};

struct OverheadReport {
    double clip_ms = 0.0;
    double ito_ms = 0.0;
    double sub2_ms = 0.0;
    std::size_t steps = 0;
    double ito_ratio() const { return ito_ms / clip_ms; }
    double sub2_ratio() const { return sub2_ms / clip_ms; }
};

inline constexpr double kPaperOverheadRatio = 1.4;

// Median wall time of full training steps (forward, backward, update) for the CLIP baseline
// (1x1 views, lambda 0), ITO (2x1, lambda 2) and ITO_sub2 (2x2, lambda 2) on the same model size.
OverheadReport overhead_benchmark(const TrainConfig& base, std::size_t steps);

}  // namespace ito
