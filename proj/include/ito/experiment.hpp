#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ito/eval.hpp"
#include "ito/trainer.hpp"

namespace ito {

struct RunOutcome {
    TrainConfig config;
    EvalReport report;            // final checkpoint, through the exported dual encoder
    std::vector<EpochEval> evals;  // per-epoch zero-shot accuracy
    std::size_t fusion_forward_calls = 0;
    double peak_zero_shot() const;
    double final_zero_shot() const;
};

// Trains, exports the dual encoder and evaluates it on generate_dataset(eval_seed, eval_size).
// With a non-empty out_dir also writes config.txt and report.json next to the training artifacts.
RunOutcome run_experiment(const TrainConfig& cfg, const std::filesystem::path& out_dir);

enum class SweepParam { Lambda, Blocks };
SweepParam parse_sweep_param(const std::string& name);
std::string sweep_param_name(SweepParam p);
// "0,2,4" or an inclusive integer range "1..5".
std::vector<double> parse_sweep_values(const std::string& text);
TrainConfig with_sweep_value(TrainConfig cfg, SweepParam p, double value);
std::string sweep_run_name(SweepParam p, double value);

struct SweepRow {
    double value = 0.0;
    std::filesystem::path run_dir;
    RunOutcome outcome;
};

// One run directory per value under out_dir, then summary.json and summary.tsv.
// Runs execute on up to `parallel` threads; each run is independent and seeded by its config.
std::vector<SweepRow> run_sweep(const TrainConfig& base, SweepParam p, const std::vector<double>& values,
                                const std::filesystem::path& out_dir, std::size_t parallel = 1);
// Effective worker count: min(requested, ITO_THREADS when set), at least 1.
std::size_t worker_count(std::size_t requested);

}  // namespace ito
