#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "ito/checkpoint.hpp"
#include "ito/data.hpp"
#include "ito/errors.hpp"
#include "ito/eval.hpp"
#include "ito/experiment.hpp"
#include "ito/trainer.hpp"
#include "ito/verify.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitContract = 1;
constexpr int kExitNumeric = 2;

void require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw ito::IoError("no such file: " + p.string());
}

// A dataset argument is a manifest file or a directory holding manifest.txt.
fs::path manifest_path(const fs::path& p) {
    const fs::path m = fs::is_directory(p) ? p / "manifest.txt" : p;
    require_file(m);
    return m;
}

ito::TrainConfig build_config(const std::string& config_path, const std::vector<std::string>& sets) {
    ito::TrainConfig cfg;
    if (!config_path.empty()) {
        require_file(config_path);
        cfg = ito::load_config(config_path);
    }
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ito::ConfigError("--set expects key=value, got '" + kv + "'");
        ito::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void print_report_line(const std::string& label, const ito::RunOutcome& o) {
    std::printf("%s zero_shot=%.4f peak=%.4f centroid_gap=%.4f modality_probe=%.4f knn_mix=%.4f\n", label.c_str(),
                o.report.zero_shot_acc, o.peak_zero_shot(), o.report.geometry.centroid_gap,
                o.report.geometry.modality_probe_acc, o.report.geometry.knn_mix);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ito: image-text training laboratory"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset manifest and raw dump");
    std::uint64_t gen_seed = 0;
    std::size_t gen_n = 0;
    std::string gen_out;
    bool gen_no_raw = false;
    gen->add_option("--seed", gen_seed, "Dataset seed")->required();
    gen->add_option("--n", gen_n, "Number of samples")->required()->check(CLI::PositiveNumber);
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_flag("--no-raw", gen_no_raw, "Skip the binary sample dump");

    std::string config_path, out_dir;
    std::vector<std::string> sets;
    const auto add_config_opts = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--set", sets, "Override one config key (key=value), repeatable");
    };

    auto* train = app.add_subcommand("train", "Train one model");
    add_config_opts(train);
    train->add_option("--out-dir", out_dir, "Run directory")->required();

    auto* sweep = app.add_subcommand("sweep", "Train one run per parameter value");
    add_config_opts(sweep);
    std::string sweep_param, sweep_values;
    std::size_t parallel = 1;
    sweep->add_option("--param", sweep_param, "lambda or blocks")->required();
    sweep->add_option("--values", sweep_values, "Comma list or integer range a..b")->required();
    sweep->add_option("--out-dir", out_dir, "Sweep directory")->required();
    sweep->add_option("--parallel", parallel, "Concurrent runs (capped by ITO_THREADS)")->check(CLI::PositiveNumber);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint through its dual encoder");
    std::string ckpt, dataset;
    std::uint64_t eval_seed = 0;
    eval->add_option("--ckpt", ckpt, "Checkpoint (full or dual)")->required();
    eval->add_option("--dataset", dataset, "Dataset manifest or directory")->required();
    eval->add_option("--out-dir", out_dir, "Directory for report.json")->required();
    eval->add_option("--seed", eval_seed, "Split seed for the probes");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op, loss and the full objective");
    bool grad_verbose = false;
    grad->add_flag("--verbose", grad_verbose, "Print every case");

    auto* bench = app.add_subcommand("bench", "Median step time of CLIP, ITO and ITO_sub2");
    add_config_opts(bench);
    std::size_t bench_steps = 100;
    bench->add_option("--steps", bench_steps, "Timed steps per arm")->check(CLI::PositiveNumber);

    auto* exp = app.add_subcommand("export-embeddings", "Write Y, Z and labels of a dataset");
    std::string exp_out;
    exp->add_option("--ckpt", ckpt, "Checkpoint (full or dual)")->required();
    exp->add_option("--dataset", dataset, "Dataset manifest or directory")->required();
    exp->add_option("--out-dir", out_dir, "Directory for embeddings.ito")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return kExitContract;
    }

    try {
        if (*gen) {
            const fs::path dir(gen_out);
            fs::create_directories(dir);
            const ito::Dataset data = ito::generate_dataset(gen_seed, gen_n);
            ito::write_manifest(data, dir / "manifest.txt");
            if (!gen_no_raw) ito::write_raw_dump(data, dir / "samples.bin");
            std::printf("wrote %zu samples to %s\n", data.size(), dir.string().c_str());
        } else if (*train) {
            const ito::TrainConfig cfg = build_config(config_path, sets);
            const ito::RunOutcome o = ito::run_experiment(cfg, out_dir);
            print_report_line("final", o);
        } else if (*sweep) {
            const ito::TrainConfig cfg = build_config(config_path, sets);
            const ito::SweepParam p = ito::parse_sweep_param(sweep_param);
            const auto rows = ito::run_sweep(cfg, p, ito::parse_sweep_values(sweep_values), out_dir, parallel);
            for (const auto& row : rows) print_report_line(row.run_dir.filename().string(), row.outcome);
            std::printf("summary: %s\n", (fs::path(out_dir) / "summary.tsv").string().c_str());
        } else if (*eval) {
            require_file(ckpt);
            const ito::DualEncoder enc = ito::DualEncoder::load(ckpt);
            const ito::Dataset data = ito::load_dataset(manifest_path(dataset));
            const ito::EvalReport r = ito::evaluate(enc, data, eval_seed);
            fs::create_directories(out_dir);
            ito::write_report(r, fs::path(out_dir) / "report.json");
            std::printf("%s\n", ito::to_json(r).c_str());
        } else if (*grad) {
            const ito::GradCheckSuiteReport r = ito::run_gradcheck_suite();
            double op_max = 0.0, loss_max = 0.0, obj_max = 0.0;
            for (const auto& e : r.entries) {
                double& slot = e.name.rfind("op/", 0) == 0 ? op_max : e.name.rfind("loss/", 0) == 0 ? loss_max : obj_max;
                slot = std::max(slot, e.report.max_rel_error);
                if (grad_verbose) std::printf("%-40s %.3e\n", e.name.c_str(), e.report.max_rel_error);
            }
            std::printf("ops        max_rel_error %.3e\n", op_max);
            std::printf("losses     max_rel_error %.3e\n", loss_max);
            std::printf("objective  max_rel_error %.3e\n", obj_max);
            std::printf("overall    max_rel_error %.3e (%zu cases, %.2f s)\n", r.max_rel_error, r.entries.size(), r.seconds);
            if (!r.passed()) {
                std::fprintf(stderr, "gradcheck: max relative error %.3e exceeds 1e-5\n", r.max_rel_error);
                return kExitNumeric;
            }
        } else if (*bench) {
            const ito::TrainConfig cfg = build_config(config_path, sets);
            const ito::OverheadReport r = ito::overhead_benchmark(cfg, bench_steps);
            std::printf("median step ms: clip %.2f  ito %.2f  ito_sub2 %.2f  (%zu steps)\n", r.clip_ms, r.ito_ms,
                        r.sub2_ms, r.steps);
            std::printf("ratio ito/clip %.3f  ito_sub2/clip %.3f  (reference %.1f)\n", r.ito_ratio(), r.sub2_ratio(),
                        ito::kPaperOverheadRatio);
        } else if (*exp) {
            require_file(ckpt);
            const ito::DualEncoder enc = ito::DualEncoder::load(ckpt);
            const ito::Dataset data = ito::load_dataset(manifest_path(dataset));
            fs::create_directories(out_dir);
            ito::export_embeddings(enc, data, fs::path(out_dir) / "embeddings.ito");
            std::printf("wrote %s\n", (fs::path(out_dir) / "embeddings.ito").string().c_str());
        }
    } catch (const ito::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitContract;
    }
    return kExitOk;
}
