#include "ito/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <thread>

#include "ito/checkpoint.hpp"
#include "ito/errors.hpp"

namespace ito {

namespace {

nlohmann::ordered_json report_json(const EvalReport& r) { return nlohmann::ordered_json::parse(to_json(r)); }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << text;
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace

double RunOutcome::peak_zero_shot() const {
    double best = 0.0;
    for (const auto& e : evals) best = std::max(best, e.zero_shot_acc);
    return best;
}

double RunOutcome::final_zero_shot() const { return evals.empty() ? report.zero_shot_acc : evals.back().zero_shot_acc; }

RunOutcome run_experiment(const TrainConfig& cfg, const std::filesystem::path& out_dir) {
    const Dataset eval_data = generate_dataset(cfg.eval_seed, cfg.eval_size);
    Trainer trainer(cfg);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_text(out_dir / "config.txt", format_config(cfg));
    }
    const TrainResult tr = trainer.run(out_dir, &eval_data);
    RunOutcome out;
    out.config = cfg;
    out.evals = tr.evals;
    out.fusion_forward_calls = tr.fusion_forward_calls;
    const DualEncoder enc = out_dir.empty() ? DualEncoder::from_entries(dual_encoder_entries(trainer.model()))
                                            : DualEncoder::load(tr.dual_checkpoint);
    out.report = evaluate(enc, eval_data, cfg.eval_seed);
    if (!out_dir.empty()) write_report(out.report, out_dir / "report.json");
    return out;
}

SweepParam parse_sweep_param(const std::string& name) {
    if (name == "lambda") return SweepParam::Lambda;
    if (name == "blocks") return SweepParam::Blocks;
    throw ConfigError("unknown sweep parameter '" + name + "' (expected lambda or blocks)");
}

std::string sweep_param_name(SweepParam p) { return p == SweepParam::Lambda ? "lambda" : "blocks"; }

std::vector<double> parse_sweep_values(const std::string& text) {
    const auto number = [](std::string_view s) {
        double v = 0.0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ConfigError("bad sweep value '" + std::string(s) + "'");
        return v;
    };
    std::vector<double> out;
    if (const auto dots = text.find(".."); dots != std::string::npos) {
        const double lo = number(std::string_view(text).substr(0, dots));
        const double hi = number(std::string_view(text).substr(dots + 2));
        if (lo != std::floor(lo) || hi != std::floor(hi) || hi < lo) throw ConfigError("bad sweep range '" + text + "'");
        for (double v = lo; v <= hi; v += 1.0) out.push_back(v);
        return out;
    }
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        out.push_back(number(std::string_view(text).substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

TrainConfig with_sweep_value(TrainConfig cfg, SweepParam p, double value) {
    if (p == SweepParam::Lambda) {
        cfg.lambda = value;
    } else {
        if (value < 1.0 || value != std::floor(value)) throw ConfigError("fusion blocks must be a positive integer");
        cfg.fusion_blocks = static_cast<std::size_t>(value);
    }
    cfg.validate();
    return cfg;
}

std::string sweep_run_name(SweepParam p, double value) {
    return sweep_param_name(p) + "_" + nlohmann::json(value).dump();
}

std::size_t worker_count(std::size_t requested) {
    std::size_t n = std::max<std::size_t>(requested, 1);
    if (const char* env = std::getenv("ITO_THREADS"); env != nullptr && *env != '\0') {
        std::size_t cap = 0;
        const std::string_view s(env);
        const auto res = std::from_chars(s.data(), s.data() + s.size(), cap);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size() || cap == 0)
            throw ConfigError("ITO_THREADS must be a positive integer, got '" + std::string(s) + "'");
        n = std::min(n, cap);
    }
    return n;
}

std::vector<SweepRow> run_sweep(const TrainConfig& base, SweepParam p, const std::vector<double>& values,
                                const std::filesystem::path& out_dir, std::size_t parallel) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    std::vector<SweepRow> rows(values.size());
    std::vector<TrainConfig> configs;
    for (std::size_t i = 0; i < values.size(); ++i) {
        configs.push_back(with_sweep_value(base, p, values[i]));
        rows[i].value = values[i];
        rows[i].run_dir = out_dir / sweep_run_name(p, values[i]);
    }
    std::filesystem::create_directories(out_dir);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    const auto worker = [&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) {
            try {
                rows[i].outcome = run_experiment(configs[i], rows[i].run_dir);
            } catch (...) {
                const std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = rows.size();
            }
        }
    };
    const std::size_t n = std::min(worker_count(parallel), rows.size());
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    // Summary values are copied from each run's report.json text so the two never drift.
    nlohmann::ordered_json summary = nlohmann::ordered_json::array();
    std::string tsv = sweep_param_name(p) +
                      "\trun\tzero_shot_acc\tpeak_zero_shot\ti2t_r1\tt2i_r1\tlinear_probe_acc\tcentroid_gap\t"
                      "modality_probe_acc\tknn_mix\n";
    for (const auto& row : rows) {
        const auto rep = report_json(row.outcome.report);
        nlohmann::ordered_json j;
        j[sweep_param_name(p)] = row.value;
        j["run"] = row.run_dir.filename().string();
        j["zero_shot_acc"] = rep["zero_shot_acc"];
        j["peak_zero_shot"] = row.outcome.peak_zero_shot();
        j["i2t_r1"] = rep["retrieval"]["image_to_text"]["r1"];
        j["t2i_r1"] = rep["retrieval"]["text_to_image"]["r1"];
        j["linear_probe_acc"] = rep["linear_probe_acc"];
        j["centroid_gap"] = rep["geometry"]["centroid_gap"];
        j["modality_probe_acc"] = rep["geometry"]["modality_probe_acc"];
        j["knn_mix"] = rep["geometry"]["knn_mix"];
        bool first = true;
        for (const auto& [key, v] : j.items()) {
            tsv += (first ? "" : "\t") + (v.is_string() ? v.get<std::string>() : v.dump());
            first = false;
        }
        tsv += "\n";
        summary.push_back(std::move(j));
    }
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
    write_text(out_dir / "summary.tsv", tsv);
    return rows;
}

}  // namespace ito
