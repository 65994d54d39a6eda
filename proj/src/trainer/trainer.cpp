#include "ito/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "ito/checkpoint.hpp"
#include "ito/errors.hpp"
#include "ito/eval.hpp"

namespace ito {

namespace {

constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kStreamTag = 0xDA7A;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
    }
    return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

struct Field {
    const char* key;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field number(const char* key, T TrainConfig::*member) {
    Field f{key, {}, {}};
    if constexpr (std::is_same_v<T, double>) {
        f.set = [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_double(key, v); };
        f.get = [member](const TrainConfig& c) { return fmt_double(c.*member); };
    } else {
        f.set = [key, member](TrainConfig& c, const std::string& v) { c.*member = static_cast<T>(parse_uint(key, v)); };
        f.get = [member](const TrainConfig& c) { return std::to_string(c.*member); };
    }
    return f;
}

Field flag(const char* key, bool TrainConfig::*member) {
    return {key, [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
            [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> f{
        number("lr", &TrainConfig::lr),
        number("beta1", &TrainConfig::beta1),
        number("beta2", &TrainConfig::beta2),
        number("eps", &TrainConfig::eps),
        number("weight_decay", &TrainConfig::weight_decay),
        number("warmup_steps", &TrainConfig::warmup_steps),
        number("epochs", &TrainConfig::epochs),
        number("batch", &TrainConfig::batch),
        number("max_steps", &TrainConfig::max_steps),
        number("grad_clip", &TrainConfig::grad_clip),
        flag("clamp_tau", &TrainConfig::clamp_tau),
        number("tau_min", &TrainConfig::tau_min),
        number("tau_max", &TrainConfig::tau_max),
        number("lambda", &TrainConfig::lambda),
        number("image_views", &TrainConfig::image_views),
        number("text_views", &TrainConfig::text_views),
        {"reduction",
         [](TrainConfig& c, const std::string& v) {
             if (v == "mean") c.reduction = Reduction::Mean;
             else if (v == "sum") c.reduction = Reduction::Sum;
             else throw ConfigError("config key 'reduction': expected mean or sum, got '" + v + "'");
         },
         [](const TrainConfig& c) { return std::string(c.reduction == Reduction::Mean ? "mean" : "sum"); }},
        flag("shared_tau", &TrainConfig::shared_tau),
        number("init_tau", &TrainConfig::init_tau),
        number("width", &TrainConfig::width),
        number("layers", &TrainConfig::layers),
        number("heads", &TrainConfig::heads),
        number("embed_dim", &TrainConfig::embed_dim),
        number("fusion_blocks", &TrainConfig::fusion_blocks),
        number("fusion_width", &TrainConfig::fusion_width),
        number("fusion_heads", &TrainConfig::fusion_heads),
        number("seed", &TrainConfig::seed),
        number("data_seed", &TrainConfig::data_seed),
        number("train_size", &TrainConfig::train_size),
        number("eval_seed", &TrainConfig::eval_seed),
        number("eval_size", &TrainConfig::eval_size),
        number("eval_every", &TrainConfig::eval_every),
        flag("record_timing", &TrainConfig::record_timing),
    };
    return f;
}

bool is_fusion_param(const std::string& name) { return name.rfind(kFusionPrefix, 0) == 0; }

}  // namespace

void TrainConfig::validate() const {
    const auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
    if (!(lr > 0.0)) fail("lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be > 0");
    if (weight_decay < 0.0) fail("weight_decay must be >= 0");
    if (epochs == 0) fail("epochs must be >= 1");
    if (batch == 0 || train_size == 0 || batch > train_size) fail("batch must lie in [1, train_size]");
    if (eval_size == 0) fail("eval_size must be >= 1");
    if (grad_clip < 0.0) fail("grad_clip must be >= 0");
    if (!(tau_min > 0.0 && tau_min <= tau_max)) fail("need 0 < tau_min <= tau_max");
    if (!(init_tau > 0.0)) fail("init_tau must be > 0");
    if (lambda < 0.0) fail("lambda must be >= 0");
    if (image_views == 0 || text_views == 0) fail("view counts must be >= 1");
    if (lambda > 0.0 && image_views * text_views < 2) {
        fail("lambda > 0 needs image_views * text_views >= 2 so every fused anchor has a positive");
    }
    if (warmup_steps >= total_steps()) {
        fail("warmup_steps (" + std::to_string(warmup_steps) + ") must be < total steps (" +
             std::to_string(total_steps()) + ")");
    }
    model_config().validate();
}

std::size_t TrainConfig::total_steps() const {
    const std::size_t full = epochs * steps_per_epoch();
    return max_steps == 0 ? full : std::min(full, max_steps);
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.vision.width = width;
    m.vision.layers = layers;
    m.vision.heads = heads;
    m.vision.embed_dim = embed_dim;
    m.text.vocab_size = vocabulary().size();
    m.text.max_len = kTextLen;
    m.text.width = width;
    m.text.layers = layers;
    m.text.heads = heads;
    m.text.embed_dim = embed_dim;
    m.text.eot_id = kEotId;
    m.fusion.blocks = fusion_blocks;
    m.fusion.width = fusion_width;
    m.fusion.heads = fusion_heads;
    m.with_fusion = true;
    m.shared_tau = shared_tau;
    m.init_tau = init_tau;
    return m;
}

void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(cfg, trim(value));
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        }
        apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const TrainConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(cfg) + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.emplace_back(f.key);
    return keys;
}

double lr_at(std::size_t step, double base_lr, std::size_t warmup, std::size_t total) {
    if (step > total) {
        throw ConfigError("lr_at: step " + std::to_string(step) + " exceeds total " + std::to_string(total));
    }
    if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    if (total == warmup) return base_lr;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::vector<Var>& params, const std::vector<bool>& decay, AdamState& state, double lr,
                const TrainConfig& cfg) {
    if (decay.size() != params.size()) throw ConfigError("adamw_step: decay mask does not match parameter count");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Tensor::zeros_like(p.value()));
            state.v.push_back(Tensor::zeros_like(p.value()));
        }
    }
    if (state.m.size() != params.size()) throw ConfigError("adamw_step: optimizer state does not match parameters");
    const std::size_t t = state.step + 1;
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].grad().all_finite()) {
            throw NumericError("non-finite gradient for parameter " + std::to_string(k) + " at step " + std::to_string(t));
        }
    }
    state.step = t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor& g = params[k].grad();
        Tensor& p = params[k].mutable_value();
        double* m = state.m[k].ptr();
        double* v = state.v[k].ptr();
        const double wd = decay[k] ? lr * cfg.weight_decay : 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1, vhat = v[i] / bc2;
            p[i] -= wd * p[i] + lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

std::vector<bool> weight_decay_mask(const ParamStore& store) {
    std::vector<bool> mask;
    for (const auto& [name, var] : store.items()) mask.push_back(var.rank() >= 2);
    return mask;
}

double global_grad_norm(const std::vector<Var>& params) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.grad().data()) sq += g * g;
    return std::sqrt(sq);
}

double clip_grad_norm(std::vector<Var>& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& p : params)
            for (double& g : p.node()->ensure_grad().data()) g *= s;
    }
    return norm;
}

std::string to_json_line(const MetricsRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["loss_total"] = r.loss_total;
    j["loss_align"] = r.loss_align;
    j["loss_fusion"] = r.loss_fusion;
    j["tau_align"] = r.tau_align;
    j["tau_fusion"] = r.tau_fusion;
    j["step_wall_ms"] = r.step_wall_ms;
    j["grad_norm"] = r.grad_norm;
    return j.dump();
}

MetricsRecord parse_metrics_line(const std::string& line) {
    try {
        const auto j = nlohmann::json::parse(line);
        MetricsRecord r;
        r.step = j.at("step").get<std::size_t>();
        r.epoch = j.at("epoch").get<std::size_t>();
        r.lr = j.at("lr").get<double>();
        r.loss_total = j.at("loss_total").get<double>();
        r.loss_align = j.at("loss_align").get<double>();
        r.loss_fusion = j.at("loss_fusion").get<double>();
        r.tau_align = j.at("tau_align").get<double>();
        r.tau_fusion = j.at("tau_fusion").get<double>();
        r.step_wall_ms = j.at("step_wall_ms").get<double>();
        r.grad_norm = j.at("grad_norm").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed metrics line: ") + e.what());
    }
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open metrics: " + path.string());
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) out.push_back(parse_metrics_line(line));
    return out;
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      model_(cfg_.model_config(), derive_seed(cfg_.seed, {kInitTag})),
      train_(generate_dataset(cfg_.data_seed, cfg_.train_size)),
      stream_seed_(derive_seed(cfg_.seed, {kStreamTag})) {
    // Parameters outside the active objective get no updates and no decay.
    const auto all_decay = weight_decay_mask(model_.params());
    const auto& items = model_.params().items();
    for (std::size_t k = 0; k < items.size(); ++k) {
        const std::string& name = items[k].first;
        if (cfg_.lambda == 0.0 && is_fusion_param(name)) continue;
        if (cfg_.shared_tau && name == "fusion.log_tau") continue;
        params_.push_back(items[k].second);
        decay_.push_back(all_decay[k]);
    }
}

ViewBatch Trainer::batch_for(std::size_t epoch, std::size_t k) const {
    const auto order = epoch_order(train_.size(), stream_seed_, epoch);
    return assemble_batch(train_, order, k, cfg_.batch, cfg_.image_views, cfg_.text_views, stream_seed_, epoch);
}

LossReport Trainer::evaluate_loss(const ViewBatch& batch) const {
    const EmbeddingGrid grid = model_.encode(batch.images, batch.texts, batch.text_views);
    const AlignResult align = align_loss(grid.Y, grid.Z, model_.tau_align(), cfg_.reduction);
    std::optional<Var> fusion;
    if (cfg_.lambda > 0.0) fusion = fusion_loss(model_.fuse_grid(grid).S, model_.tau_fusion(), cfg_.reduction);
    return total_loss(align, fusion, cfg_.lambda);
}

StepOutput Trainer::train_step(const ViewBatch& batch, std::size_t step) {
    model_.params().zero_grad();
    StepOutput out;
    out.loss = evaluate_loss(batch);
    if (!std::isfinite(out.loss.total)) throw NumericError("non-finite loss");
    backward(out.loss.total_var);
    out.grad_norm = cfg_.grad_clip > 0.0 ? clip_grad_norm(params_, cfg_.grad_clip) : global_grad_norm(params_);
    const double lr = lr_at(step, cfg_.lr, cfg_.warmup_steps, cfg_.total_steps());
    adamw_step(params_, decay_, adam_, lr, cfg_);
    if (cfg_.clamp_tau) model_.clamp_temperatures(cfg_.tau_min, cfg_.tau_max);
    return out;
}

TrainResult Trainer::run(const std::filesystem::path& out_dir, const Dataset* eval_data) {
    TrainResult result;
    std::ofstream metrics_os, eval_os;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_os.open(out_dir / "metrics.jsonl", std::ios::binary);
        if (!metrics_os) throw IoError("cannot open for writing: " + (out_dir / "metrics.jsonl").string());
        if (eval_data != nullptr && cfg_.eval_every > 0) {
            eval_os.open(out_dir / "eval.jsonl", std::ios::binary);
            if (!eval_os) throw IoError("cannot open for writing: " + (out_dir / "eval.jsonl").string());
        }
    }
    const std::size_t total = cfg_.total_steps();
    const std::size_t per_epoch = cfg_.steps_per_epoch();
    const std::size_t fusion_calls_before = model_.fusion().forward_calls();
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg_.epochs && step < total; ++epoch) {
        const auto order = epoch_order(train_.size(), stream_seed_, epoch);
        for (std::size_t k = 0; k < per_epoch && step < total; ++k) {
            ++step;
            const ViewBatch batch =
                assemble_batch(train_, order, k, cfg_.batch, cfg_.image_views, cfg_.text_views, stream_seed_, epoch);
            MetricsRecord rec;
            rec.step = step;
            rec.epoch = epoch + 1;
            rec.lr = lr_at(step, cfg_.lr, cfg_.warmup_steps, total);
            rec.tau_align = model_.tau_align().item();
            rec.tau_fusion = model_.tau_fusion().item();
            const auto t0 = std::chrono::steady_clock::now();
            StepOutput out;
            try {
                out = train_step(batch, step);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) + " (epoch " +
                                   std::to_string(epoch + 1) + ", batch " + std::to_string(k) + ", stream seed " +
                                   std::to_string(stream_seed_) + ")");
            }
            const auto t1 = std::chrono::steady_clock::now();
            rec.loss_total = out.loss.total;
            rec.loss_align = out.loss.align;
            rec.loss_fusion = out.loss.fusion;
            rec.grad_norm = out.grad_norm;
            if (cfg_.record_timing) rec.step_wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            if (metrics_os.is_open()) metrics_os << to_json_line(rec) << "\n";
            result.metrics.push_back(rec);
        }
        const bool last = epoch + 1 == cfg_.epochs || step == total;
        if (eval_data != nullptr && cfg_.eval_every > 0 && ((epoch + 1) % cfg_.eval_every == 0 || last)) {
            const DualEncoder enc = DualEncoder::from_entries(dual_encoder_entries(model_));
            EpochEval ev{epoch + 1, step, zero_shot_accuracy(enc, *eval_data)};
            if (eval_os.is_open()) {
                nlohmann::ordered_json j{{"epoch", ev.epoch}, {"step", ev.step}, {"zero_shot_acc", ev.zero_shot_acc}};
                eval_os << j.dump() << "\n";
            }
            result.evals.push_back(ev);
        }
    }
    result.fusion_forward_calls = model_.fusion().forward_calls() - fusion_calls_before;
    if (!out_dir.empty()) {
        if (!metrics_os) throw IoError("write failed: " + (out_dir / "metrics.jsonl").string());
        result.final_checkpoint = out_dir / "ckpt_final.ito";
        result.dual_checkpoint = out_dir / "ckpt_dual.ito";
        save_full_checkpoint(model_, result.final_checkpoint);
        export_dual_encoder(model_, result.dual_checkpoint);
    }
    return result;
}

OverheadReport overhead_benchmark(const TrainConfig& base, std::size_t steps) {
    if (steps == 0) throw UsageError("overhead_benchmark needs at least one step");
    struct Arm {
        std::size_t vi, vt;
        double lambda;
    };
    const std::array<Arm, 3> arms{{{1, 1, 0.0}, {2, 1, 2.0}, {2, 2, 2.0}}};
    std::vector<Trainer> trainers;
    std::vector<std::vector<ViewBatch>> batches;
    constexpr std::size_t kBatchPool = 4;
    constexpr std::size_t kWarmup = 2;
    for (const Arm& a : arms) {
        TrainConfig c = base;
        c.image_views = a.vi;
        c.text_views = a.vt;
        c.lambda = a.lambda;
        c.max_steps = 0;
        c.epochs = std::max<std::size_t>(c.epochs, (steps + kWarmup) / c.steps_per_epoch() + 1);
        c.warmup_steps = std::min(c.warmup_steps, c.total_steps() - 1);
        trainers.emplace_back(c);
        std::vector<ViewBatch> pool;
        for (std::size_t k = 0; k < std::min(kBatchPool, c.steps_per_epoch()); ++k) pool.push_back(trainers.back().batch_for(0, k));
        batches.push_back(std::move(pool));
    }
    std::array<std::vector<double>, 3> times;
    for (std::size_t s = 0; s < steps + kWarmup; ++s) {
        for (std::size_t a = 0; a < arms.size(); ++a) {
            const ViewBatch& b = batches[a][s % batches[a].size()];
            const auto t0 = std::chrono::steady_clock::now();
            trainers[a].train_step(b, s + 1);
            const auto t1 = std::chrono::steady_clock::now();
            if (s >= kWarmup) times[a].push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
    }
    const auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    OverheadReport r;
    r.steps = steps;
    r.clip_ms = median(times[0]);
    r.ito_ms = median(times[1]);
    r.sub2_ms = median(times[2]);
    return r;
}

}  // namespace ito
