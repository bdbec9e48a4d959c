#pragma once

#include <json.hpp>

#include "xmag/bench/speed.hpp"
#include "xmag/distill/trainer.hpp"
#include "xmag/eval/probe.hpp"
#include "xmag/mil/trainer.hpp"
#include "xmag/synthetic.hpp"

// Run configuration: one JSON file with a global section plus one optional
// section per subcommand. Parsing is strict — any key outside the schema is
// rejected with its full path, so typos never pass silently.

namespace xmag::cli {

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config section " + path + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown config key " + path + "." + it.key());
    }
}

template <typename T>
void read_field(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config field " + path + "." + key + ": " + e.what());
    }
}

inline nn::EncoderConfig read_encoder(const nlohmann::json& j, const std::string& path, nn::EncoderConfig base) {
    check_keys(j, path, {"input_side", "patch_size", "embed_dim", "depth", "n_heads"});
    read_field(j, path, "input_side", base.input_side);
    read_field(j, path, "patch_size", base.patch_size);
    read_field(j, path, "embed_dim", base.embed_dim);
    read_field(j, path, "depth", base.depth);
    read_field(j, path, "n_heads", base.n_heads);
    return base;
}

}  // namespace detail

struct GeneratorSection {
    GeneratorConfig gen;
    int n_slides = 4;
};

struct DistillSection {
    distill::DistillConfig cfg;
    nn::EncoderConfig student = nn::toy_student_config();
    nn::EncoderConfig teacher = nn::toy_teacher_config();
};

struct MilSection {
    mil::MilRunConfig cfg;
};

struct E2eSection {
    mil::MilRunConfig cfg;       // mode forced to "e2e"
    std::vector<int> grid;       // non-empty → ablation: one fold-0 row per k
};

struct ProbeSection {
    eval::ProbeConfig cfg;
};

struct StatsSection {
    std::string predictions_a;  // required
    std::string predictions_b;  // required
    int n_boot = 1000;
};

struct BenchSection {
    std::string fixture_file;  // empty → built-in fixture rows
    bool time_encoder = false;
    int n_patches = 64;
    int batch_size = 8;
    int warmup_batches = 1;
    nn::EncoderConfig encoder = nn::toy_student_config();
};

struct RunConfig {
    uint64_t seed = 0;
    std::string run_dir;
    std::string log_level = "info";
    GeneratorSection generator;
    DistillSection distill;
    MilSection mil;
    E2eSection e2e;
    ProbeSection probe;
    StatsSection stats;
    BenchSection bench;
};

inline mil::MilRunConfig parse_mil_common(const nlohmann::json& j, const std::string& path, bool allow_mode) {
    using detail::read_field;
    mil::MilRunConfig c;
    if (allow_mode) read_field(j, path, "mode", c.mode);
    read_field(j, path, "n_trainable_blocks", c.n_trainable_blocks);
    read_field(j, path, "epochs", c.epochs);
    read_field(j, path, "lr", c.lr);
    read_field(j, path, "folds", c.folds);
    read_field(j, path, "d_attn", c.d_attn);
    read_field(j, path, "gated", c.gated);
    read_field(j, path, "weight_decay", c.weight_decay);
    read_field(j, path, "class_weighting", c.class_weighting);
    read_field(j, path, "bag_cap", c.bag_cap);
    read_field(j, path, "max_activation_floats", c.max_activation_floats);
    return c;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read_field;
    RunConfig rc;
    check_keys(j, "$", {"seed", "run_dir", "log_level", "generator", "distill", "mil", "e2e", "probe", "stats",
                        "bench"});
    read_field(j, "$", "seed", rc.seed);
    read_field(j, "$", "run_dir", rc.run_dir);
    read_field(j, "$", "log_level", rc.log_level);

    if (j.contains("generator")) {
        const auto& g = j["generator"];
        check_keys(g, "$.generator", {"height", "width", "n_classes", "dominance", "noise", "cell_px", "n_slides"});
        read_field(g, "$.generator", "height", rc.generator.gen.height);
        read_field(g, "$.generator", "width", rc.generator.gen.width);
        read_field(g, "$.generator", "n_classes", rc.generator.gen.n_classes);
        read_field(g, "$.generator", "dominance", rc.generator.gen.dominance);
        read_field(g, "$.generator", "noise", rc.generator.gen.noise);
        read_field(g, "$.generator", "cell_px", rc.generator.gen.cell_px);
        read_field(g, "$.generator", "n_slides", rc.generator.n_slides);
        if (rc.generator.n_slides <= 0) throw ConfigError("$.generator.n_slides must be positive");
    }

    if (j.contains("distill")) {
        const auto& d = j["distill"];
        check_keys(d, "$.distill",
                   {"lambda_global", "lambda_local", "peak_lr", "total_steps", "ema_decay", "batch_size",
                    "weight_decay", "warmup_steps", "augment", "student", "teacher"});
        auto& c = rc.distill.cfg;
        read_field(d, "$.distill", "lambda_global", c.lambda_global);
        read_field(d, "$.distill", "lambda_local", c.lambda_local);
        read_field(d, "$.distill", "peak_lr", c.peak_lr);
        read_field(d, "$.distill", "total_steps", c.total_steps);
        read_field(d, "$.distill", "ema_decay", c.ema_decay);
        read_field(d, "$.distill", "batch_size", c.batch_size);
        read_field(d, "$.distill", "weight_decay", c.weight_decay);
        read_field(d, "$.distill", "warmup_steps", c.warmup_steps);
        read_field(d, "$.distill", "augment", c.augment);
        if (d.contains("student")) rc.distill.student = detail::read_encoder(d["student"], "$.distill.student", rc.distill.student);
        if (d.contains("teacher")) rc.distill.teacher = detail::read_encoder(d["teacher"], "$.distill.teacher", rc.distill.teacher);
        rc.distill.student.role = "student";
        rc.distill.teacher.role = "teacher";
    }

    if (j.contains("mil")) {
        const auto& m = j["mil"];
        check_keys(m, "$.mil",
                   {"mode", "n_trainable_blocks", "epochs", "lr", "folds", "d_attn", "gated", "weight_decay",
                    "class_weighting", "bag_cap", "max_activation_floats"});
        rc.mil.cfg = parse_mil_common(m, "$.mil", /*allow_mode=*/true);
    }

    if (j.contains("e2e")) {
        const auto& m = j["e2e"];
        check_keys(m, "$.e2e",
                   {"n_trainable_blocks", "epochs", "lr", "folds", "d_attn", "gated", "weight_decay",
                    "class_weighting", "bag_cap", "max_activation_floats", "grid"});
        rc.e2e.cfg = parse_mil_common(m, "$.e2e", /*allow_mode=*/false);
        read_field(m, "$.e2e", "grid", rc.e2e.grid);
    }
    rc.e2e.cfg.mode = "e2e";

    if (j.contains("probe")) {
        const auto& p = j["probe"];
        check_keys(p, "$.probe", {"max_epochs", "tol", "holdout_frac", "l2", "n_boot"});
        read_field(p, "$.probe", "max_epochs", rc.probe.cfg.max_epochs);
        read_field(p, "$.probe", "tol", rc.probe.cfg.tol);
        read_field(p, "$.probe", "holdout_frac", rc.probe.cfg.holdout_frac);
        read_field(p, "$.probe", "l2", rc.probe.cfg.l2);
        read_field(p, "$.probe", "n_boot", rc.probe.cfg.n_boot);
    }

    if (j.contains("stats")) {
        const auto& s = j["stats"];
        check_keys(s, "$.stats", {"predictions_a", "predictions_b", "n_boot"});
        read_field(s, "$.stats", "predictions_a", rc.stats.predictions_a);
        read_field(s, "$.stats", "predictions_b", rc.stats.predictions_b);
        read_field(s, "$.stats", "n_boot", rc.stats.n_boot);
        if (rc.stats.n_boot <= 0) throw ConfigError("$.stats.n_boot must be positive");
    }

    if (j.contains("bench")) {
        const auto& b = j["bench"];
        check_keys(b, "$.bench", {"fixture_file", "time_encoder", "n_patches", "batch_size", "warmup_batches",
                                  "encoder"});
        read_field(b, "$.bench", "fixture_file", rc.bench.fixture_file);
        read_field(b, "$.bench", "time_encoder", rc.bench.time_encoder);
        read_field(b, "$.bench", "n_patches", rc.bench.n_patches);
        read_field(b, "$.bench", "batch_size", rc.bench.batch_size);
        read_field(b, "$.bench", "warmup_batches", rc.bench.warmup_batches);
        if (b.contains("encoder")) rc.bench.encoder = detail::read_encoder(b["encoder"], "$.bench.encoder", rc.bench.encoder);
    }

    if (rc.log_level != "debug" && rc.log_level != "info" && rc.log_level != "warn" && rc.log_level != "error")
        throw ConfigError("$.log_level must be one of debug|info|warn|error");
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

// Full effective configuration, defaults included: the reproducibility audit
// trail written to <run_dir>/resolved_config. No wall-time fields.
inline nlohmann::json resolved_config_json(const RunConfig& rc, const std::string& command) {
    nlohmann::json j;
    j["command"] = command;
    j["seed"] = rc.seed;
    j["run_dir"] = rc.run_dir;
    j["log_level"] = rc.log_level;
    j["generator"] = {{"height", rc.generator.gen.height},     {"width", rc.generator.gen.width},
                      {"n_classes", rc.generator.gen.n_classes}, {"dominance", rc.generator.gen.dominance},
                      {"noise", rc.generator.gen.noise},       {"cell_px", rc.generator.gen.cell_px},
                      {"n_slides", rc.generator.n_slides}};
    j["distill"] = {{"lambda_global", rc.distill.cfg.lambda_global},
                    {"lambda_local", rc.distill.cfg.lambda_local},
                    {"peak_lr", rc.distill.cfg.peak_lr},
                    {"total_steps", rc.distill.cfg.total_steps},
                    {"ema_decay", rc.distill.cfg.ema_decay},
                    {"batch_size", rc.distill.cfg.batch_size},
                    {"weight_decay", rc.distill.cfg.weight_decay},
                    {"warmup_steps", rc.distill.cfg.warmup_steps},
                    {"augment", rc.distill.cfg.augment},
                    {"student", rc.distill.student.to_json()},
                    {"teacher", rc.distill.teacher.to_json()}};
    auto mil_json = [](const mil::MilRunConfig& c) {
        return nlohmann::json{{"mode", c.mode},
                              {"n_trainable_blocks", c.n_trainable_blocks},
                              {"epochs", c.epochs},
                              {"lr", c.lr},
                              {"folds", c.folds},
                              {"d_attn", c.d_attn},
                              {"gated", c.gated},
                              {"weight_decay", c.weight_decay},
                              {"class_weighting", c.class_weighting},
                              {"bag_cap", c.bag_cap},
                              {"max_activation_floats", c.max_activation_floats}};
    };
    j["mil"] = mil_json(rc.mil.cfg);
    j["e2e"] = mil_json(rc.e2e.cfg);
    j["e2e"]["grid"] = rc.e2e.grid;
    j["e2e"].erase("mode");
    j["probe"] = {{"max_epochs", rc.probe.cfg.max_epochs},
                  {"tol", rc.probe.cfg.tol},
                  {"holdout_frac", rc.probe.cfg.holdout_frac},
                  {"l2", rc.probe.cfg.l2},
                  {"n_boot", rc.probe.cfg.n_boot}};
    j["stats"] = {{"predictions_a", rc.stats.predictions_a},
                  {"predictions_b", rc.stats.predictions_b},
                  {"n_boot", rc.stats.n_boot}};
    j["bench"] = {{"fixture_file", rc.bench.fixture_file}, {"time_encoder", rc.bench.time_encoder},
                  {"n_patches", rc.bench.n_patches},       {"batch_size", rc.bench.batch_size},
                  {"warmup_batches", rc.bench.warmup_batches}, {"encoder", rc.bench.encoder.to_json()}};
    return j;
}

}  // namespace xmag::cli
