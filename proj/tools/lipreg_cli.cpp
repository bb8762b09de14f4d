// Experiment command-line runner: synth | prepare | train | eval | perturb |
// sweep | analyze-lipschitz. All randomness flows from the three named seeds
// in the config (data.seed, train.init_seed, train.seed); every artifact
// embeds the full effective config.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lipreg/config.hpp"
#include "lipreg/data.hpp"
#include "lipreg/lipschitz.hpp"
#include "lipreg/metrics.hpp"
#include "lipreg/model.hpp"
#include "lipreg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "lipreg 1.0.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitUndefinedMetric = 4;

struct CommandContext {
    lipreg::AppConfig config;
    fs::path out_dir;

    fs::path resolve(const std::string& path) const {
        fs::path p(path);
        return p.is_absolute() ? p : out_dir / p;
    }
    fs::path ratings_path() const { return resolve(config.data_path); }
    fs::path cache_path() const { return resolve(config.data_cache); }
    fs::path checkpoint_path() const { return out_dir / "checkpoint.lprm"; }
};

json base_artifact(const CommandContext& ctx) {
    json j;
    j["version"] = kVersion;
    j["config"] = lipreg::effective_config_text(ctx.config);
    return j;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw lipreg::IoError("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw lipreg::IoError("cannot write " + path.string());
    f << text;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

// Table-convention view of a metrics report: AUC in percent (two decimals),
// logloss x100.
json metrics_json(const lipreg::MetricsReport& r) {
    json j;
    j["auc_pct"] = round2(r.auc * 100.0);
    j["logloss_x100"] = round2(r.logloss * 100.0);
    j["auc"] = r.auc;
    j["logloss"] = r.logloss;
    j["ndcg@10"] = r.ndcg10;
    j["ndcg@20"] = r.ndcg20;
    j["recall@10"] = r.recall10;
    j["recall@20"] = r.recall20;
    j["ranked_users"] = r.ranked_users;
    j["excluded_users"] = r.excluded_users;
    j["ranking_protocol"] = "full candidate set (all items minus train positives)";
    return j;
}

int cmd_synth(const CommandContext& ctx) {
    const auto records = lipreg::synthesize(ctx.config.synth);
    std::ostringstream os;
    for (const auto& r : records) {
        os << r.user_id << ctx.config.data_separator << r.item_id << ctx.config.data_separator
           << r.rating;
        if (ctx.config.data_has_timestamp) os << ctx.config.data_separator << r.timestamp;
        os << "\n";
    }
    write_text(ctx.ratings_path(), os.str());
    json j = base_artifact(ctx);
    j["records"] = records.size();
    j["path"] = ctx.ratings_path().string();
    write_json(ctx.out_dir / "synth.json", j);
    std::cout << "wrote " << records.size() << " records to " << ctx.ratings_path() << "\n";
    return kExitOk;
}

int cmd_prepare(const CommandContext& ctx) {
    const auto schema = lipreg::schema_from_config(ctx.config);
    const auto loaded = lipreg::load_ratings(ctx.ratings_path().string(), schema);
    if (loaded.skipped > 0) {
        std::cerr << "warning: skipped " << loaded.skipped << " malformed lines\n";
    }
    const auto fs_ = lipreg::build_feature_space(loaded.records, ctx.config.data_k,
                                                 ctx.config.data_t_sh, ctx.config.model.d,
                                                 ctx.config.model.d_context);
    const auto ds = lipreg::split_dataset(loaded.records, fs_, ctx.config.data_ratios[0],
                                          ctx.config.data_ratios[1], ctx.config.data_ratios[2],
                                          ctx.config.data_seed);
    lipreg::write_cache(ctx.cache_path().string(), fs_, ds);
    json j = base_artifact(ctx);
    j["records"] = loaded.records.size();
    j["skipped"] = loaded.skipped;
    j["users"] = fs_.user_vocab.size();
    j["items"] = fs_.item_vocab.size();
    j["train"] = ds.train.size();
    j["valid"] = ds.valid.size();
    j["test"] = ds.test.size();
    j["cache"] = ctx.cache_path().string();
    write_json(ctx.out_dir / "prepare.json", j);
    std::cout << "cache written to " << ctx.cache_path() << "\n";
    return kExitOk;
}

int cmd_train(const CommandContext& ctx) {
    auto [fs_, ds] = lipreg::read_cache(ctx.cache_path().string());
    auto [params, log] =
        lipreg::run_training(ds, fs_, ctx.config.model, ctx.config.loss, ctx.config.train);
    lipreg::write_checkpoint(ctx.checkpoint_path().string(), ctx.config.model, params);
    write_text(ctx.out_dir / "runlog.jsonl", lipreg::run_log_jsonl(log));
    std::ostringstream timings;
    timings << "category,seconds\n";
    timings << "training_epoch," << log.mean_epoch_seconds << "\n";
    timings << "full_training," << log.total_train_seconds << "\n";
    write_text(ctx.out_dir / "timings.csv", timings.str());
    json j = base_artifact(ctx);
    j["epochs_run"] = log.epochs.size();
    j["best_epoch"] = log.best_epoch;
    j["user_weight_norm"] = log.user_weight_norm;
    j["item_weight_norm"] = log.item_weight_norm;
    j["checkpoint"] = ctx.checkpoint_path().string();
    write_json(ctx.out_dir / "train.json", j);
    std::cout << "trained " << log.epochs.size() << " epochs; checkpoint at "
              << ctx.checkpoint_path() << "\n";
    return kExitOk;
}

int cmd_eval(const CommandContext& ctx) {
    auto [fs_, ds] = lipreg::read_cache(ctx.cache_path().string());
    const auto params =
        lipreg::read_checkpoint(ctx.checkpoint_path().string(), ctx.config.model, fs_);
    const auto t0 = std::chrono::steady_clock::now();
    const auto report = lipreg::evaluate_model(params, ctx.config.model, fs_, ds.test, ds.train);
    const double eval_seconds = std::chrono::duration<double>(
        std::chrono::steady_clock::now() - t0).count();
    json j = base_artifact(ctx);
    j["metrics"] = metrics_json(report);
    write_json(ctx.out_dir / "metrics.json", j);
    // Third Table-4 timing category, appended next to the training rows.
    std::ofstream timings(ctx.out_dir / "timings.csv", std::ios::app);
    timings << "evaluation," << eval_seconds << "\n";
    std::cout << "AUC " << std::fixed << std::setprecision(2) << report.auc * 100.0
              << ", logloss(x100) " << report.logloss * 100.0 << "\n";
    return kExitOk;
}

int cmd_perturb(const CommandContext& ctx) {
    auto [fs_, ds] = lipreg::read_cache(ctx.cache_path().string());
    const auto params =
        lipreg::read_checkpoint(ctx.checkpoint_path().string(), ctx.config.model, fs_);
    const auto rows = lipreg::perturbation_experiment(params, ctx.config.model, fs_, ds.test,
                                                      ctx.config.perturb_sigmas,
                                                      ctx.config.perturb_n_seeds,
                                                      ctx.config.perturb_seed);
    std::ostringstream csv;
    csv.precision(17);
    csv << "sigma,mean_auc,mean_logloss\n";
    json jrows = json::array();
    for (const auto& r : rows) {
        csv << r.sigma << "," << r.mean_auc << "," << r.mean_logloss << "\n";
        jrows.push_back({{"sigma", r.sigma},
                         {"mean_auc", r.mean_auc},
                         {"mean_logloss", r.mean_logloss}});
    }
    write_text(ctx.out_dir / "perturb.csv", csv.str());
    json j = base_artifact(ctx);
    j["rows"] = jrows;
    write_json(ctx.out_dir / "perturb.json", j);
    std::cout << "perturbation table: " << rows.size() << " sigma rows\n";
    return kExitOk;
}

int cmd_sweep(const CommandContext& ctx) {
    auto [fs_, ds] = lipreg::read_cache(ctx.cache_path().string());
    const auto rows = lipreg::lambda_sweep(ds, fs_, ctx.config.model, ctx.config.loss,
                                           ctx.config.train, ctx.config.sweep_lambdas,
                                           ctx.config.sweep_n_seeds);
    std::ostringstream csv;
    csv.precision(17);
    csv << "lambda_r,mean_auc\n";
    json jrows = json::array();
    for (const auto& r : rows) {
        csv << r.lambda_r << "," << r.mean_auc << "\n";
        jrows.push_back({{"lambda_r", r.lambda_r},
                         {"mean_auc", r.mean_auc},
                         {"per_seed_auc", r.per_seed_auc}});
    }
    write_text(ctx.out_dir / "sweep.csv", csv.str());
    json j = base_artifact(ctx);
    j["rows"] = jrows;
    write_json(ctx.out_dir / "sweep.json", j);
    std::cout << "lambda sweep: " << rows.size() << " rows\n";
    return kExitOk;
}

int cmd_analyze_lipschitz(const CommandContext& ctx) {
    std::ostringstream lines;
    for (std::size_t n : ctx.config.lipschitz_grid) {
        lipreg::ModelConfig cfg = ctx.config.model;
        cfg.head = lipreg::Head::Rating;
        cfg.rating_classes = static_cast<int>(n);
        cfg.tau = ctx.config.lipschitz_tau;
        cfg.d_context = 0;
        // Minimal id-only feature space: the probe feeds the trunk directly.
        lipreg::FeatureSpace probe_fs;
        probe_fs.d = cfg.d;
        probe_fs.d_context = 0;
        probe_fs.user_vocab.intern("u");
        probe_fs.item_vocab.intern("i");
        probe_fs.rating_classes = static_cast<int>(std::max<std::size_t>(n, 2));
        probe_fs.t_sh = 1;
        const auto params = lipreg::init_params(cfg, probe_fs, ctx.config.lipschitz_seed);
        const std::size_t input_dim = probe_fs.input_dim();
        auto forward = [&](const std::vector<double>& x, std::vector<double>& f,
                           std::vector<double>& p) {
            const auto trunk = lipreg::trunk_forward(params, cfg, x);
            lipreg::rating_head(trunk, params.head_w, cfg.tau, f, p);
        };
        auto sampler = [input_dim](lipreg::Rng& rng) {
            std::vector<double> x(input_dim);
            for (double& v : x) v = rng.normal();
            return x;
        };
        const auto emp = lipreg::empirical_output_sensitivity(
            forward, sampler, ctx.config.lipschitz_n_pairs, ctx.config.lipschitz_seed + n);
        const auto report = lipreg::make_sensitivity_report(n, cfg.tau, emp,
                                                            ctx.config.lipschitz_seed + n);
        lines << lipreg::sensitivity_report_json(report) << "\n";
    }
    write_text(ctx.out_dir / "lipschitz.jsonl", lines.str());
    json j = base_artifact(ctx);
    j["rows"] = ctx.config.lipschitz_grid.size();
    write_json(ctx.out_dir / "lipschitz.json", j);
    std::cout << "sensitivity reports for " << ctx.config.lipschitz_grid.size()
              << " bandwidths\n";
    return kExitOk;
}

int error_exit(int code, const std::string& what) {
    json j;
    j["error"] = what;
    j["exit_code"] = code;
    std::cerr << j.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scaled-supervision CTR training and Lipschitz analysis"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "generate a synthetic ratings file"},
        {"prepare", "parse, split, and cache a ratings dataset"},
        {"train", "train a model from a prepared cache"},
        {"eval", "evaluate a checkpoint on the test split"},
        {"perturb", "Gaussian embedding-perturbation robustness table"},
        {"sweep", "lambda_r sweep over five seeds"},
        {"analyze-lipschitz", "softmax sensitivity reports over an N grid"},
    };
    for (const auto& [name, desc] : commands) {
        auto* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "config file (section.key = value)")
            ->required();
        sub->add_option("--out", out_dir, "output directory (default: out)");
        sub->add_option("--set", overrides, "config override key=value (repeatable)");
    }

    CLI11_PARSE(app, argc, argv);

    CommandContext ctx;
    try {
        ctx.config = lipreg::load_config(config_path, overrides);
        ctx.out_dir = out_dir;
        std::filesystem::create_directories(ctx.out_dir);
    } catch (const lipreg::ConfigError& e) {
        return error_exit(kExitConfig, e.what());
    } catch (const std::exception& e) {
        return error_exit(kExitConfig, e.what());
    }

    try {
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "synth") return cmd_synth(ctx);
        if (cmd == "prepare") return cmd_prepare(ctx);
        if (cmd == "train") return cmd_train(ctx);
        if (cmd == "eval") return cmd_eval(ctx);
        if (cmd == "perturb") return cmd_perturb(ctx);
        if (cmd == "sweep") return cmd_sweep(ctx);
        if (cmd == "analyze-lipschitz") return cmd_analyze_lipschitz(ctx);
        return error_exit(kExitConfig, "unknown command: " + cmd);
    } catch (const lipreg::UndefinedMetricError& e) {
        return error_exit(kExitUndefinedMetric, e.what());
    } catch (const lipreg::ConfigError& e) {
        return error_exit(kExitConfig, e.what());
    } catch (const std::exception& e) {
        return error_exit(kExitRuntime, e.what());
    }
}
