// tanglefl command line: run / sweep / verify / report.
// Exit codes: 0 success, 2 invalid configuration, 3 integrity violation.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tanglefl/experiment.hpp"
#include "tanglefl/simd/kernels.hpp"

namespace tfx = tanglefl::experiment;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_file;
    std::uint64_t rounds = 0;
    std::uint64_t repeats = 0;
    std::uint64_t clients = 0;
    double milestone_interval = 0.0;
    double alpha = -1.0;
    double threshold = -1.0;
    std::uint64_t seed = 0;
    std::vector<std::string> adversaries;
    std::string out;
    std::string format;
    std::string exp_id;
    std::string backend;
    std::string span;
    std::uint64_t jobs = 0;
    bool no_reputation = false;

    CLI::Option* opt_rounds = nullptr;
    CLI::Option* opt_repeats = nullptr;
    CLI::Option* opt_clients = nullptr;
    CLI::Option* opt_interval = nullptr;
    CLI::Option* opt_alpha = nullptr;
    CLI::Option* opt_threshold = nullptr;
    CLI::Option* opt_seed = nullptr;
    CLI::Option* opt_adversary = nullptr;
    CLI::Option* opt_out = nullptr;
    CLI::Option* opt_format = nullptr;
    CLI::Option* opt_exp_id = nullptr;
    CLI::Option* opt_backend = nullptr;
    CLI::Option* opt_span = nullptr;
    CLI::Option* opt_jobs = nullptr;
    CLI::Option* opt_no_reputation = nullptr;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_file, "JSON config file");
    f.opt_rounds = cmd->add_option("--rounds", f.rounds, "FL rounds per repeat");
    f.opt_repeats = cmd->add_option("--repeats", f.repeats, "independent repeats");
    f.opt_clients = cmd->add_option("--clients", f.clients, "simulated IoT clients");
    f.opt_interval = cmd->add_option("--milestone-interval", f.milestone_interval,
                                     "milestone interval in sim seconds");
    f.opt_alpha = cmd->add_option("--alpha", f.alpha, "reputation smoothing factor");
    f.opt_threshold = cmd->add_option("--threshold", f.threshold,
                                      "reliability threshold");
    f.opt_seed = cmd->add_option("--seed", f.seed, "master seed");
    f.opt_adversary = cmd->add_option("--adversary", f.adversaries,
                                      "adversary spec kind:count (repeatable)");
    f.opt_out = cmd->add_option("--out", f.out, "output directory");
    f.opt_format = cmd->add_option("--format", f.format, "structured | csv");
    f.opt_exp_id = cmd->add_option("--exp-id", f.exp_id, "experiment id");
    f.opt_backend = cmd->add_option("--backend", f.backend,
                                    "kernel backend: auto | scalar | avx2");
    f.opt_span = cmd->add_option("--span", f.span, "TPS span mode: activity | wall");
    f.opt_jobs = cmd->add_option("--jobs", f.jobs, "parallel repeat workers");
    f.opt_no_reputation = cmd->add_flag("--no-reputation", f.no_reputation,
                                        "disable reputation weighting");
}

tfx::ExperimentConfig build_config(const CommonFlags& f) {
    json file_values;
    if (!f.config_file.empty()) {
        file_values = json::parse(tfx::read_text_file(f.config_file));
    }
    json overrides = json::object();
    if (f.opt_rounds->count()) overrides["rounds"] = f.rounds;
    if (f.opt_repeats->count()) overrides["repeats"] = f.repeats;
    if (f.opt_clients->count()) overrides["n_clients"] = f.clients;
    if (f.opt_interval->count()) overrides["milestone_interval_s"] = f.milestone_interval;
    if (f.opt_alpha->count()) overrides["alpha"] = f.alpha;
    if (f.opt_threshold->count()) overrides["threshold"] = f.threshold;
    if (f.opt_seed->count()) overrides["seed"] = f.seed;
    if (f.opt_adversary->count()) overrides["adversaries"] = f.adversaries;
    if (f.opt_out->count()) overrides["out_dir"] = f.out;
    if (f.opt_format->count()) overrides["format"] = f.format;
    if (f.opt_exp_id->count()) overrides["exp_id"] = f.exp_id;
    if (f.opt_backend->count()) overrides["kernel_backend"] = f.backend;
    if (f.opt_span->count()) overrides["span_mode"] = f.span;
    if (f.opt_jobs->count()) overrides["jobs"] = f.jobs;
    if (f.opt_no_reputation->count()) overrides["reputation_enabled"] = false;
    return tfx::config_from_json(file_values, overrides);
}

void print_report_line(const tfx::ExperimentOutput& out) {
    std::printf("tps_mean=%.4f tps_std=%.4f variability_pct=%.2f "
                "delay_p50=%.3fs delay_max=%.3fs backend=%s\n",
                out.report.tps_mean, out.report.tps_std, out.report.variability_pct,
                out.report.quantiles.p50, out.report.quantiles.max,
                tanglefl::simd::active_name().c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tanglefl: DAG-ledger coordinated federated learning simulator"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    CLI::App* run_cmd = app.add_subcommand("run", "run one experiment configuration");
    add_common_flags(run_cmd, run_flags);

    CommonFlags sweep_flags;
    std::vector<std::uint64_t> sweep_points{10, 30, 50};
    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "run the 10/30/50-round protocol sweep");
    add_common_flags(sweep_cmd, sweep_flags);
    sweep_cmd->add_option("--points", sweep_points, "round counts to sweep");

    std::string verify_dir;
    CLI::App* verify_cmd =
        app.add_subcommand("verify", "audit persisted experiment artifacts");
    verify_cmd->add_option("dir", verify_dir, "experiment directory")->required();

    std::string report_dir, report_out;
    CLI::App* report_cmd =
        app.add_subcommand("report", "recompute metrics from event logs");
    report_cmd->add_option("dir", report_dir, "experiment directory")->required();
    report_cmd->add_option("--out", report_out, "write recomputed report here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            const auto cfg = build_config(run_flags);
            const auto out = tfx::run_experiment(cfg);
            print_report_line(out);
            if (cfg.out_dir.empty()) std::cout << out.summary.dump(2) << "\n";
            return 0;
        }
        if (sweep_cmd->parsed()) {
            const auto cfg = build_config(sweep_flags);
            const auto sweep = tfx::run_sweep(cfg, sweep_points);
            for (const auto& point : sweep["points"]) {
                std::printf("rounds=%3llu tps_mean=%.4f tps_std=%.4f variability_pct=%.2f\n",
                            static_cast<unsigned long long>(point["rounds"].get<std::uint64_t>()),
                            point["tps_mean"].get<double>(), point["tps_std"].get<double>(),
                            point["variability_pct"].get<double>());
            }
            std::printf("variability strictly decreasing: %s\n",
                        sweep["variability_strictly_decreasing"].get<bool>() ? "yes" : "no");
            return 0;
        }
        if (verify_cmd->parsed()) {
            const auto violations = tfx::audit_experiment(verify_dir);
            if (violations.empty()) {
                std::printf("verify: OK, zero violations\n");
                return 0;
            }
            for (const auto& v : violations) {
                std::fprintf(stderr, "violation %s at %s: %s\n", v.kind.c_str(),
                             v.where.c_str(), v.detail.c_str());
            }
            std::fprintf(stderr, "verify: %zu violation(s)\n", violations.size());
            return 3;
        }
        if (report_cmd->parsed()) {
            const auto recomputed = tfx::recompute_report(report_dir);
            if (report_out.empty()) {
                std::cout << recomputed.dump(2) << "\n";
            } else {
                tfx::write_text_file(report_out, recomputed.dump(2) + "\n");
            }
            return 0;
        }
    } catch (const tfx::InvalidConfig& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
