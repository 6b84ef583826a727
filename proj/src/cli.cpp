#include "isdiff/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "isdiff/bench.hpp"
#include "isdiff/config.hpp"
#include "isdiff/image_io.hpp"

namespace fs = std::filesystem;

namespace isdiff {

namespace {

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::io: return exit_io;
    case ErrorCode::config:
    case ErrorCode::parameter: return exit_config;
    case ErrorCode::degenerate_mask: return exit_degenerate_mask;
    default: return exit_failure;
    }
}

struct Options {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    std::string suite;
    int runs = 0;
    std::string image;
    std::string mask;
    std::string task;
};

RunConfig load_run_config(const Options& opt, RunConfig base) {
    if (opt.config_path.empty()) {
        base.validate();
        return base;
    }
    return load_config(opt.config_path, std::move(base));
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream os(path);
    if (!os) {
        throw Error(ErrorCode::io, "cannot write " + path.string());
    }
    return os;
}

// Oracle built for one observed image.
std::unique_ptr<Denoiser> image_oracle(const RunConfig& cfg, const NoiseSchedule& s, const PixelGrid& y, const Mask& m) {
    if (cfg.oracle_kind == "gray") {
        return std::make_unique<ConstantFillOracle>(s, cfg.oracle_gray);
    }
    if (cfg.oracle_kind == "mlp") {
        return std::make_unique<MlpDenoiser>(load_mlp(cfg.oracle_weights, y.shape()));
    }
    const DiagonalMixture mix = DiagonalMixture::from_gmm(fit_seed_model(y, m, cfg.em));
    return std::make_unique<AnalyticGmmOracle>(mix, s, MixtureLayout::per_pixel);
}

// Oracle for a synthetic task.
std::unique_ptr<Denoiser> task_oracle(const RunConfig& cfg, const ToyTask& task, const NoiseSchedule& s) {
    if (cfg.oracle_kind == "gray") {
        return std::make_unique<ConstantFillOracle>(s, cfg.oracle_gray);
    }
    if (cfg.oracle_kind == "mlp") {
        return std::make_unique<MlpDenoiser>(load_mlp(cfg.oracle_weights, task.shape));
    }
    if (!task.has_exact_oracle()) {
        throw Error(ErrorCode::config, "task " + task.name + " has no exact oracle; set oracle.kind=mlp");
    }
    return exact_oracle(task, s);
}

void write_report(const fs::path& path, const RunConfig& cfg, const IsDiffReport& report, std::uint64_t seed) {
    auto os = open_output(path);
    os << "seed=" << seed << '\n';
    os << "strategy=" << to_string(cfg.strategy) << '\n';
    os << "outcome=" << to_string(report.outcome) << '\n';
    os << "chosen_attempt=" << report.chosen << '\n';
    os << "attempts=" << report.attempts.size() << '\n';
    for (const auto& a : report.attempts) {
        os << "attempt " << a.index << " t_hat=" << a.t_hat << " dce=" << a.dce.value << " wall_ms=" << a.wall_ms
           << '\n';
    }
    os << "wall_ms=" << report.wall_ms << '\n';
}

int cmd_inpaint(const Options& opt, std::ostream& out) {
    const RunConfig cfg = load_run_config(opt, RunConfig{});
    if (opt.out.empty()) {
        throw Error(ErrorCode::config, "inpaint needs --out");
    }
    const PixelGrid image = read_image(opt.image);
    const Mask mask = read_mask(opt.mask);
    if (mask.height() != image.height() || mask.width() != image.width()) {
        throw Error(ErrorCode::io, "mask " + opt.mask + " does not match the size of " + opt.image);
    }
    if (mask.count_known() == 0) {
        throw Error(ErrorCode::degenerate_mask, "mask " + opt.mask + " has no known pixels");
    }
    const PixelGrid y = compose(image, PixelGrid(image.shape(), 0.0), mask);
    const NoiseSchedule s = cfg.schedule();
    Rng rng(opt.seed);
    IsDiffReport report;
    if (mask.count_unknown() == 0) {
        report = isdiff_inpaint(y, mask, cfg.strategy_config(), ConstantFillOracle(s, 0.0), s, cfg.refinement, cfg.em,
                                rng);
    } else {
        const auto oracle = image_oracle(cfg, s, y, mask);
        report = isdiff_inpaint(y, mask, cfg.strategy_config(), *oracle, s, cfg.refinement, cfg.em, rng);
    }
    write_image(opt.out, report.image);
    write_report(opt.out + ".report.txt", cfg, report, opt.seed);
    out << "wrote " << opt.out << " (" << to_string(report.outcome) << ", " << report.attempts.size()
        << " attempts)\n";
    return exit_ok;
}

void write_rows(const fs::path& path, const std::vector<RunRow>& rows, int dce_columns) {
    auto os = open_output(path);
    write_csv(os, rows, dce_columns);
}

void write_summary_file(const fs::path& path, const std::vector<SummaryRow>& summary, std::ostream& out) {
    auto os = open_output(path);
    write_summary(os, summary);
    write_summary(out, summary);
}

// Re-reads the written CSV and checks the summary against it.
void self_audit(const fs::path& csv, const std::vector<SummaryRow>& summary, std::ostream& out) {
    std::ifstream is(csv);
    const bool ok = audit_summary(read_csv(is), summary);
    out << "self-audit " << (ok ? "passed" : "FAILED") << '\n';
    if (!ok) {
        throw Error(ErrorCode::numerical, "summary does not match the CSV rows");
    }
}

int max_attempts(const std::vector<RunRow>& rows) {
    int n = 0;
    for (const auto& r : rows) {
        n = std::max(n, static_cast<int>(r.dce.size()));
    }
    return n;
}

int cmd_bench(const Options& opt, std::ostream& out, std::ostream& err) {
    static const std::vector<std::string> suites = {"init-analysis", "strategy-compare", "dt-sweep", "diversity",
                                                    "budget-sweep"};
    if (std::find(suites.begin(), suites.end(), opt.suite) == suites.end()) {
        throw Error(ErrorCode::config, "unknown suite '" + opt.suite +
                                           "' (init-analysis, strategy-compare, dt-sweep, diversity, budget-sweep)");
    }
    RunConfig cfg = load_run_config(opt, bench_profile());
    if (opt.runs > 0) {
        cfg.bench_runs = opt.runs;
        cfg.bench_pairs = opt.runs;
    }
    const fs::path dir = opt.out.empty() ? fs::path(".") : fs::path(opt.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error(ErrorCode::io, "cannot create output directory " + dir.string());
    }
    const ToyTask task = task_by_name(cfg.bench_task);
    BenchSettings settings = cfg.bench_settings();
    const NoiseSchedule& s = settings.schedule;
    const int runs = cfg.bench_runs;
    err << "suite " << opt.suite << " on " << task.name << ", " << runs << " runs, " << settings.threads
        << " threads\n";

    if (opt.suite == "init-analysis") {
        const auto rows = analyze_init(task, settings, runs, opt.seed);
        write_rows(dir / "init_analysis.csv", rows, 0);
        {
            auto os = open_output(dir / "init_kl.csv");
            os << "seed,init,kl,kl_std_error\n";
            for (const auto& r : rows) {
                os << r.seed << ',' << r.init << ',' << r.kl << ',' << r.kl_std_error << '\n';
            }
        }
        const auto summary = summarize(rows, true);
        write_summary_file(dir / "init_analysis_summary.csv", summary, out);
        self_audit(dir / "init_analysis.csv", summary, out);
        return exit_ok;
    }

    const auto oracle = task_oracle(cfg, task, s);
    auto calibrated = [&](const Denoiser& reference) {
        const Calibration cal = calibrate_threshold(task, settings, reference, runs,
                                                    cfg.bench_calibration_percentile, mix_seed(opt.seed, 0xCA1));
        out << "calibrated threshold " << cal.threshold << " at percentile " << cal.percentile << '\n';
        return cal.threshold;
    };

    if (opt.suite == "strategy-compare") {
        settings.refinement.eps_threshold = calibrated(*oracle);
        const auto rows = compare_strategies(task, settings, default_arms(settings), *oracle, runs, opt.seed);
        write_rows(dir / "strategy_compare.csv", rows, max_attempts(rows));
        const auto summary = summarize(rows);
        write_summary_file(dir / "strategy_compare_summary.csv", summary, out);
        self_audit(dir / "strategy_compare.csv", summary, out);
        return exit_ok;
    }
    if (opt.suite == "dt-sweep") {
        settings.refinement.eps_threshold = calibrated(*oracle);
        std::vector<StrategyArm> arms;
        for (double dt : {0.05, 0.075, 0.1, 0.125, 0.15}) {
            StrategyArm arm = default_arms(settings).back();
            arm.refinement.dt_fraction = dt;
            std::ostringstream label;
            label << "dt=" << dt;
            arm.label = label.str();
            arms.push_back(arm);
        }
        const auto rows = compare_strategies(task, settings, arms, *oracle, runs, opt.seed);
        write_rows(dir / "dt_sweep.csv", rows, max_attempts(rows));
        const auto summary = summarize(rows);
        write_summary_file(dir / "dt_sweep_summary.csv", summary, out);
        self_audit(dir / "dt_sweep.csv", summary, out);
        return exit_ok;
    }
    if (opt.suite == "diversity") {
        settings.refinement.eps_threshold = calibrated(*oracle);
        const auto arms = default_arms(settings);
        const StrategyArm& full = arms.back();
        const StrategyArm& baseline = arms[2];
        const int pairs = cfg.bench_pairs;
        const DiversityResult a = diversity_probe(task, full, *oracle, settings, pairs, opt.seed);
        const DiversityResult b = diversity_probe(task, baseline, *oracle, settings, pairs, opt.seed);
        auto os = open_output(dir / "diversity.csv");
        os << "pair," << full.label << ',' << baseline.label << '\n';
        for (int i = 0; i < pairs; ++i) {
            os << i << ',' << a.distances[i] << ',' << b.distances[i] << '\n';
        }
        out << full.label << " mean distance " << a.mean_distance << '\n';
        out << baseline.label << " mean distance " << b.mean_distance << '\n';
        out << "ratio " << (b.mean_distance > 0 ? a.mean_distance / b.mean_distance : 0.0) << '\n';
        return exit_ok;
    }

    // budget-sweep: adversarial constant oracle, repeated timing
    const ConstantFillOracle stub(s, cfg.oracle_gray);
    settings.refinement.eps_threshold = calibrated(*oracle);
    settings.timing_repeats = 3;
    const auto rows = budget_sweep(task, settings, stub, {3, 4, 5}, runs, opt.seed);
    write_rows(dir / "budget_sweep.csv", rows, max_attempts(rows));
    const auto summary = summarize(rows);
    write_summary_file(dir / "budget_sweep_summary.csv", summary, out);
    self_audit(dir / "budget_sweep.csv", summary, out);
    return exit_ok;
}

int cmd_calibrate(const Options& opt, std::ostream& out) {
    RunConfig cfg = load_run_config(opt, bench_profile());
    if (!opt.task.empty()) {
        cfg.bench_task = opt.task;
    }
    const int runs = opt.runs > 0 ? opt.runs : cfg.bench_runs;
    if (runs < 20) {
        throw Error(ErrorCode::config, "calibration needs at least 20 runs");
    }
    const ToyTask task = task_by_name(cfg.bench_task);
    const BenchSettings settings = cfg.bench_settings();
    const auto oracle = task_oracle(cfg, task, settings.schedule);
    const Calibration cal =
        calibrate_threshold(task, settings, *oracle, runs, cfg.bench_calibration_percentile, opt.seed);
    out << "threshold=" << cal.threshold << '\n' << "percentile=" << cal.percentile << '\n';
    return exit_ok;
}

int cmd_fit_gmm(const Options& opt, std::ostream& out) {
    const RunConfig cfg = load_run_config(opt, RunConfig{});
    const PixelGrid image = read_image(opt.image);
    const Mask mask = read_mask(opt.mask);
    if (mask.height() != image.height() || mask.width() != image.width()) {
        throw Error(ErrorCode::io, "mask " + opt.mask + " does not match the size of " + opt.image);
    }
    const GmmModel g = fit_seed_model(image, mask, cfg.em);
    if (opt.out.empty()) {
        write_gmm(out, g);
    } else {
        auto os = open_output(opt.out);
        write_gmm(os, g);
    }
    return exit_ok;
}

int cmd_sample(const Options& opt, std::ostream& out) {
    const RunConfig cfg = load_run_config(opt, bench_profile());
    if (opt.out.empty()) {
        throw Error(ErrorCode::config, "sample needs --out");
    }
    const ToyTask task = task_by_name(cfg.bench_task);
    const NoiseSchedule s = cfg.schedule();
    const auto oracle = task_oracle(cfg, task, s);
    const Mask none(task.shape.height, task.shape.width, 0);
    const PixelGrid blank(task.shape, 0.0);
    Rng rng(opt.seed);
    const PixelGrid x_T = gaussian_noise(task.shape, rng);
    const PixelGrid x0 = run_strategy(blank, none, *oracle, s, cfg.strategy_config(), x_T, s.steps(), rng);
    write_image(opt.out, x0);
    out << "wrote " << opt.out << '\n';
    return exit_ok;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Diffusion inpainting with seeded initialization and gated refinement"};
    app.require_subcommand(1);
    Options opt;
    auto common = [&opt](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "key=value config file");
        sub->add_option("--seed", opt.seed, "random seed");
        sub->add_option("--out", opt.out, "output path");
    };
    auto* inpaint = app.add_subcommand("inpaint", "fill the unknown region of an image");
    common(inpaint);
    inpaint->add_option("image", opt.image, "input PGM/PPM")->required();
    inpaint->add_option("mask", opt.mask, "mask PGM, 255 = known")->required();

    auto* bench = app.add_subcommand("bench", "run a benchmark suite");
    common(bench);
    bench->add_option("--suite", opt.suite, "init-analysis, strategy-compare, dt-sweep, diversity, budget-sweep")
        ->required();
    bench->add_option("--runs", opt.runs, "number of paired runs");

    auto* calibrate = app.add_subcommand("calibrate", "calibrate the DCE threshold on a task");
    common(calibrate);
    calibrate->add_option("--task", opt.task, "bimodal16, color32, bars16 or constant16");
    calibrate->add_option("--runs", opt.runs, "number of baseline runs (>= 20)");

    auto* fit = app.add_subcommand("fit-gmm", "dump the mixture fitted to the known pixels");
    common(fit);
    fit->add_option("image", opt.image, "input PGM/PPM")->required();
    fit->add_option("mask", opt.mask, "mask PGM, 255 = known")->required();

    auto* sample = app.add_subcommand("sample", "unconditional sample of the configured task");
    common(sample);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n';
        return exit_config;
    }

    try {
        if (inpaint->parsed()) {
            return cmd_inpaint(opt, out);
        }
        if (bench->parsed()) {
            return cmd_bench(opt, out, err);
        }
        if (calibrate->parsed()) {
            return cmd_calibrate(opt, out);
        }
        if (fit->parsed()) {
            return cmd_fit_gmm(opt, out);
        }
        return cmd_sample(opt, out);
    } catch (const Error& e) {
        err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

}  // namespace isdiff
