#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "isdiff/baselines.hpp"
#include "isdiff/bench.hpp"
#include "isdiff/gmm.hpp"
#include "isdiff/isdiff.hpp"
#include "isdiff/schedule.hpp"

namespace isdiff {

// Every tunable knob, addressed by flat namespaced keys such as schedule.T
// or isdiff.eps_threshold.
struct RunConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    SamplerConfig sampler;
    EmConfig em;
    RefinementConfig refinement;
    StrategyKind strategy = StrategyKind::ddnm;
    RepaintConfig repaint;

    std::string oracle_kind = "fit";  // fit | mlp | gray
    std::string oracle_weights;
    double oracle_gray = 0.0;

    std::string bench_task = "bimodal16";
    int bench_runs = 100;
    int bench_pairs = 50;
    MaskKind bench_mask = MaskKind::half;
    int bench_error_bins = 64;
    int bench_kl_samples = 4000;
    double bench_calibration_percentile = 70.0;

    NoiseSchedule schedule() const;
    StrategyConfig strategy_config() const;
    BenchSettings bench_settings() const;
    // Throws ErrorCode::config with the offending key named.
    void validate() const;

    bool operator==(const RunConfig& other) const;
};

// Defaults for the bench subcommands: a short schedule whose final signal
// level stays well above zero.
RunConfig bench_profile();

std::vector<std::string> config_keys();
std::string config_value(const RunConfig& cfg, const std::string& key);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// key=value lines, '#' starts a comment. Keys not present keep the values of `base`.
RunConfig parse_config(std::istream& is, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
std::string dump_config(const RunConfig& cfg);

}  // namespace isdiff
