#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "isdiff/baselines.hpp"
#include "isdiff/core.hpp"
#include "isdiff/gmm.hpp"
#include "isdiff/isdiff.hpp"
#include "isdiff/oracle.hpp"
#include "isdiff/schedule.hpp"

namespace isdiff {

// ---------------------------------------------------------------------------
// Masks

enum class MaskKind { half, expand, wide, custom };

const char* to_string(MaskKind kind);
MaskKind parse_mask_kind(const std::string& name);

struct MaskSpec {
    MaskKind kind = MaskKind::half;
    // wide: target unknown fraction drawn uniformly from [min_fill, max_fill]
    double min_fill = 0.15;
    double max_fill = 0.50;
    int max_brush = 0;  // 0 picks max(1, W/16)
    std::optional<Mask> custom;
};

Mask make_mask(const MaskSpec& spec, int height, int width, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic tasks with known ground truth

enum class TaskKind { bimodal, color, bars, constant };

struct ToyTask {
    std::string name;
    TaskKind kind = TaskKind::bimodal;
    Shape shape;
    DiagonalMixture mixture;  // data model (unused for bars)
    MixtureLayout layout = MixtureLayout::per_pixel;
    double pixel_variance = 0.0;

    bool has_exact_oracle() const { return kind != TaskKind::bars; }

    // 16x16x1, i.i.d. pixels from 0.5 N(-0.6, 0.05^2) + 0.5 N(0.6, 0.05^2)
    static ToyTask bimodal16();
    // 32x32x3 constant-color images over 4 color modes plus small pixel noise
    static ToyTask color32();
    // 16x16x1 images with one horizontal and one vertical bar
    static ToyTask bars16();
    // one fixed gray level with negligible spread
    static ToyTask constant_image(int size, double value);
};

ToyTask task_by_name(const std::string& name);

struct TaskInstance {
    PixelGrid image;
    // Distribution of one unknown pixel given everything the task knows about
    // this image; empty when only the image itself is available.
    std::optional<DiagonalMixture> pixel_truth;
};

TaskInstance sample_instance(const ToyTask& task, Rng& rng);
std::unique_ptr<Denoiser> exact_oracle(const ToyTask& task, const NoiseSchedule& s);

// Training set generator and trainer for the bars task (no exact oracle).
PixelGrid sample_bars(const Shape& shape, Rng& rng);
MlpDenoiser train_bars_denoiser(const ToyTask& task, const NoiseSchedule& s, int steps, int batch, double lr,
                                std::uint64_t seed, std::vector<double>* losses = nullptr);

// ---------------------------------------------------------------------------
// Metrics

// Bin probabilities of a per-channel mixture marginal over `bins` uniform
// bins on [-1, 1]; tails fold into the end bins.
Histogram mixture_histogram(const DiagonalMixture& mix, int bins);

// L1 between the unknown-region histogram of `output` and the truth
// histogram, averaged over channels.
double histogram_l1(const Histogram& a, const Histogram& b);
double masked_region_error(const PixelGrid& output, const Mask& m, const TaskInstance& truth, int bins = 64);
// Same on 2x2 patch means over patches lying entirely in the unknown region.
double patch_region_error(const PixelGrid& output, const Mask& m, const TaskInstance& truth, int bins = 64);
// Mean squared difference over unknown-region values.
double masked_mean_sq_distance(const PixelGrid& a, const PixelGrid& b, const Mask& m);

// ---------------------------------------------------------------------------
// Experiment driver

struct BenchSettings {
    NoiseSchedule schedule = make_linear_schedule(100, 1e-4, 0.02);
    StrategyConfig strategy;
    RefinementConfig refinement;
    EmConfig em;
    MaskSpec mask;
    int error_bins = 64;
    std::size_t kl_samples = 4000;
    int threads = 1;
    // wall_ms of a run is the minimum over this many identical repetitions
    int timing_repeats = 1;
};

enum class InitKind { noise, gaussian, gmm, truth };
const char* to_string(InitKind kind);

struct RunRow {
    std::string task;
    std::string strategy;
    std::string init;
    std::uint64_t seed = 0;
    double error = 0.0;
    double patch_error = 0.0;
    std::vector<double> dce;
    int attempts = 0;
    double wall_ms = 0.0;
    std::string status = "ok";
    // init analysis only
    double kl = 0.0;
    double kl_std_error = 0.0;
    // isdiff only
    double selected_dce = 0.0;
};

// Per-run seed for paired runs: run i of every arm gets the same value.
std::uint64_t run_seed(std::uint64_t base, std::size_t run);

// Maps f over [0, n) on up to `threads` workers; results keep index order.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& f);
// ISDIFF_THREADS caps the hardware concurrency.
int default_threads();

std::vector<RunRow> analyze_init(const ToyTask& task, const BenchSettings& settings, int runs, std::uint64_t seed);

enum class ArmInit { noise, seed_only, isdiff };

struct StrategyArm {
    std::string label;
    StrategyConfig strategy;
    ArmInit init = ArmInit::noise;
    RefinementConfig refinement;
};

// The default comparison: replace, repaint, ddnm from noise, ddnm + seed only,
// ddnm + full gated refinement.
std::vector<StrategyArm> default_arms(const BenchSettings& settings);

// Runs one arm on one paired (instance, mask, seed) triple.
RunRow run_arm(const ToyTask& task, const StrategyArm& arm, const Denoiser& oracle, const BenchSettings& settings,
               std::uint64_t seed, PixelGrid* output = nullptr);

std::vector<RunRow> compare_strategies(const ToyTask& task, const BenchSettings& settings,
                                       const std::vector<StrategyArm>& arms, const Denoiser& oracle, int runs,
                                       std::uint64_t seed);

// IS-Diff with each budget n in `budgets` on the same paired triples. Runs are
// single-threaded and the budgets interleaved in rotating order per run.
std::vector<RunRow> budget_sweep(const ToyTask& task, const BenchSettings& settings, const Denoiser& oracle,
                                 const std::vector<int>& budgets, int runs, std::uint64_t seed);

struct SummaryRow {
    std::string strategy;
    std::size_t runs = 0;
    std::size_t failed = 0;
    double mean_error = 0.0;
    double mean_patch_error = 0.0;
    double mean_attempts = 0.0;
    double mean_wall_ms = 0.0;
    double mean_selected_dce = 0.0;
    double mean_kl = 0.0;
};

// Grouped by strategy label (and init for init-analysis rows), in first-seen order.
std::vector<SummaryRow> summarize(const std::vector<RunRow>& rows, bool by_init = false);

struct DiversityResult {
    double mean_distance = 0.0;
    std::vector<double> distances;
};

DiversityResult diversity_probe(const ToyTask& task, const StrategyArm& arm, const Denoiser& oracle,
                                const BenchSettings& settings, int pairs, std::uint64_t seed);

struct Calibration {
    double threshold = 0.0;
    double percentile = 70.0;
    std::vector<double> dce;  // checkpoint DCE of every baseline run
};

// Checkpoint DCE of noise-initialized baseline chains; threshold is the given
// percentile (linear interpolation between order statistics).
Calibration calibrate_threshold(const ToyTask& task, const BenchSettings& settings, const Denoiser& oracle, int runs,
                                double percentile, std::uint64_t seed);
double percentile_of(std::vector<double> values, double percentile);

// CSV with header task,strategy,init,seed,error,patch_error,dce_0..dce_{n-1},attempts,wall_ms,status
void write_csv(std::ostream& os, const std::vector<RunRow>& rows, int dce_columns);
struct CsvRow {
    std::string task, strategy, init;
    std::uint64_t seed = 0;
    double error = 0.0, patch_error = 0.0;
    std::vector<double> dce;
    int attempts = 0;
    double wall_ms = 0.0;
    std::string status;
};
std::vector<CsvRow> read_csv(std::istream& is);
void write_summary(std::ostream& os, const std::vector<SummaryRow>& summary);
// Recomputes per-strategy means from parsed CSV rows and compares with the summary.
bool audit_summary(const std::vector<CsvRow>& rows, const std::vector<SummaryRow>& summary, double tol = 1e-9);

}  // namespace isdiff
