#pragma once

#include <vector>

#include "isdiff/baselines.hpp"
#include "isdiff/core.hpp"
#include "isdiff/gmm.hpp"
#include "isdiff/oracle.hpp"
#include "isdiff/schedule.hpp"

namespace isdiff {

/// Knobs of the gated retry loop. Fractions are relative to the schedule
/// length T so one config works across schedules.
struct RefinementConfig {
    double eps_threshold = 2.5;
    double tc_fraction = 0.6;
    int n_max = 3;
    double dt_fraction = 0.1;
    int t_hat_initial = 0;  // 0 selects T
    int hist_bins = 32;
    double hist_delta = 1e-6;
    bool freeze_seed = false;  // reuse the first seed sample on every attempt

    void validate(const NoiseSchedule& s) const;
    int checkpoint(const NoiseSchedule& s) const;
    int strength_step(const NoiseSchedule& s) const;
    int start_timestep(const NoiseSchedule& s) const;
};

struct DceResult {
    double value = 0.0;
    std::vector<double> per_channel;
};

/// Cross-entropy of the unknown-region histogram against the known-region
/// histogram, natural log, averaged over channels.
DceResult dce_detail(const PixelGrid& x0t, const Mask& m, int bins, double delta);
double dce(const PixelGrid& x0t, const Mask& m, int bins, double delta);

/// Mixture fitted to the known pixels of y.
GmmModel fit_seed_model(const PixelGrid& y, const Mask& m, const EmConfig& em);
/// y on the known region, one clamped mixture draw per unknown pixel.
PixelGrid sample_seed(const PixelGrid& y, const Mask& m, const GmmModel& g, Rng& rng);
PixelGrid primary_seed(const PixelGrid& y, const Mask& m, const EmConfig& em, Rng& rng);

/// Maps a clean seed to timestep t_hat with a fresh forward-marginal draw.
PixelGrid renoise(const PixelGrid& x_ini, int t_hat, const NoiseSchedule& s, Rng& rng);

struct AttemptRecord {
    int index = 0;
    int t_hat = 0;
    DceResult dce;
    InpaintChain checkpoint;  // chain state at the checkpoint timestep
    double wall_ms = 0.0;
};

enum class GateOutcome {
    passed,    // some attempt met the threshold and was continued
    fallback,  // budget exhausted; the argmin-DCE attempt was continued
    trivial,   // nothing to fill: mask has no unknown pixels
};

const char* to_string(GateOutcome outcome);

struct IsDiffReport {
    PixelGrid image;
    std::vector<AttemptRecord> attempts;
    int chosen = -1;
    GateOutcome outcome = GateOutcome::passed;
    double wall_ms = 0.0;
};

IsDiffReport isdiff_inpaint(const PixelGrid& y, const Mask& m, const StrategyConfig& strategy,
                            const Denoiser& oracle, const NoiseSchedule& s, const RefinementConfig& cfg,
                            const EmConfig& em, Rng& rng);

/// Seed plus one full chain from T without the gate.
PixelGrid seed_only_inpaint(const PixelGrid& y, const Mask& m, const StrategyConfig& strategy,
                            const Denoiser& oracle, const NoiseSchedule& s, const EmConfig& em, Rng& rng);

}  // namespace isdiff
