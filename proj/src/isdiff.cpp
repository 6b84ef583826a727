#include "isdiff/isdiff.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>

namespace isdiff {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

int round_fraction(double fraction, int T) {
    return static_cast<int>(std::lround(fraction * T));
}

}  // namespace

void RefinementConfig::validate(const NoiseSchedule& s) const {
    const int T = s.steps();
    if (n_max < 1) {
        throw Error(ErrorCode::parameter, "attempt budget n must be at least 1");
    }
    if (!(tc_fraction > 0.0 && tc_fraction < 1.0)) {
        throw Error(ErrorCode::parameter, "checkpoint fraction must lie in (0, 1)");
    }
    if (!(dt_fraction >= 0.0) || !(dt_fraction * (n_max - 1) < 1.0)) {
        throw Error(ErrorCode::parameter, "strength step must satisfy dt * (n - 1) < 1");
    }
    if (t_hat_initial < 0 || t_hat_initial > T) {
        throw Error(ErrorCode::parameter, "initial start timestep outside [0, T]");
    }
    if (start_timestep(s) - (n_max - 1) * strength_step(s) < 1) {
        throw Error(ErrorCode::parameter, "start timestep would fall below 1 within the attempt budget");
    }
    if (checkpoint(s) < 1) {
        throw Error(ErrorCode::parameter, "checkpoint timestep rounds to 0");
    }
    if (hist_bins < 2 || !(hist_delta >= 0.0)) {
        throw Error(ErrorCode::parameter, "invalid histogram settings");
    }
    if (!std::isfinite(eps_threshold)) {
        throw Error(ErrorCode::parameter, "DCE threshold must be finite");
    }
}

int RefinementConfig::checkpoint(const NoiseSchedule& s) const {
    return round_fraction(tc_fraction, s.steps());
}

int RefinementConfig::strength_step(const NoiseSchedule& s) const {
    return round_fraction(dt_fraction, s.steps());
}

int RefinementConfig::start_timestep(const NoiseSchedule& s) const {
    return t_hat_initial == 0 ? s.steps() : t_hat_initial;
}

DceResult dce_detail(const PixelGrid& x0t, const Mask& m, int bins, double delta) {
    if (m.count_known() == 0 || m.count_unknown() == 0) {
        throw Error(ErrorCode::empty_region, "DCE needs both known and unknown pixels");
    }
    const Histogram generated = histogram(x0t, m, Region::unknown, bins, delta);
    const Histogram observed = histogram(x0t, m, Region::known, bins, delta);
    DceResult out;
    for (int c = 0; c < x0t.channels(); ++c) {
        double ce = 0.0;
        for (int b = 0; b < bins; ++b) {
            const double p = generated.prob(c, b);
            if (p > 0.0) {
                ce -= p * std::log(observed.prob(c, b));
            }
        }
        out.per_channel.push_back(ce);
    }
    double total = 0.0;
    for (double v : out.per_channel) {
        total += v;
    }
    out.value = total / static_cast<double>(out.per_channel.size());
    return out;
}

double dce(const PixelGrid& x0t, const Mask& m, int bins, double delta) {
    return dce_detail(x0t, m, bins, delta).value;
}

GmmModel fit_seed_model(const PixelGrid& y, const Mask& m, const EmConfig& em) {
    m.check_matches(y.shape());
    const std::size_t need = static_cast<std::size_t>(std::max(em.components, 16));
    if (m.count_known() < need) {
        throw Error(ErrorCode::degenerate_mask, "mask has " + std::to_string(m.count_known()) +
                                                    " known pixels; seed fitting needs at least " +
                                                    std::to_string(need));
    }
    return fit_em(region_points(y, m, Region::known), em);
}

PixelGrid sample_seed(const PixelGrid& y, const Mask& m, const GmmModel& g, Rng& rng) {
    m.check_matches(y.shape());
    if (g.dim() != y.channels()) {
        throw Error(ErrorCode::dimension, "seed mixture dimension does not match the image channels");
    }
    PixelGrid out = y;
    const int channels = y.channels();
    Eigen::VectorXd point(channels);
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (m.known(p)) {
            continue;
        }
        gmm_draw(g, rng, point);
        for (int c = 0; c < channels; ++c) {
            out[p * channels + c] = std::clamp(point[c], -1.0, 1.0);
        }
    }
    return out;
}

PixelGrid primary_seed(const PixelGrid& y, const Mask& m, const EmConfig& em, Rng& rng) {
    if (m.count_unknown() == 0) {
        m.check_matches(y.shape());
        return y;
    }
    return sample_seed(y, m, fit_seed_model(y, m, em), rng);
}

PixelGrid renoise(const PixelGrid& x_ini, int t_hat, const NoiseSchedule& s, Rng& rng) {
    if (t_hat < 1 || t_hat > s.steps()) {
        throw Error(ErrorCode::timestep, "re-noising timestep " + std::to_string(t_hat) + " outside [1, T]");
    }
    return q_sample(x_ini, t_hat, gaussian_noise(x_ini.shape(), rng), s);
}

const char* to_string(GateOutcome outcome) {
    switch (outcome) {
    case GateOutcome::passed: return "passed";
    case GateOutcome::fallback: return "fallback";
    case GateOutcome::trivial: return "trivial";
    }
    return "unknown";
}

IsDiffReport isdiff_inpaint(const PixelGrid& y, const Mask& m, const StrategyConfig& strategy,
                            const Denoiser& oracle, const NoiseSchedule& s, const RefinementConfig& cfg,
                            const EmConfig& em, Rng& rng) {
    const auto started = Clock::now();
    cfg.validate(s);
    m.check_matches(y.shape());
    IsDiffReport report;
    if (m.count_unknown() == 0) {
        report.image = y;
        report.outcome = GateOutcome::trivial;
        report.wall_ms = elapsed_ms(started);
        return report;
    }

    const GmmModel seed_model = fit_seed_model(y, m, em);
    const int t_c = cfg.checkpoint(s);
    const int dt = cfg.strength_step(s);
    int t_hat = cfg.start_timestep(s);
    std::optional<PixelGrid> frozen;

    for (int k = 0; k < cfg.n_max; ++k) {
        const auto attempt_started = Clock::now();
        PixelGrid x_ini = cfg.freeze_seed && frozen ? *frozen : sample_seed(y, m, seed_model, rng);
        if (cfg.freeze_seed && !frozen) {
            frozen = x_ini;
        }
        InpaintChain chain(y, m, oracle, s, strategy, renoise(x_ini, t_hat, s, rng), t_hat);
        chain.run_until(t_c, rng);
        DceResult score = dce_detail(chain.estimate_x0(), m, cfg.hist_bins, cfg.hist_delta);
        const bool pass = score.value <= cfg.eps_threshold;
        report.attempts.push_back({k, t_hat, std::move(score), chain, elapsed_ms(attempt_started)});
        if (pass) {
            chain.run_to_end(rng);
            report.image = chain.result();
            report.chosen = k;
            report.outcome = GateOutcome::passed;
            report.wall_ms = elapsed_ms(started);
            return report;
        }
        t_hat -= dt;
    }

    const auto best = std::min_element(report.attempts.begin(), report.attempts.end(),
                                       [](const AttemptRecord& a, const AttemptRecord& b) {
                                           return a.dce.value < b.dce.value;
                                       });
    InpaintChain chain = best->checkpoint;
    chain.run_to_end(rng);
    report.image = chain.result();
    report.chosen = best->index;
    report.outcome = GateOutcome::fallback;
    report.wall_ms = elapsed_ms(started);
    return report;
}

PixelGrid seed_only_inpaint(const PixelGrid& y, const Mask& m, const StrategyConfig& strategy,
                            const Denoiser& oracle, const NoiseSchedule& s, const EmConfig& em, Rng& rng) {
    m.check_matches(y.shape());
    if (m.count_unknown() == 0) {
        return y;
    }
    const GmmModel seed_model = fit_seed_model(y, m, em);
    const PixelGrid x_ini = sample_seed(y, m, seed_model, rng);
    return run_strategy(y, m, oracle, s, strategy, renoise(x_ini, s.steps(), s, rng), s.steps(), rng);
}

}  // namespace isdiff
