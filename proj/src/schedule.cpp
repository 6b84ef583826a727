#include "isdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace isdiff {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
    if (betas.empty()) {
        throw Error(ErrorCode::parameter, "noise schedule needs at least one step");
    }
    m_beta.reserve(betas.size() + 1);
    m_alpha.reserve(betas.size() + 1);
    m_alpha_bar.reserve(betas.size() + 1);
    m_beta.push_back(0.0);
    m_alpha.push_back(1.0);
    m_alpha_bar.push_back(1.0);
    double running = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b <= 1.0)) {
            throw Error(ErrorCode::parameter, "beta values must lie in (0, 1]");
        }
        running *= 1.0 - b;
        m_beta.push_back(b);
        m_alpha.push_back(1.0 - b);
        m_alpha_bar.push_back(running);
    }
}

double NoiseSchedule::signal_weight(int t) const {
    return std::sqrt(alpha_bar(t));
}

double NoiseSchedule::noise_weight(int t) const {
    return std::sqrt(1.0 - alpha_bar(t));
}

void NoiseSchedule::check_timestep(int t) const {
    if (t < 0 || t > steps()) {
        throw Error(ErrorCode::timestep, "timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
    }
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) {
        throw Error(ErrorCode::parameter, "schedule length must be at least 1");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw Error(ErrorCode::parameter, "linear schedule needs 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
        betas[i] = beta_start + (beta_end - beta_start) * frac;
    }
    return NoiseSchedule(std::move(betas));
}

void SamplerConfig::validate(const NoiseSchedule& s) const {
    if (kind == SamplerKind::ddim && (steps < 1 || steps > s.steps())) {
        throw Error(ErrorCode::parameter, "sampler steps must lie in [1, T]");
    }
    if (eta < 0.0) {
        throw Error(ErrorCode::parameter, "eta must be nonnegative");
    }
}

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) {
        throw Error(ErrorCode::parameter, "sub-sampled step count must lie in [1, T]");
    }
    std::vector<int> grid;
    grid.reserve(static_cast<std::size_t>(steps) + 1);
    for (int i = steps; i >= 0; --i) {
        // round(i * T / steps) in integers
        grid.push_back(static_cast<int>((2LL * i * T + steps) / (2LL * steps)));
    }
    return grid;
}

std::vector<int> ddim_timesteps_from(int T, int steps, int t_start) {
    if (t_start < 1 || t_start > T) {
        throw Error(ErrorCode::timestep, "chain start timestep " + std::to_string(t_start) + " outside [1, T]");
    }
    const auto full = ddim_timesteps(T, steps);
    std::vector<int> grid{t_start};
    for (int t : full) {
        if (t < t_start) {
            grid.push_back(t);
        }
    }
    return grid;
}

namespace {

void check_same_shape(const PixelGrid& a, const PixelGrid& b) {
    if (!(a.shape() == b.shape())) {
        throw Error(ErrorCode::dimension, "grid shapes differ");
    }
}

}  // namespace

PixelGrid q_sample(const PixelGrid& x0, int t, const PixelGrid& eps, const NoiseSchedule& s) {
    s.check_timestep(t);
    check_same_shape(x0, eps);
    if (t == 0) {
        return x0;
    }
    const double a = s.signal_weight(t);
    const double b = s.noise_weight(t);
    PixelGrid out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x0[i] + b * eps[i];
    }
    return out;
}

PixelGrid predict_x0(const PixelGrid& x_t, const PixelGrid& eps_hat, int t, const NoiseSchedule& s) {
    s.check_timestep(t);
    if (t == 0) {
        throw Error(ErrorCode::timestep, "x0 prediction is undefined at the data index t=0");
    }
    check_same_shape(x_t, eps_hat);
    const double a = s.signal_weight(t);
    const double b = s.noise_weight(t);
    PixelGrid out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (x_t[i] - b * eps_hat[i]) / a;
    }
    return out;
}

PixelGrid implied_eps(const PixelGrid& x_t, const PixelGrid& x0_hat, int t, const NoiseSchedule& s) {
    s.check_timestep(t);
    if (t == 0) {
        throw Error(ErrorCode::timestep, "noise is undefined at the data index t=0");
    }
    check_same_shape(x_t, x0_hat);
    const double a = s.signal_weight(t);
    const double b = s.noise_weight(t);
    PixelGrid out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (x_t[i] - a * x0_hat[i]) / b;
    }
    return out;
}

double ddim_sigma(const NoiseSchedule& s, int t_from, int t_to, double eta) {
    if (eta == 0.0) {
        return 0.0;
    }
    const double ab_from = s.alpha_bar(t_from);
    const double ab_to = s.alpha_bar(t_to);
    const double var = (1.0 - ab_to) / (1.0 - ab_from) * (1.0 - ab_from / ab_to);
    return eta * std::sqrt(std::max(var, 0.0));
}

PixelGrid ddim_update(const PixelGrid& x0_hat, const PixelGrid& eps_hat, int t_from, int t_to,
                      double eta, const NoiseSchedule& s, Rng& rng) {
    s.check_timestep(t_from);
    s.check_timestep(t_to);
    if (!(t_to < t_from) || t_from == 0) {
        throw Error(ErrorCode::timestep, "reverse step needs t_to < t_from (got " + std::to_string(t_from) + " -> " +
                                             std::to_string(t_to) + ")");
    }
    check_same_shape(x0_hat, eps_hat);
    const double sigma = ddim_sigma(s, t_from, t_to, eta);
    const double ab_to = s.alpha_bar(t_to);
    const double a = std::sqrt(ab_to);
    const double dir = std::sqrt(std::max(1.0 - ab_to - sigma * sigma, 0.0));
    PixelGrid out(x0_hat.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x0_hat[i] + dir * eps_hat[i];
    }
    if (sigma > 0.0) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += sigma * rng.normal();
        }
    }
    return out;
}

PixelGrid reverse_step(const PixelGrid& x_t, const PixelGrid& eps_hat, int t_from, int t_to,
                       const SamplerConfig& cfg, const NoiseSchedule& s, Rng& rng) {
    s.check_timestep(t_from);
    if (t_from == 0) {
        throw Error(ErrorCode::timestep, "cannot step below the data index");
    }
    const PixelGrid x0_hat = predict_x0(x_t, eps_hat, t_from, s);
    return ddim_update(x0_hat, eps_hat, t_from, t_to, cfg.effective_eta(), s, rng);
}

PixelGrid forward_jump(const PixelGrid& x, int t_from, int t_to, const NoiseSchedule& s, Rng& rng) {
    s.check_timestep(t_from);
    s.check_timestep(t_to);
    if (!(t_to > t_from)) {
        throw Error(ErrorCode::timestep, "forward jump needs t_to > t_from");
    }
    const double ratio = s.alpha_bar(t_to) / s.alpha_bar(t_from);
    const double a = std::sqrt(ratio);
    const double b = std::sqrt(1.0 - ratio);
    PixelGrid out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x[i] + b * rng.normal();
    }
    return out;
}

}  // namespace isdiff
