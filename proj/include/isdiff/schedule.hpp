#pragma once

#include <vector>

#include "isdiff/core.hpp"

namespace isdiff {

// Tables are indexed by timestep 0..T; index 0 is the clean-data index with
// alpha_bar(0) = 1 and beta(0) = 0.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    explicit NoiseSchedule(std::vector<double> betas);  // betas for t = 1..T

    int steps() const { return static_cast<int>(m_beta.size()) - 1; }
    double beta(int t) const { return m_beta.at(t); }
    double alpha(int t) const { return m_alpha.at(t); }
    double alpha_bar(int t) const { return m_alpha_bar.at(t); }
    double signal_weight(int t) const;  // sqrt(alpha_bar)
    double noise_weight(int t) const;   // sqrt(1 - alpha_bar)

    void check_timestep(int t) const;

private:
    std::vector<double> m_beta;
    std::vector<double> m_alpha;
    std::vector<double> m_alpha_bar;
};

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

enum class SamplerKind { ddpm, ddim };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::ddim;
    int steps = 100;
    double eta = 0.0;

    // ddpm runs every timestep with eta = 1.
    int effective_steps(const NoiseSchedule& s) const { return kind == SamplerKind::ddpm ? s.steps() : steps; }
    double effective_eta() const { return kind == SamplerKind::ddpm ? 1.0 : eta; }
    void validate(const NoiseSchedule& s) const;
};

// Uniform-stride grid T = g[0] > g[1] > ... > g[steps] = 0.
std::vector<int> ddim_timesteps(int T, int steps);
// Suffix of the full grid strictly below t_start, prefixed by t_start itself.
std::vector<int> ddim_timesteps_from(int T, int steps, int t_start);

PixelGrid q_sample(const PixelGrid& x0, int t, const PixelGrid& eps, const NoiseSchedule& s);
PixelGrid predict_x0(const PixelGrid& x_t, const PixelGrid& eps_hat, int t, const NoiseSchedule& s);
// Noise implied by x_t and a clean estimate.
PixelGrid implied_eps(const PixelGrid& x_t, const PixelGrid& x0_hat, int t, const NoiseSchedule& s);

double ddim_sigma(const NoiseSchedule& s, int t_from, int t_to, double eta);

// x_to = sqrt(ab_to) x0_hat + sqrt(1 - ab_to - sigma^2) eps_hat + sigma z.
// No noise is drawn when sigma == 0.
PixelGrid ddim_update(const PixelGrid& x0_hat, const PixelGrid& eps_hat, int t_from, int t_to,
                      double eta, const NoiseSchedule& s, Rng& rng);

PixelGrid reverse_step(const PixelGrid& x_t, const PixelGrid& eps_hat, int t_from, int t_to,
                       const SamplerConfig& cfg, const NoiseSchedule& s, Rng& rng);

// Forward re-noising from t_from to a later t_to: q(x_to | x_from).
PixelGrid forward_jump(const PixelGrid& x, int t_from, int t_to, const NoiseSchedule& s, Rng& rng);

}  // namespace isdiff
