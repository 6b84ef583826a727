#include "isdiff/baselines.hpp"

#include <map>

namespace isdiff {

const char* to_string(StrategyKind kind) {
    switch (kind) {
    case StrategyKind::replace: return "replace";
    case StrategyKind::repaint: return "repaint";
    case StrategyKind::ddnm: return "ddnm";
    }
    return "unknown";
}

StrategyKind parse_strategy(const std::string& name) {
    if (name == "replace") {
        return StrategyKind::replace;
    }
    if (name == "repaint") {
        return StrategyKind::repaint;
    }
    if (name == "ddnm") {
        return StrategyKind::ddnm;
    }
    throw Error(ErrorCode::config, "unknown strategy '" + name + "' (expected replace, repaint or ddnm)");
}

void RepaintConfig::validate() const {
    if (repeat < 1 || jump < 1) {
        throw Error(ErrorCode::parameter, "RePaint repeat and jump must be at least 1");
    }
}

PixelGrid replace_step(const PixelGrid& x, const PixelGrid& y, const Mask& m, int t, const NoiseSchedule& s, Rng& rng) {
    s.check_timestep(t);
    m.check_matches(x.shape());
    if (t == 0) {
        return compose(y, x, m);
    }
    const double a = s.signal_weight(t);
    const double b = s.noise_weight(t);
    PixelGrid out = x;
    const int channels = x.channels();
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (!m.known(p)) {
            continue;
        }
        for (int c = 0; c < channels; ++c) {
            const std::size_t i = p * channels + c;
            out[i] = a * y[i] + b * rng.normal();
        }
    }
    return out;
}

PixelGrid ddnm_project(const PixelGrid& x0t, const PixelGrid& y, const Mask& m) {
    return compose(y, x0t, m);
}

std::vector<ChainMove> plan_chain(const StrategyConfig& cfg, const NoiseSchedule& s, int t_start) {
    cfg.sampler.validate(s);
    const auto grid = ddim_timesteps_from(s.steps(), cfg.sampler.effective_steps(s), t_start);
    const int intervals = static_cast<int>(grid.size()) - 1;
    std::vector<ChainMove> moves;
    if (cfg.kind != StrategyKind::repaint) {
        for (int i = 0; i < intervals; ++i) {
            moves.push_back({grid[i], grid[i + 1]});
        }
        return moves;
    }
    cfg.repaint.validate();
    const int j = cfg.repaint.jump;
    std::map<int, int> remaining;
    for (int i = j; i <= intervals; i += j) {
        remaining[i] = cfg.repaint.repeat - 1;
    }
    int i = 0;
    while (i < intervals) {
        moves.push_back({grid[i], grid[i + 1]});
        ++i;
        if (auto it = remaining.find(i); it != remaining.end() && it->second > 0) {
            --it->second;
            moves.push_back({grid[i], grid[i - j]});
            i -= j;
        }
    }
    return moves;
}

std::size_t repaint_reverse_steps(int steps, const RepaintConfig& rp) {
    const auto windows = static_cast<std::size_t>(steps / rp.jump);
    return static_cast<std::size_t>(steps) +
           static_cast<std::size_t>(rp.repeat - 1) * static_cast<std::size_t>(rp.jump) * windows;
}

InpaintChain::InpaintChain(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                           StrategyConfig cfg, PixelGrid x_start, int t_start)
    : m_y(&y), m_mask(&m), m_oracle(&oracle), m_schedule(&s), m_cfg(cfg), m_x(std::move(x_start)), m_t(t_start) {
    if (!(y.shape() == m_x.shape())) {
        throw Error(ErrorCode::dimension, "chain start and observation shapes differ");
    }
    m.check_matches(y.shape());
    if (t_start < 1 || t_start > s.steps()) {
        throw Error(ErrorCode::timestep, "invalid chain start timestep " + std::to_string(t_start));
    }
    m_moves = plan_chain(m_cfg, s, t_start);
}

void InpaintChain::step(Rng& rng) {
    if (finished()) {
        return;
    }
    const ChainMove mv = m_moves[m_pos];
    const NoiseSchedule& s = *m_schedule;
    if (!mv.reverse()) {
        m_x = forward_jump(m_x, mv.from, mv.to, s, rng);
        ++m_counters.jump_moves;
    } else {
        const PixelGrid eps_hat = m_oracle->predict_eps(m_x, mv.from);
        ++m_counters.oracle_calls;
        PixelGrid x0_hat = predict_x0(m_x, eps_hat, mv.from, s);
        if (m_cfg.kind == StrategyKind::ddnm) {
            x0_hat = ddnm_project(x0_hat, *m_y, *m_mask);
        }
        m_x = ddim_update(x0_hat, eps_hat, mv.from, mv.to, m_cfg.sampler.effective_eta(), s, rng);
        if (m_cfg.kind != StrategyKind::ddnm) {
            m_x = replace_step(m_x, *m_y, *m_mask, mv.to, s, rng);
        }
        ++m_counters.reverse_steps;
    }
    m_t = mv.to;
    ++m_pos;
    if (!m_x.all_finite()) {
        throw Error(ErrorCode::numerical, "non-finite latent at timestep " + std::to_string(m_t));
    }
}

void InpaintChain::run_until(int t_stop, Rng& rng) {
    while (!finished() && m_t > t_stop) {
        step(rng);
    }
}

void InpaintChain::run_to_end(Rng& rng) {
    while (!finished()) {
        step(rng);
    }
}

PixelGrid InpaintChain::estimate_x0() const {
    const PixelGrid eps_hat = m_oracle->predict_eps(m_x, m_t);
    return ddnm_project(predict_x0(m_x, eps_hat, m_t, *m_schedule), *m_y, *m_mask);
}

PixelGrid InpaintChain::result() const {
    if (!finished()) {
        throw Error(ErrorCode::timestep, "chain has not reached t=0");
    }
    return compose(*m_y, m_x, *m_mask);
}

PixelGrid run_strategy(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                       const StrategyConfig& cfg, const PixelGrid& x_start, int t_start, Rng& rng) {
    InpaintChain chain(y, m, oracle, s, cfg, x_start, t_start);
    chain.run_to_end(rng);
    return chain.result();
}

PixelGrid replace_chain(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                        const SamplerConfig& cfg, const PixelGrid& x_start, int t_start, Rng& rng) {
    return run_strategy(y, m, oracle, s, {StrategyKind::replace, cfg, {}}, x_start, t_start, rng);
}

PixelGrid repaint_chain(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                        const SamplerConfig& cfg, const RepaintConfig& rp, const PixelGrid& x_start, int t_start,
                        Rng& rng) {
    return run_strategy(y, m, oracle, s, {StrategyKind::repaint, cfg, rp}, x_start, t_start, rng);
}

PixelGrid ddnm_chain(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                     const SamplerConfig& cfg, const PixelGrid& x_start, int t_start, Rng& rng) {
    return run_strategy(y, m, oracle, s, {StrategyKind::ddnm, cfg, {}}, x_start, t_start, rng);
}

}  // namespace isdiff
