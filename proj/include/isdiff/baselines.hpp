#pragma once

#include <string>
#include <vector>

#include "isdiff/core.hpp"
#include "isdiff/oracle.hpp"
#include "isdiff/schedule.hpp"

namespace isdiff {

enum class StrategyKind { replace, repaint, ddnm };

const char* to_string(StrategyKind kind);
StrategyKind parse_strategy(const std::string& name);

struct RepaintConfig {
    int repeat = 10;
    int jump = 10;

    void validate() const;
};

struct StrategyConfig {
    StrategyKind kind = StrategyKind::ddnm;
    SamplerConfig sampler;
    RepaintConfig repaint;
};

// Known region replaced by a fresh forward sample of y at timestep t
// (y itself at t = 0); unknown region untouched.
PixelGrid replace_step(const PixelGrid& x, const PixelGrid& y, const Mask& m, int t, const NoiseSchedule& s, Rng& rng);

// Range-null replacement for a mask degradation: m*y + (1-m)*x0t.
PixelGrid ddnm_project(const PixelGrid& x0t, const PixelGrid& y, const Mask& m);

// to < from is a reverse step, to > from a forward re-noising jump.
struct ChainMove {
    int from;
    int to;
    bool reverse() const { return to < from; }
};

std::vector<ChainMove> plan_chain(const StrategyConfig& cfg, const NoiseSchedule& s, int t_start);

struct ChainCounters {
    std::size_t reverse_steps = 0;
    std::size_t jump_moves = 0;
    std::size_t oracle_calls = 0;
};

// Resumable reverse chain with a strategy-specific data-consistency rule.
// Copying a chain snapshots its position. The referenced y, mask, oracle and
// schedule must outlive every copy.
class InpaintChain {
public:
    InpaintChain(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                 StrategyConfig cfg, PixelGrid x_start, int t_start);

    int timestep() const { return m_t; }
    const PixelGrid& latent() const { return m_x; }
    bool finished() const { return m_pos == m_moves.size(); }
    std::size_t position() const { return m_pos; }
    const std::vector<ChainMove>& moves() const { return m_moves; }
    const ChainCounters& counters() const { return m_counters; }

    void step(Rng& rng);
    // Runs until the chain first reaches a timestep <= t_stop.
    void run_until(int t_stop, Rng& rng);
    void run_to_end(Rng& rng);

    // Clean estimate at the current timestep with the known region set to y.
    PixelGrid estimate_x0() const;
    // Final output composed with y on the known region.
    PixelGrid result() const;

private:
    const PixelGrid* m_y;
    const Mask* m_mask;
    const Denoiser* m_oracle;
    const NoiseSchedule* m_schedule;
    StrategyConfig m_cfg;
    std::vector<ChainMove> m_moves;
    std::size_t m_pos = 0;
    PixelGrid m_x;
    int m_t;
    ChainCounters m_counters;
};

PixelGrid run_strategy(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                       const StrategyConfig& cfg, const PixelGrid& x_start, int t_start, Rng& rng);

PixelGrid replace_chain(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                        const SamplerConfig& cfg, const PixelGrid& x_start, int t_start, Rng& rng);
PixelGrid repaint_chain(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                        const SamplerConfig& cfg, const RepaintConfig& rp, const PixelGrid& x_start, int t_start,
                        Rng& rng);
PixelGrid ddnm_chain(const PixelGrid& y, const Mask& m, const Denoiser& oracle, const NoiseSchedule& s,
                     const SamplerConfig& cfg, const PixelGrid& x_start, int t_start, Rng& rng);

// Expected reverse-step count of a RePaint plan over `steps` grid intervals.
std::size_t repaint_reverse_steps(int steps, const RepaintConfig& rp);

}  // namespace isdiff
