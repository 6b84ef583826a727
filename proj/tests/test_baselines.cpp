#include <doctest.h>

#include <cmath>

#include "isdiff/baselines.hpp"

using namespace isdiff;

namespace {

PixelGrid random_grid(Shape shape, Rng& rng) {
    PixelGrid g(shape);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = rng.uniform() * 2 - 1;
    }
    return g;
}

Mask random_mask(int h, int w, Rng& rng) {
    Mask m(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            m.set(y, x, rng.uniform() < 0.5);
        }
    }
    return m;
}

bool known_region_equal(const PixelGrid& out, const PixelGrid& y, const Mask& m) {
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (!m.known(p)) {
            continue;
        }
        for (int c = 0; c < y.channels(); ++c) {
            const std::size_t i = p * y.channels() + c;
            if (out[i] != y[i]) {
                return false;
            }
        }
    }
    return true;
}

StrategyConfig strategy(StrategyKind kind, int steps = 20) {
    StrategyConfig c;
    c.kind = kind;
    c.sampler.steps = steps;
    c.repaint = {3, 2};
    return c;
}

}  // namespace

TEST_CASE("strategy names") {
    CHECK(parse_strategy("replace") == StrategyKind::replace);
    CHECK(parse_strategy("repaint") == StrategyKind::repaint);
    CHECK(parse_strategy("ddnm") == StrategyKind::ddnm);
    CHECK(std::string(to_string(StrategyKind::repaint)) == "repaint");
    CHECK_THROWS_AS(parse_strategy("lama"), Error);
    CHECK_THROWS_AS((RepaintConfig{0, 1}.validate()), Error);
    CHECK_THROWS_AS((RepaintConfig{1, 0}.validate()), Error);
}

TEST_CASE("replace step") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(1);
    const PixelGrid x = random_grid(Shape{6, 6, 3}, rng);
    const PixelGrid y = random_grid(Shape{6, 6, 3}, rng);
    const Mask m = random_mask(6, 6, rng);
    CHECK(known_region_equal(replace_step(x, y, m, 0, s, rng), y, m));
    CHECK(replace_step(x, y, Mask(6, 6, 0), 50, s, rng) == x);
    const PixelGrid out = replace_step(x, y, m, 50, s, rng);
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (!m.known(p)) {
            CHECK(out[p * 3] == x[p * 3]);
        }
    }
}

TEST_CASE("replace step known-region mean matches the forward marginal") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const PixelGrid y(Shape{1, 2, 1}, std::vector<double>{0.7, -0.4});
    const Mask m(1, 2, std::vector<std::uint8_t>{1, 0});
    const PixelGrid x(Shape{1, 2, 1});
    Rng rng(2);
    const int n = 40000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        sum += replace_step(x, y, m, 60, s, rng)[0];
    }
    const double se = s.noise_weight(60) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(sum / n - s.signal_weight(60) * 0.7) <= 4 * se);
}

TEST_CASE("ddnm projection") {
    Rng rng(3);
    const PixelGrid x = random_grid(Shape{5, 5, 3}, rng);
    const PixelGrid y = random_grid(Shape{5, 5, 3}, rng);
    CHECK(ddnm_project(x, y, Mask(5, 5, 1)) == y);
    for (int trial = 0; trial < 100; ++trial) {
        const PixelGrid a = random_grid(Shape{5, 5, 3}, rng);
        const PixelGrid b = random_grid(Shape{5, 5, 3}, rng);
        const Mask m = random_mask(5, 5, rng);
        const PixelGrid once = ddnm_project(a, b, m);
        CHECK(ddnm_project(once, b, m) == once);
        CHECK(known_region_equal(once, b, m));
    }
}

TEST_CASE("repaint plan step accounting") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    for (int steps : {10, 20, 50, 100}) {
        for (RepaintConfig rp : {RepaintConfig{1, 1}, RepaintConfig{3, 2}, RepaintConfig{10, 10}, RepaintConfig{4, 4},
                                 RepaintConfig{2, 7}}) {
            StrategyConfig cfg = strategy(StrategyKind::repaint, steps);
            cfg.repaint = rp;
            const auto moves = plan_chain(cfg, s, 100);
            std::size_t reverse = 0, jumps = 0;
            for (const auto& mv : moves) {
                (mv.reverse() ? reverse : jumps) += 1;
            }
            CHECK(reverse == repaint_reverse_steps(steps, rp));
            // closed form: every complete jump window is traversed r times
            const std::size_t windows = static_cast<std::size_t>(steps / rp.jump);
            CHECK(reverse == static_cast<std::size_t>(steps) + (rp.repeat - 1) * rp.jump * windows);
            CHECK(jumps == (rp.repeat - 1) * windows);
            CHECK(moves.back().to == 0);
        }
    }
}

TEST_CASE("repaint with a single repeat and a huge jump is a replacement chain") {
    const NoiseSchedule s = make_linear_schedule(50, 1e-4, 0.02);
    const ConstantFillOracle oracle(s, 0.1);
    Rng rng(4);
    const PixelGrid y = random_grid(Shape{4, 4, 1}, rng);
    const Mask m = random_mask(4, 4, rng);
    const PixelGrid start = gaussian_noise(y.shape(), rng);
    SamplerConfig sc;
    sc.steps = 25;
    sc.eta = 1.0;
    Rng a(5), b(5);
    const PixelGrid rp = repaint_chain(y, m, oracle, s, sc, RepaintConfig{1, 1000}, start, 50, a);
    const PixelGrid rep = replace_chain(y, m, oracle, s, sc, start, 50, b);
    CHECK(rp == rep);
}

TEST_CASE("instrumented counters agree with the plan") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const ConstantFillOracle oracle(s, 0.0);
    Rng rng(6);
    const PixelGrid y = random_grid(Shape{4, 4, 1}, rng);
    const Mask m = random_mask(4, 4, rng);
    StrategyConfig cfg = strategy(StrategyKind::repaint, 20);
    cfg.repaint = {4, 4};
    InpaintChain chain(y, m, oracle, s, cfg, gaussian_noise(y.shape(), rng), 100);
    chain.run_to_end(rng);
    CHECK(chain.counters().reverse_steps == repaint_reverse_steps(20, cfg.repaint));
    CHECK(chain.counters().jump_moves == 3 * 5);
    CHECK(chain.timestep() == 0);
}

TEST_CASE("chains preserve the known region and stay finite on fuzzed masks") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const ConstantFillOracle oracle(s, 0.3);
    Rng rng(7);
    for (int trial = 0; trial < 60; ++trial) {
        const Shape shape{1 + static_cast<int>(rng.uniform_index(8)), 1 + static_cast<int>(rng.uniform_index(8)),
                          trial % 2 == 0 ? 1 : 3};
        const PixelGrid y = random_grid(shape, rng);
        const Mask m = random_mask(shape.height, shape.width, rng);
        const StrategyKind kind = static_cast<StrategyKind>(trial % 3);
        StrategyConfig cfg = strategy(kind, 10);
        cfg.repaint = {1, 3};
        const int t_start = 1 + static_cast<int>(rng.uniform_index(100));
        const PixelGrid out = run_strategy(y, m, oracle, s, cfg, gaussian_noise(shape, rng), t_start, rng);
        CHECK(known_region_equal(out, y, m));
        CHECK(out.all_finite());
    }
}

TEST_CASE("ddnm with a fully known mask returns y") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const ConstantFillOracle oracle(s, 0.9);
    Rng rng(8);
    const PixelGrid y = random_grid(Shape{4, 4, 3}, rng);
    SamplerConfig sc;
    sc.steps = 10;
    CHECK(ddnm_chain(y, Mask(4, 4, 1), oracle, s, sc, gaussian_noise(y.shape(), rng), 100, rng) == y);
}

TEST_CASE("chains are deterministic and use only the given stream") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const AnalyticGmmOracle oracle(DiagonalMixture{{1.0}, {{0.2}}, {{0.05}}}, s);
    Rng rng(9);
    const PixelGrid y = random_grid(Shape{4, 4, 1}, rng);
    const Mask m = random_mask(4, 4, rng);
    const PixelGrid start = gaussian_noise(y.shape(), rng);
    for (int k = 0; k < 3; ++k) {
        StrategyConfig cfg = strategy(static_cast<StrategyKind>(k), 20);
        cfg.sampler.eta = 1.0;
        Rng a(10), b(10);
        CHECK(run_strategy(y, m, oracle, s, cfg, start, 100, a) == run_strategy(y, m, oracle, s, cfg, start, 100, b));
        CHECK(a == b);
    }
}

TEST_CASE("chain start validation") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const ConstantFillOracle oracle(s, 0.0);
    const PixelGrid y(Shape{2, 2, 1});
    const Mask m(2, 2, 0);
    const StrategyConfig cfg = strategy(StrategyKind::ddnm);
    CHECK_THROWS_AS(InpaintChain(y, m, oracle, s, cfg, y, 0), Error);
    CHECK_THROWS_AS(InpaintChain(y, m, oracle, s, cfg, y, 101), Error);
    CHECK_THROWS_AS(InpaintChain(y, m, oracle, s, cfg, PixelGrid(Shape{2, 3, 1}), 50), Error);
    InpaintChain chain(y, m, oracle, s, cfg, y, 50);
    CHECK_THROWS_AS(chain.result(), Error);
}

TEST_CASE("ddnm on a shared-color Gaussian tracks the conditional mean") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const double mu = 0.2, sc = 0.01, pv = 0.0025;
    const AnalyticGmmOracle oracle(DiagonalMixture{{1.0}, {{mu}}, {{sc}}}, s, MixtureLayout::shared_color, pv);
    Mask m(8, 8);
    for (int yy = 0; yy < 8; ++yy) {
        for (int x = 0; x < 4; ++x) {
            m.set(yy, x, true);
        }
    }
    StrategyConfig cfg = strategy(StrategyKind::ddnm, 100);
    cfg.sampler.eta = 1.0;
    Rng rng(11);
    const int runs = 300;
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < runs; ++r) {
        const double color = mu + std::sqrt(sc) * rng.normal();
        PixelGrid y(Shape{8, 8, 1});
        double known_mean = 0.0;
        for (std::size_t p = 0; p < 64; ++p) {
            y[p] = color + std::sqrt(pv) * rng.normal();
            if (m.known(p)) {
                known_mean += y[p] / 32.0;
            }
        }
        const double conditional = mu + sc / (sc + pv / 32.0) * (known_mean - mu);
        const PixelGrid out = ddnm_chain(y, m, oracle, s, cfg.sampler, gaussian_noise(y.shape(), rng), 100, rng);
        double unknown_mean = 0.0;
        for (std::size_t p = 0; p < 64; ++p) {
            if (!m.known(p)) {
                unknown_mean += out[p] / 32.0;
            }
        }
        const double d = unknown_mean - conditional;
        sum += d;
        sum_sq += d * d;
    }
    const double mean = sum / runs;
    const double se = std::sqrt((sum_sq / runs - mean * mean) / (runs - 1));
    CHECK(std::abs(mean) <= 4 * se + 1e-3);
}
