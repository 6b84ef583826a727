#include <doctest.h>

#include <cmath>

#include "isdiff/schedule.hpp"

using namespace isdiff;

namespace {

PixelGrid random_grid(Shape shape, Rng& rng) {
    PixelGrid g(shape);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = rng.normal();
    }
    return g;
}

}  // namespace

TEST_CASE("linear schedule terminal alpha_bar matches an independent product") {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    long double prod = 1.0L;
    for (int i = 0; i < 1000; ++i) {
        const long double beta = 1e-4L + (0.02L - 1e-4L) * i / 999.0L;
        prod *= 1.0L - beta;
    }
    CHECK(s.steps() == 1000);
    CHECK(s.alpha_bar(1000) == doctest::Approx(static_cast<double>(prod)).epsilon(1e-10));
    CHECK(s.alpha_bar(1000) == doctest::Approx(4.0e-5).epsilon(0.05));
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.beta(1) == doctest::Approx(1e-4));
    CHECK(s.beta(1000) == doctest::Approx(0.02));
}

TEST_CASE("single-step schedule") {
    const NoiseSchedule s = make_linear_schedule(1, 0.5, 0.5);
    CHECK(s.alpha_bar(1) == 0.5);
}

TEST_CASE("schedule invariants") {
    for (int T : {1, 2, 10, 200, 1000}) {
        const NoiseSchedule s = make_linear_schedule(T, 1e-4, 0.02);
        double prod = 1.0;
        for (int t = 1; t <= T; ++t) {
            CHECK(s.beta(t) > 0.0);
            CHECK(s.beta(t) <= 1.0);
            prod *= s.alpha(t);
            CHECK(std::abs(s.alpha_bar(t) - prod) <= 1e-12 * prod);
            CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
            CHECK(s.signal_weight(t) < s.signal_weight(t - 1));
        }
    }
}

TEST_CASE("schedule parameter errors") {
    CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), Error);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), Error);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.03, 0.02), Error);
    CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), Error);
    try {
        make_linear_schedule(10, 0.5, 0.1);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::parameter);
    }
}

TEST_CASE("ddim grids are strictly decreasing and end at zero") {
    for (int T : {1, 7, 100, 1000}) {
        for (int steps : {1, 3, 10, 100}) {
            if (steps > T) {
                continue;
            }
            const auto grid = ddim_timesteps(T, steps);
            CHECK(grid.size() == static_cast<std::size_t>(steps) + 1);
            CHECK(grid.front() == T);
            CHECK(grid.back() == 0);
            for (std::size_t i = 1; i < grid.size(); ++i) {
                CHECK(grid[i] < grid[i - 1]);
            }
            const int start = std::max(1, T / 2);
            const auto sub = ddim_timesteps_from(T, steps, start);
            CHECK(sub.front() == start);
            CHECK(sub.back() == 0);
            for (std::size_t i = 1; i < sub.size(); ++i) {
                CHECK(sub[i] < sub[i - 1]);
            }
        }
    }
}

TEST_CASE("q_sample limits and linearity") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(1);
    const PixelGrid x0 = random_grid(Shape{4, 4, 3}, rng);
    const PixelGrid eps = random_grid(Shape{4, 4, 3}, rng);
    CHECK(q_sample(x0, 0, eps, s) == x0);
    const PixelGrid zero(Shape{4, 4, 3});
    const PixelGrid xt = q_sample(zero, 50, eps, s);
    for (std::size_t i = 0; i < xt.size(); ++i) {
        CHECK(xt[i] == doctest::Approx(std::sqrt(1 - s.alpha_bar(50)) * eps[i]).epsilon(1e-15));
    }
    // near-total noise: a one-step schedule with beta close to one
    const NoiseSchedule loud = make_linear_schedule(1, 0.999999999, 0.999999999);
    const PixelGrid almost = q_sample(x0, 1, eps, loud);
    for (std::size_t i = 0; i < xt.size(); ++i) {
        CHECK(almost[i] == doctest::Approx(eps[i]).epsilon(1e-4));
    }
    CHECK_THROWS_AS(q_sample(x0, 101, eps, s), Error);
    CHECK_THROWS_AS(q_sample(x0, -1, eps, s), Error);
}

TEST_CASE("predict_x0 inverts q_sample and matches the hand formula") {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    Rng rng(2);
    for (int t : {1, 10, 500, 1000}) {
        const PixelGrid x0 = random_grid(Shape{3, 3, 1}, rng);
        const PixelGrid eps = random_grid(Shape{3, 3, 1}, rng);
        const PixelGrid back = predict_x0(q_sample(x0, t, eps, s), eps, t, s);
        for (std::size_t i = 0; i < x0.size(); ++i) {
            CHECK(std::abs(back[i] - x0[i]) <= 1e-10 * std::max(1.0, 1.0 / std::sqrt(s.alpha_bar(t))));
        }
        const PixelGrid xt = random_grid(Shape{3, 3, 1}, rng);
        const PixelGrid e = random_grid(Shape{3, 3, 1}, rng);
        const PixelGrid p = predict_x0(xt, e, t, s);
        const double ab = s.alpha_bar(t);
        for (std::size_t i = 0; i < xt.size(); ++i) {
            CHECK(p[i] == doctest::Approx((xt[i] - std::sqrt(1 - ab) * e[i]) / std::sqrt(ab)).epsilon(1e-13));
        }
        const PixelGrid none = predict_x0(xt, PixelGrid(xt.shape()), t, s);
        for (std::size_t i = 0; i < xt.size(); ++i) {
            CHECK(none[i] == doctest::Approx(xt[i] / std::sqrt(ab)).epsilon(1e-14));
        }
    }
    const PixelGrid g(Shape{2, 2, 1});
    try {
        predict_x0(g, g, 0, s);
        FAIL("t = 0 must be rejected");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::timestep);
    }
}

TEST_CASE("deterministic reverse step with zero eps is a pure rescale") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(3);
    const PixelGrid x = random_grid(Shape{4, 4, 1}, rng);
    const PixelGrid zero(x.shape());
    SamplerConfig cfg;
    cfg.eta = 0.0;
    Rng unused(9);
    const Rng before = unused;
    const PixelGrid out = reverse_step(x, zero, 40, 39, cfg, s, unused);
    CHECK(unused == before);
    const double scale = std::sqrt(s.alpha_bar(39) / s.alpha_bar(40));
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(out[i] == doctest::Approx(scale * x[i]).epsilon(1e-14));
    }
}

TEST_CASE("ddim update matches the closed form") {
    const NoiseSchedule s = make_linear_schedule(200, 5e-4, 0.1);
    Rng rng(4);
    const PixelGrid xt = random_grid(Shape{3, 3, 1}, rng);
    const PixelGrid eps = random_grid(Shape{3, 3, 1}, rng);
    const int from = 120, to = 80;
    const double eta = 0.7;
    const double af = s.alpha_bar(from), at = s.alpha_bar(to);
    const double sigma = eta * std::sqrt((1 - at) / (1 - af)) * std::sqrt(1 - af / at);
    CHECK(ddim_sigma(s, from, to, eta) == doctest::Approx(sigma).epsilon(1e-14));

    SamplerConfig cfg;
    cfg.eta = eta;
    Rng r1(5), r2(5);
    const PixelGrid out = reverse_step(xt, eps, from, to, cfg, s, r1);
    const PixelGrid z = gaussian_noise(xt.shape(), r2);
    for (std::size_t i = 0; i < xt.size(); ++i) {
        const double x0 = (xt[i] - std::sqrt(1 - af) * eps[i]) / std::sqrt(af);
        const double expect = std::sqrt(at) * x0 + std::sqrt(1 - at - sigma * sigma) * eps[i] + sigma * z[i];
        CHECK(out[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("eta one on adjacent steps gives the DDPM posterior") {
    const NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.05);
    const int t = 30;
    const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1), beta = s.beta(t);
    const double posterior_var = beta * (1 - ab_prev) / (1 - ab);
    const double sigma = ddim_sigma(s, t, t - 1, 1.0);
    CHECK(sigma * sigma == doctest::Approx(posterior_var).epsilon(1e-12));

    // mean coefficient on x_t and eps agrees with the DDPM formula
    Rng rng(6);
    const PixelGrid xt = random_grid(Shape{2, 2, 1}, rng);
    const PixelGrid eps = random_grid(Shape{2, 2, 1}, rng);
    const PixelGrid zero(xt.shape());
    SamplerConfig cfg;
    cfg.eta = 1.0;
    // subtract the noise term by running twice with identical streams and using the deterministic part
    Rng r1(7), r2(7);
    const PixelGrid out = reverse_step(xt, eps, t, t - 1, cfg, s, r1);
    const PixelGrid z = gaussian_noise(xt.shape(), r2);
    for (std::size_t i = 0; i < xt.size(); ++i) {
        const double ddpm_mean = (xt[i] - beta / std::sqrt(1 - ab) * eps[i]) / std::sqrt(s.alpha(t));
        CHECK(out[i] - sigma * z[i] == doctest::Approx(ddpm_mean).epsilon(1e-10));
    }
}

TEST_CASE("reverse step validation and determinism") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const PixelGrid x(Shape{2, 2, 1}, 0.1);
    SamplerConfig cfg;
    cfg.eta = 1.0;
    Rng rng(1);
    CHECK_THROWS_AS(reverse_step(x, x, 10, 10, cfg, s, rng), Error);
    CHECK_THROWS_AS(reverse_step(x, x, 10, 20, cfg, s, rng), Error);
    CHECK_THROWS_AS(reverse_step(x, x, 101, 20, cfg, s, rng), Error);
    Rng a(11), b(11);
    CHECK(reverse_step(x, x, 50, 40, cfg, s, a) == reverse_step(x, x, 50, 40, cfg, s, b));

    SamplerConfig bad;
    bad.steps = 101;
    CHECK_THROWS_AS(bad.validate(s), Error);
    bad.steps = 10;
    bad.eta = -0.1;
    CHECK_THROWS_AS(bad.validate(s), Error);
}

TEST_CASE("forward jump matches the forward marginal in distribution") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const PixelGrid x(Shape{100, 100, 1}, 0.5);
    Rng rng(8);
    const PixelGrid out = forward_jump(x, 20, 60, s, rng);
    const double ratio = s.alpha_bar(60) / s.alpha_bar(20);
    double mean = 0.0, var = 0.0;
    for (double v : out.data()) {
        mean += v;
    }
    mean /= static_cast<double>(out.size());
    for (double v : out.data()) {
        var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(out.size() - 1);
    CHECK(mean == doctest::Approx(0.5 * std::sqrt(ratio)).epsilon(0.02));
    CHECK(var == doctest::Approx(1 - ratio).epsilon(0.05));
}
