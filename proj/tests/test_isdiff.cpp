#include <doctest.h>

#include <cmath>

#include "isdiff/isdiff.hpp"

using namespace isdiff;

namespace {

const DiagonalMixture bimodal{{0.5, 0.5}, {{-0.6}, {0.6}}, {{0.0025}, {0.0025}}};

PixelGrid bimodal_image(Shape shape, Rng& rng) {
    PixelGrid g(shape);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = (rng.uniform() < 0.5 ? -0.6 : 0.6) + 0.05 * rng.normal();
    }
    return g;
}

Mask left_half(int h, int w) {
    Mask m(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w / 2; ++x) {
            m.set(y, x, true);
        }
    }
    return m;
}

bool known_region_equal(const PixelGrid& out, const PixelGrid& y, const Mask& m) {
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        for (int c = 0; m.known(p) && c < y.channels(); ++c) {
            if (out[p * y.channels() + c] != y[p * y.channels() + c]) {
                return false;
            }
        }
    }
    return true;
}

StrategyConfig ddnm_config() {
    StrategyConfig c;
    c.kind = StrategyKind::ddnm;
    c.sampler.steps = 100;
    return c;
}

double kl_of_grid_pixels(const PixelGrid& g, const Mask& m, const GmmModel& truth) {
    // a two-component fit stands in for the generated pixel distribution
    const PointSet p = region_points(g, m, Region::unknown);
    EmConfig cfg;
    cfg.components = 2;
    Rng rng(99);
    return kl_to(fit_em(p, cfg), truth, 20000, rng).value;
}

}  // namespace

TEST_CASE("refinement defaults") {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    const RefinementConfig cfg;
    CHECK(cfg.eps_threshold == 2.5);
    CHECK(cfg.n_max == 3);
    CHECK(cfg.checkpoint(s) == 600);
    CHECK(cfg.strength_step(s) == 100);
    CHECK(cfg.start_timestep(s) == 1000);
    CHECK(EmConfig{}.components == 5);
    CHECK_NOTHROW(cfg.validate(s));
    RefinementConfig bad = cfg;
    bad.n_max = 0;
    CHECK_THROWS_AS(bad.validate(s), Error);
    bad = cfg;
    bad.tc_fraction = 1.0;
    CHECK_THROWS_AS(bad.validate(s), Error);
    bad = cfg;
    bad.dt_fraction = 0.5;
    CHECK_THROWS_AS(bad.validate(s), Error);
}

TEST_CASE("DCE of coincident point masses is near zero") {
    const PixelGrid g(Shape{4, 4, 1}, 0.25);
    const double delta = 1e-6;
    const double floor = delta / (1 + 32 * delta);
    const double top = (1 + delta) / (1 + 32 * delta);
    const double expect = -(top * std::log(top) + 31 * floor * std::log(floor));
    CHECK(dce(g, left_half(4, 4), 32, delta) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(dce(g, left_half(4, 4), 32, delta) < 1e-3);
}

TEST_CASE("DCE against a floored bin is about -ln(1e-6)") {
    PixelGrid g(Shape{2, 4, 1}, -0.5);
    const Mask m = left_half(2, 4);
    for (int y = 0; y < 2; ++y) {
        for (int x = 2; x < 4; ++x) {
            g.at(y, x, 0) = 0.5;
        }
    }
    const double value = dce(g, m, 32, 1e-6);
    CHECK(value == doctest::Approx(-std::log(1e-6)).epsilon(1e-3));
    CHECK(value == doctest::Approx(13.8).epsilon(2e-3));
    CHECK_THROWS_AS(dce(g, Mask(2, 4, 1), 32, 1e-6), Error);
}

TEST_CASE("DCE averages channels") {
    Rng rng(1);
    PixelGrid g(Shape{4, 4, 3});
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = rng.uniform() * 2 - 1;
    }
    const DceResult r = dce_detail(g, left_half(4, 4), 16, 1e-6);
    REQUIRE(r.per_channel.size() == 3);
    CHECK(r.value == doctest::Approx((r.per_channel[0] + r.per_channel[1] + r.per_channel[2]) / 3));
}

TEST_CASE("primary seed") {
    Rng rng(2);
    const PixelGrid y = bimodal_image(Shape{16, 16, 1}, rng);
    EmConfig em;
    CHECK(primary_seed(y, Mask(16, 16, 1), em, rng) == y);

    const Mask m = left_half(16, 16);
    const PixelGrid seed = primary_seed(y, m, em, rng);
    CHECK(known_region_equal(seed, y, m));
    for (double v : seed.data()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // seed pixels are closer in distribution to the truth than standard normal noise
    const GmmModel truth = bimodal.to_gmm();
    Rng kl_rng(3);
    const double seed_kl = kl_of_grid_pixels(seed, m, truth);
    const double noise_kl = kl_to(GmmModel::standard_normal(1), truth, 20000, kl_rng).value;
    CHECK(seed_kl < noise_kl);

    Mask sparse(16, 16);
    for (int x = 0; x < 15; ++x) {
        sparse.set(0, x, true);
    }
    try {
        primary_seed(y, sparse, em, rng);
        FAIL("expected a degenerate mask error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::degenerate_mask);
    }
}

TEST_CASE("renoise") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(4);
    const PixelGrid x(Shape{3, 3, 1}, 0.4);
    Rng a(5), b(5);
    const PixelGrid out = renoise(x, 70, s, a);
    const PixelGrid eps = gaussian_noise(x.shape(), b);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(out[i] == doctest::Approx(s.signal_weight(70) * 0.4 + s.noise_weight(70) * eps[i]).epsilon(1e-14));
    }
    const NoiseSchedule quiet = make_linear_schedule(1, 1e-12, 1e-12);
    const PixelGrid same = renoise(x, 1, quiet, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(same[i] == doctest::Approx(0.4).epsilon(1e-5));
    }
    CHECK_THROWS_AS(renoise(x, 0, s, rng), Error);
    CHECK_THROWS_AS(renoise(x, 101, s, rng), Error);
}

TEST_CASE("early pass gives one attempt and matches seed-only") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const AnalyticGmmOracle oracle(bimodal, s);
    Rng data(6);
    const PixelGrid y = bimodal_image(Shape{16, 16, 1}, data);
    const Mask m = left_half(16, 16);
    RefinementConfig cfg;
    cfg.eps_threshold = 1e9;
    EmConfig em;
    for (StrategyKind kind : {StrategyKind::replace, StrategyKind::repaint, StrategyKind::ddnm}) {
        StrategyConfig sc = ddnm_config();
        sc.kind = kind;
        sc.sampler.eta = 1.0;
        sc.repaint = {2, 5};
        Rng a(7), b(7);
        const IsDiffReport report = isdiff_inpaint(y, m, sc, oracle, s, cfg, em, a);
        CHECK(report.attempts.size() == 1);
        CHECK(report.outcome == GateOutcome::passed);
        CHECK(report.chosen == 0);
        CHECK(report.attempts[0].t_hat == 100);
        CHECK(known_region_equal(report.image, y, m));
        CHECK(report.image == seed_only_inpaint(y, m, sc, oracle, s, em, b));
    }
}

TEST_CASE("constant gray oracle fails every attempt with a hand-computed DCE") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const ConstantFillOracle oracle(s, 0.0);
    Rng data(8);
    const PixelGrid y = bimodal_image(Shape{16, 16, 1}, data);
    const Mask m = left_half(16, 16);
    RefinementConfig cfg;
    EmConfig em;
    Rng rng(9);
    const IsDiffReport report = isdiff_inpaint(y, m, ddnm_config(), oracle, s, cfg, em, rng);

    const Histogram known = histogram(y, m, Region::known, 32, 1e-6);
    const double floor = 1e-6 / (1 + 32e-6);
    const double top = (1 + 1e-6) / (1 + 32e-6);
    const int gray_bin = 16;
    double expect = -top * std::log(known.prob(0, gray_bin));
    for (int b = 0; b < 32; ++b) {
        if (b != gray_bin) {
            expect -= floor * std::log(known.prob(0, b));
        }
    }
    CHECK(report.outcome == GateOutcome::fallback);
    REQUIRE(report.attempts.size() == 3);
    for (int k = 0; k < 3; ++k) {
        CHECK(report.attempts[k].index == k);
        CHECK(report.attempts[k].t_hat == 100 - 10 * k);
        CHECK(report.attempts[k].dce.value == doctest::Approx(expect).epsilon(1e-9));
        CHECK(report.attempts[k].dce.value > cfg.eps_threshold);
        CHECK(report.attempts[k].checkpoint.timestep() == 60);
    }
    CHECK(report.chosen == 0);
    CHECK(known_region_equal(report.image, y, m));
}

TEST_CASE("fallback continues the argmin attempt") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const AnalyticGmmOracle oracle(bimodal, s);
    Rng data(10);
    RefinementConfig cfg;
    cfg.eps_threshold = -1.0;
    cfg.n_max = 4;
    for (int run = 0; run < 10; ++run) {
        const PixelGrid y = bimodal_image(Shape{16, 16, 1}, data);
        const Mask m = left_half(16, 16);
        Rng rng(100 + run);
        const IsDiffReport report = isdiff_inpaint(y, m, ddnm_config(), oracle, s, cfg, EmConfig{}, rng);
        REQUIRE(report.attempts.size() == 4);
        CHECK(report.outcome == GateOutcome::fallback);
        for (const auto& a : report.attempts) {
            CHECK(report.attempts[report.chosen].dce.value <= a.dce.value);
        }
        for (std::size_t k = 1; k < report.attempts.size(); ++k) {
            CHECK(report.attempts[k - 1].t_hat - report.attempts[k].t_hat == 10);
            CHECK(s.signal_weight(report.attempts[k].t_hat) > s.signal_weight(report.attempts[k - 1].t_hat));
        }
        // deterministic DDIM continuation consumes no randomness
        InpaintChain chain = report.attempts[report.chosen].checkpoint;
        Rng any(12345);
        chain.run_to_end(any);
        CHECK(chain.result() == report.image);
    }
}

TEST_CASE("attempt count is one iff the first DCE passes") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const AnalyticGmmOracle oracle(bimodal, s);
    Rng data(11);
    for (int run = 0; run < 20; ++run) {
        const PixelGrid y = bimodal_image(Shape{16, 16, 1}, data);
        const Mask m = left_half(16, 16);
        RefinementConfig cfg;
        cfg.eps_threshold = 2.6 + 0.05 * run;
        Rng rng(200 + run);
        const IsDiffReport report = isdiff_inpaint(y, m, ddnm_config(), oracle, s, cfg, EmConfig{}, rng);
        CHECK(report.attempts.size() >= 1);
        CHECK(report.attempts.size() <= 3);
        CHECK((report.attempts.size() == 1) == (report.attempts[0].dce.value <= cfg.eps_threshold));
        if (report.outcome == GateOutcome::passed) {
            CHECK(report.attempts.back().dce.value <= cfg.eps_threshold);
            CHECK(report.chosen == static_cast<int>(report.attempts.size()) - 1);
        }
    }
}

TEST_CASE("determinism, diversity and trivial masks") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const AnalyticGmmOracle oracle(bimodal, s);
    Rng data(12);
    const PixelGrid y = bimodal_image(Shape{16, 16, 1}, data);
    const Mask m = left_half(16, 16);
    StrategyConfig sc = ddnm_config();
    const RefinementConfig cfg;
    Rng a(13), b(13), c(14);
    const IsDiffReport ra = isdiff_inpaint(y, m, sc, oracle, s, cfg, EmConfig{}, a);
    const IsDiffReport rb = isdiff_inpaint(y, m, sc, oracle, s, cfg, EmConfig{}, b);
    const IsDiffReport rc = isdiff_inpaint(y, m, sc, oracle, s, cfg, EmConfig{}, c);
    CHECK(ra.image == rb.image);
    REQUIRE(ra.attempts.size() == rb.attempts.size());
    for (std::size_t k = 0; k < ra.attempts.size(); ++k) {
        CHECK(ra.attempts[k].dce.value == rb.attempts[k].dce.value);
        CHECK(ra.attempts[k].checkpoint.latent() == rb.attempts[k].checkpoint.latent());
    }
    CHECK_FALSE(ra.image == rc.image);

    Rng t(15);
    const IsDiffReport trivial = isdiff_inpaint(y, Mask(16, 16, 1), sc, oracle, s, cfg, EmConfig{}, t);
    CHECK(trivial.outcome == GateOutcome::trivial);
    CHECK(trivial.image == y);
    CHECK(trivial.attempts.empty());
}

TEST_CASE("frozen seed reuses the first sample") {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const ConstantFillOracle oracle(s, 0.0);
    Rng data(16);
    const PixelGrid y = bimodal_image(Shape{16, 16, 1}, data);
    const Mask m = left_half(16, 16);
    RefinementConfig cfg;
    cfg.freeze_seed = true;
    Rng a(17), b(17);
    const IsDiffReport frozen = isdiff_inpaint(y, m, ddnm_config(), oracle, s, cfg, EmConfig{}, a);
    cfg.freeze_seed = false;
    const IsDiffReport fresh = isdiff_inpaint(y, m, ddnm_config(), oracle, s, cfg, EmConfig{}, b);
    CHECK(frozen.attempts.size() == 3);
    CHECK(frozen.attempts[0].checkpoint.latent() == fresh.attempts[0].checkpoint.latent());
    CHECK_FALSE(frozen.attempts[1].checkpoint.latent() == fresh.attempts[1].checkpoint.latent());
}
