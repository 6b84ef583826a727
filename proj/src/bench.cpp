#include "isdiff/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

namespace isdiff {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

constexpr std::uint64_t stream_instance = 1;
constexpr std::uint64_t stream_mask = 2;
constexpr std::uint64_t stream_run = 3;
constexpr std::uint64_t stream_pair = 4;
constexpr std::uint64_t stream_kl = 10;

}  // namespace

// ---------------------------------------------------------------------------
// Masks

const char* to_string(MaskKind kind) {
    switch (kind) {
    case MaskKind::half: return "half";
    case MaskKind::expand: return "expand";
    case MaskKind::wide: return "wide";
    case MaskKind::custom: return "custom";
    }
    return "unknown";
}

MaskKind parse_mask_kind(const std::string& name) {
    if (name == "half") {
        return MaskKind::half;
    }
    if (name == "expand") {
        return MaskKind::expand;
    }
    if (name == "wide") {
        return MaskKind::wide;
    }
    if (name == "custom") {
        return MaskKind::custom;
    }
    throw Error(ErrorCode::config, "unknown mask kind '" + name + "' (expected half, expand, wide or custom)");
}

namespace {

void stamp_disc(Mask& m, double cy, double cx, int radius) {
    const int y0 = static_cast<int>(std::floor(cy)) - radius;
    const int x0 = static_cast<int>(std::floor(cx)) - radius;
    for (int y = y0; y <= y0 + 2 * radius + 1; ++y) {
        for (int x = x0; x <= x0 + 2 * radius + 1; ++x) {
            if (y < 0 || x < 0 || y >= m.height() || x >= m.width()) {
                continue;
            }
            const double dy = y + 0.5 - cy;
            const double dx = x + 0.5 - cx;
            if (dy * dy + dx * dx <= (radius + 0.5) * (radius + 0.5)) {
                m.set(y, x, false);
            }
        }
    }
}

double unknown_fraction(const Mask& m) {
    return static_cast<double>(m.count_unknown()) / static_cast<double>(m.pixels());
}

Mask wide_mask(const MaskSpec& spec, int h, int w, Rng& rng) {
    if (!(spec.min_fill > 0.0 && spec.min_fill <= spec.max_fill && spec.max_fill < 1.0)) {
        throw Error(ErrorCode::parameter, "wide mask fill range must satisfy 0 < min <= max < 1");
    }
    const int brush = spec.max_brush > 0 ? spec.max_brush : std::max(1, w / 16);
    const double max_len = std::max(2.0, std::max(h, w) / 3.0);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        Mask m(h, w, 1);
        const double target = spec.min_fill + (spec.max_fill - spec.min_fill) * rng.uniform();
        while (unknown_fraction(m) < target) {
            double y = rng.uniform() * h;
            double x = rng.uniform() * w;
            const int radius = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(brush)));
            const int vertices = 1 + static_cast<int>(rng.uniform_index(4));
            stamp_disc(m, y, x, radius);
            for (int v = 0; v < vertices; ++v) {
                const double angle = 2.0 * std::numbers::pi * rng.uniform();
                const double len = 2.0 + (max_len - 2.0) * rng.uniform();
                const double ny = std::clamp(y + len * std::sin(angle), 0.0, h - 1e-9);
                const double nx = std::clamp(x + len * std::cos(angle), 0.0, w - 1e-9);
                const int samples = static_cast<int>(std::ceil(len * 2.0));
                for (int i = 1; i <= samples; ++i) {
                    const double f = static_cast<double>(i) / samples;
                    stamp_disc(m, y + f * (ny - y), x + f * (nx - x), radius);
                }
                y = ny;
                x = nx;
            }
        }
        const double frac = unknown_fraction(m);
        if (frac >= spec.min_fill && frac <= spec.max_fill && m.count_known() > 0) {
            return m;
        }
    }
    throw Error(ErrorCode::degenerate_mask, "could not draw a wide mask within the fill range");
}

}  // namespace

Mask make_mask(const MaskSpec& spec, int height, int width, Rng& rng) {
    if (height < 2 || width < 2) {
        throw Error(ErrorCode::dimension, "mask generators need at least 2x2 pixels");
    }
    Mask m;
    switch (spec.kind) {
    case MaskKind::half: {
        m = Mask(height, width, 0);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width / 2; ++x) {
                m.set(y, x, true);
            }
        }
        break;
    }
    case MaskKind::expand: {
        m = Mask(height, width, 0);
        const int bh = std::max(1, height / 4);
        const int bw = std::max(1, width / 4);
        const int top = (height - bh) / 2;
        const int left = (width - bw) / 2;
        for (int y = top; y < top + bh; ++y) {
            for (int x = left; x < left + bw; ++x) {
                m.set(y, x, true);
            }
        }
        break;
    }
    case MaskKind::wide:
        m = wide_mask(spec, height, width, rng);
        break;
    case MaskKind::custom:
        if (!spec.custom) {
            throw Error(ErrorCode::config, "custom mask kind without a mask");
        }
        m = *spec.custom;
        if (m.height() != height || m.width() != width) {
            throw Error(ErrorCode::dimension, "custom mask size does not match the task");
        }
        break;
    }
    if (m.count_known() == 0 || m.count_unknown() == 0) {
        throw Error(ErrorCode::degenerate_mask, "mask needs at least one known and one unknown pixel");
    }
    return m;
}

// ---------------------------------------------------------------------------
// Tasks

ToyTask ToyTask::bimodal16() {
    ToyTask t;
    t.name = "bimodal16";
    t.kind = TaskKind::bimodal;
    t.shape = {16, 16, 1};
    t.mixture = {{0.5, 0.5}, {{-0.6}, {0.6}}, {{0.0025}, {0.0025}}};
    t.layout = MixtureLayout::per_pixel;
    return t;
}

ToyTask ToyTask::color32() {
    ToyTask t;
    t.name = "color32";
    t.kind = TaskKind::color;
    t.shape = {32, 32, 3};
    t.mixture.weights = {0.25, 0.25, 0.25, 0.25};
    t.mixture.means = {{0.55, -0.35, 0.2}, {-0.5, 0.45, -0.25}, {0.05, 0.1, 0.65}, {-0.6, -0.55, -0.1}};
    t.mixture.variances.assign(4, std::vector<double>(3, 0.01));
    t.layout = MixtureLayout::shared_color;
    t.pixel_variance = 0.0025;
    return t;
}

ToyTask ToyTask::bars16() {
    ToyTask t;
    t.name = "bars16";
    t.kind = TaskKind::bars;
    t.shape = {16, 16, 1};
    return t;
}

ToyTask ToyTask::constant_image(int size, double value) {
    ToyTask t;
    t.name = "constant" + std::to_string(size);
    t.kind = TaskKind::constant;
    t.shape = {size, size, 1};
    t.mixture = {{1.0}, {{value}}, {{1e-8}}};
    t.layout = MixtureLayout::shared_color;
    t.pixel_variance = 1e-8;
    return t;
}

ToyTask task_by_name(const std::string& name) {
    if (name == "bimodal16") {
        return ToyTask::bimodal16();
    }
    if (name == "color32") {
        return ToyTask::color32();
    }
    if (name == "bars16") {
        return ToyTask::bars16();
    }
    if (name == "constant16") {
        return ToyTask::constant_image(16, 0.3);
    }
    throw Error(ErrorCode::config, "unknown task '" + name + "' (expected bimodal16, color32, bars16 or constant16)");
}

PixelGrid sample_bars(const Shape& shape, Rng& rng) {
    PixelGrid g(shape, -1.0);
    const int row = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(shape.height)));
    const int col = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(shape.width)));
    for (int c = 0; c < shape.channels; ++c) {
        for (int x = 0; x < shape.width; ++x) {
            g.at(row, x, c) = 1.0;
        }
        for (int y = 0; y < shape.height; ++y) {
            g.at(y, col, c) = 1.0;
        }
    }
    return g;
}

TaskInstance sample_instance(const ToyTask& task, Rng& rng) {
    TaskInstance inst;
    if (task.kind == TaskKind::bars) {
        inst.image = sample_bars(task.shape, rng);
        return inst;
    }
    const GmmModel model = task.mixture.to_gmm();
    inst.image = PixelGrid(task.shape);
    const int channels = task.shape.channels;
    Eigen::VectorXd point(channels);
    if (task.layout == MixtureLayout::per_pixel) {
        for (std::size_t p = 0; p < task.shape.pixels(); ++p) {
            gmm_draw(model, rng, point);
            for (int c = 0; c < channels; ++c) {
                inst.image[p * channels + c] = point[c];
            }
        }
        inst.pixel_truth = task.mixture;
        return inst;
    }
    gmm_draw(model, rng, point);
    const double sd = std::sqrt(task.pixel_variance);
    for (std::size_t p = 0; p < task.shape.pixels(); ++p) {
        for (int c = 0; c < channels; ++c) {
            inst.image[p * channels + c] = point[c] + sd * rng.normal();
        }
    }
    DiagonalMixture truth;
    truth.weights = {1.0};
    truth.means = {std::vector<double>(point.data(), point.data() + channels)};
    truth.variances = {std::vector<double>(channels, std::max(task.pixel_variance, 1e-12))};
    inst.pixel_truth = std::move(truth);
    return inst;
}

std::unique_ptr<Denoiser> exact_oracle(const ToyTask& task, const NoiseSchedule& s) {
    if (!task.has_exact_oracle()) {
        return nullptr;
    }
    return std::make_unique<AnalyticGmmOracle>(task.mixture, s, task.layout, task.pixel_variance);
}

MlpDenoiser train_bars_denoiser(const ToyTask& task, const NoiseSchedule& s, int steps, int batch, double lr,
                                std::uint64_t seed, std::vector<double>* losses) {
    MlpDenoiser::Layout layout;
    layout.data_dim = static_cast<int>(task.shape.size());
    MlpDenoiser net(layout, task.shape);
    Rng rng(seed);
    net.init_random(rng);
    std::vector<TrainingExample> examples(static_cast<std::size_t>(batch));
    for (int step = 0; step < steps; ++step) {
        for (auto& ex : examples) {
            const PixelGrid x0 = sample_bars(task.shape, rng);
            ex.x0.assign(x0.data().begin(), x0.data().end());
            ex.t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(s.steps())));
            ex.eps.resize(ex.x0.size());
            for (auto& e : ex.eps) {
                e = rng.normal();
            }
        }
        const double loss = mlp_train_step(net, examples, s, lr);
        if (losses) {
            losses->push_back(loss);
        }
    }
    return net;
}

// ---------------------------------------------------------------------------
// Metrics

Histogram mixture_histogram(const DiagonalMixture& mix, int bins) {
    mix.validate();
    const int channels = mix.dim();
    std::vector<double> probs(static_cast<std::size_t>(channels) * bins, 0.0);
    auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); };
    for (int c = 0; c < channels; ++c) {
        for (int k = 0; k < mix.components(); ++k) {
            const double mu = mix.means[k][c];
            const double sd = std::sqrt(mix.variances[k][c]);
            double prev = 0.0;
            for (int b = 0; b < bins; ++b) {
                const double edge = -1.0 + 2.0 * (b + 1) / bins;
                const double upper = b == bins - 1 ? 1.0 : cdf((edge - mu) / sd);
                probs[static_cast<std::size_t>(c) * bins + b] += mix.weights[k] * (upper - prev);
                prev = upper;
            }
        }
    }
    return normalize_counts(std::move(probs), bins, channels, 0.0);
}

double histogram_l1(const Histogram& a, const Histogram& b) {
    if (a.bins != b.bins || a.channels != b.channels) {
        throw Error(ErrorCode::dimension, "histograms have different layouts");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.probs.size(); ++i) {
        total += std::abs(a.probs[i] - b.probs[i]);
    }
    return total / a.channels;
}

double masked_region_error(const PixelGrid& output, const Mask& m, const TaskInstance& truth, int bins) {
    if (m.count_unknown() == 0) {
        throw Error(ErrorCode::empty_region, "masked-region error needs unknown pixels");
    }
    const Histogram generated = histogram(output, m, Region::unknown, bins, 0.0);
    const Histogram reference = truth.pixel_truth ? mixture_histogram(*truth.pixel_truth, bins)
                                                  : histogram(truth.image, m, Region::unknown, bins, 0.0);
    return histogram_l1(generated, reference);
}

namespace {

// Patch means of the 2x2 tiles that lie entirely in the unknown region.
std::vector<double> patch_means(const PixelGrid& x, const Mask& m, std::vector<std::pair<int, int>>* tiles) {
    std::vector<double> out;
    const int channels = x.channels();
    for (int y = 0; y + 1 < x.height(); y += 2) {
        for (int xx = 0; xx + 1 < x.width(); xx += 2) {
            if (m.known(y, xx) || m.known(y + 1, xx) || m.known(y, xx + 1) || m.known(y + 1, xx + 1)) {
                continue;
            }
            if (tiles) {
                tiles->emplace_back(y, xx);
            }
            for (int c = 0; c < channels; ++c) {
                out.push_back(0.25 * (x.at(y, xx, c) + x.at(y + 1, xx, c) + x.at(y, xx + 1, c) + x.at(y + 1, xx + 1, c)));
            }
        }
    }
    return out;
}

Histogram values_histogram(const std::vector<double>& values, int channels, int bins) {
    std::vector<double> counts(static_cast<std::size_t>(channels) * bins, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const int c = static_cast<int>(i % channels);
        counts[static_cast<std::size_t>(c) * bins + histogram_bin(values[i], bins)] += 1.0;
    }
    return normalize_counts(std::move(counts), bins, channels, 0.0);
}

}  // namespace

double patch_region_error(const PixelGrid& output, const Mask& m, const TaskInstance& truth, int bins) {
    m.check_matches(output.shape());
    const int channels = output.channels();
    const auto generated = patch_means(output, m, nullptr);
    if (generated.empty()) {
        return std::nan("");
    }
    std::vector<double> reference;
    if (truth.pixel_truth) {
        const GmmModel model = truth.pixel_truth->to_gmm();
        Rng rng(0x9A7C4);
        Eigen::VectorXd point(channels);
        const std::size_t patches = 20000;
        reference.assign(patches * channels, 0.0);
        for (std::size_t i = 0; i < patches; ++i) {
            for (int q = 0; q < 4; ++q) {
                gmm_draw(model, rng, point);
                for (int c = 0; c < channels; ++c) {
                    reference[i * channels + c] += 0.25 * point[c];
                }
            }
        }
    } else {
        reference = patch_means(truth.image, m, nullptr);
    }
    return histogram_l1(values_histogram(generated, channels, bins), values_histogram(reference, channels, bins));
}

double masked_mean_sq_distance(const PixelGrid& a, const PixelGrid& b, const Mask& m) {
    if (!(a.shape() == b.shape())) {
        throw Error(ErrorCode::dimension, "grid shapes differ");
    }
    m.check_matches(a.shape());
    if (m.count_unknown() == 0) {
        throw Error(ErrorCode::empty_region, "distance over an empty unknown region");
    }
    const int channels = a.channels();
    double total = 0.0;
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (m.known(p)) {
            continue;
        }
        for (int c = 0; c < channels; ++c) {
            const double d = a[p * channels + c] - b[p * channels + c];
            total += d * d;
        }
    }
    return total / static_cast<double>(m.count_unknown() * channels);
}

// ---------------------------------------------------------------------------
// Driver

const char* to_string(InitKind kind) {
    switch (kind) {
    case InitKind::noise: return "noise";
    case InitKind::gaussian: return "gaussian";
    case InitKind::gmm: return "gmm";
    case InitKind::truth: return "true";
    }
    return "unknown";
}

std::uint64_t run_seed(std::uint64_t base, std::size_t run) {
    return mix_seed(base, static_cast<std::uint64_t>(run) + 0xB0B);
}

int default_threads() {
    int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("ISDIFF_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) {
            n = std::min(n, cap);
        }
    }
    return n;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& f) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            f(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

namespace {

struct PairedInput {
    TaskInstance instance;
    Mask mask;
    PixelGrid y;
};

PairedInput paired_input(const ToyTask& task, const BenchSettings& settings, std::uint64_t seed) {
    const Rng base(seed);
    Rng inst_rng = base.split(stream_instance);
    Rng mask_rng = base.split(stream_mask);
    PairedInput in{sample_instance(task, inst_rng), make_mask(settings.mask, task.shape.height, task.shape.width, mask_rng),
                   PixelGrid()};
    in.y = compose(in.instance.image, PixelGrid(task.shape, 0.0), in.mask);
    return in;
}

PixelGrid fill_unknown(const PixelGrid& y, const Mask& m, const GmmModel& g, Rng& rng) {
    PixelGrid out = y;
    const int channels = y.channels();
    Eigen::VectorXd point(channels);
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (m.known(p)) {
            continue;
        }
        gmm_draw(g, rng, point);
        for (int c = 0; c < channels; ++c) {
            out[p * channels + c] = point[c];
        }
    }
    return out;
}

void score(RunRow& row, const PixelGrid& out, const Mask& m, const TaskInstance& inst, int bins) {
    row.error = masked_region_error(out, m, inst, bins);
    row.patch_error = patch_region_error(out, m, inst, bins);
}

}  // namespace

std::vector<RunRow> analyze_init(const ToyTask& task, const BenchSettings& settings, int runs, std::uint64_t seed) {
    if (runs < 1) {
        throw Error(ErrorCode::parameter, "init analysis needs at least one run");
    }
    if (!task.has_exact_oracle()) {
        throw Error(ErrorCode::config, "init analysis needs a task with a known distribution");
    }
    const auto oracle = exact_oracle(task, settings.schedule);
    const NoiseSchedule& s = settings.schedule;
    StrategyConfig chain_cfg = settings.strategy;
    chain_cfg.kind = StrategyKind::ddnm;
    constexpr InitKind families[] = {InitKind::noise, InitKind::gaussian, InitKind::gmm, InitKind::truth};
    std::vector<RunRow> rows(static_cast<std::size_t>(runs) * 4);

    parallel_for(static_cast<std::size_t>(runs), settings.threads, [&](std::size_t i) {
        const std::uint64_t seed_i = run_seed(seed, i);
        const Rng base(seed_i);
        for (int f = 0; f < 4; ++f) {
            RunRow& row = rows[i * 4 + f];
            row.task = task.name;
            row.strategy = "ddnm";
            row.init = to_string(families[f]);
            row.seed = seed_i;
            row.attempts = 1;
        }
        try {
            const PairedInput in = paired_input(task, settings, seed_i);
            const PointSet known = region_points(in.y, in.mask, Region::known);
            const GmmModel truth = in.instance.pixel_truth->to_gmm();
            EmConfig single = settings.em;
            single.components = 1;
            const GmmModel models[] = {GmmModel::standard_normal(task.shape.channels), fit_em(known, single),
                                       fit_em(known, settings.em), truth};
            for (int f = 0; f < 4; ++f) {
                RunRow& row = rows[i * 4 + f];
                try {
                    Rng kl_rng = base.split(stream_kl + f);
                    const KlEstimate kl = kl_to(models[f], truth, settings.kl_samples, kl_rng);
                    row.kl = kl.value;
                    row.kl_std_error = kl.std_error;
                    const auto started = Clock::now();
                    Rng run_rng = base.split(stream_run);
                    const PixelGrid x_ini = fill_unknown(in.y, in.mask, models[f], run_rng);
                    const PixelGrid x_start = renoise(x_ini, s.steps(), s, run_rng);
                    const PixelGrid out =
                        run_strategy(in.y, in.mask, *oracle, s, chain_cfg, x_start, s.steps(), run_rng);
                    row.wall_ms = elapsed_ms(started);
                    score(row, out, in.mask, in.instance, settings.error_bins);
                } catch (const Error& e) {
                    row.status = to_string(e.code());
                }
            }
        } catch (const Error& e) {
            for (int f = 0; f < 4; ++f) {
                rows[i * 4 + f].status = to_string(e.code());
            }
        }
    });
    return rows;
}

std::vector<StrategyArm> default_arms(const BenchSettings& settings) {
    std::vector<StrategyArm> arms;
    auto with_kind = [&](StrategyKind kind) {
        StrategyConfig cfg = settings.strategy;
        cfg.kind = kind;
        return cfg;
    };
    arms.push_back({"replace", with_kind(StrategyKind::replace), ArmInit::noise, settings.refinement});
    arms.push_back({"repaint", with_kind(StrategyKind::repaint), ArmInit::noise, settings.refinement});
    arms.push_back({"ddnm", with_kind(StrategyKind::ddnm), ArmInit::noise, settings.refinement});
    arms.push_back({"ddnm+seed", with_kind(StrategyKind::ddnm), ArmInit::seed_only, settings.refinement});
    arms.push_back({"ddnm+isdiff", with_kind(StrategyKind::ddnm), ArmInit::isdiff, settings.refinement});
    return arms;
}

RunRow run_arm(const ToyTask& task, const StrategyArm& arm, const Denoiser& oracle, const BenchSettings& settings,
               std::uint64_t seed, PixelGrid* output) {
    RunRow row;
    row.task = task.name;
    row.strategy = arm.label;
    row.init = arm.init == ArmInit::noise ? "noise" : "gmm";
    row.seed = seed;
    try {
        const PairedInput in = paired_input(task, settings, seed);
        const NoiseSchedule& s = settings.schedule;
        auto inpaint = [&](RunRow& r) {
            Rng run_rng = Rng(seed).split(stream_run);
            switch (arm.init) {
            case ArmInit::noise: {
                const PixelGrid x_start = gaussian_noise(task.shape, run_rng);
                r.attempts = 1;
                return run_strategy(in.y, in.mask, oracle, s, arm.strategy, x_start, s.steps(), run_rng);
            }
            case ArmInit::seed_only:
                r.attempts = 1;
                return seed_only_inpaint(in.y, in.mask, arm.strategy, oracle, s, settings.em, run_rng);
            case ArmInit::isdiff:
                break;
            }
            const IsDiffReport report =
                isdiff_inpaint(in.y, in.mask, arm.strategy, oracle, s, arm.refinement, settings.em, run_rng);
            r.attempts = static_cast<int>(report.attempts.size());
            r.dce.clear();
            for (const auto& a : report.attempts) {
                r.dce.push_back(a.dce.value);
            }
            if (report.chosen >= 0) {
                r.selected_dce = report.attempts[report.chosen].dce.value;
            }
            return report.image;
        };
        PixelGrid out;
        row.wall_ms = std::numeric_limits<double>::infinity();
        for (int rep = 0; rep < std::max(1, settings.timing_repeats); ++rep) {
            const auto started = Clock::now();
            out = inpaint(row);
            row.wall_ms = std::min(row.wall_ms, elapsed_ms(started));
        }
        score(row, out, in.mask, in.instance, settings.error_bins);
        if (output) {
            *output = std::move(out);
        }
    } catch (const Error& e) {
        row.status = to_string(e.code());
        row.wall_ms = 0.0;
    }
    return row;
}

std::vector<RunRow> compare_strategies(const ToyTask& task, const BenchSettings& settings,
                                       const std::vector<StrategyArm>& arms, const Denoiser& oracle, int runs,
                                       std::uint64_t seed) {
    if (runs < 1) {
        throw Error(ErrorCode::parameter, "strategy comparison needs at least one run");
    }
    std::vector<RunRow> rows(static_cast<std::size_t>(runs) * arms.size());
    parallel_for(static_cast<std::size_t>(runs), settings.threads, [&](std::size_t i) {
        const std::uint64_t seed_i = run_seed(seed, i);
        for (std::size_t a = 0; a < arms.size(); ++a) {
            rows[a * static_cast<std::size_t>(runs) + i] = run_arm(task, arms[a], oracle, settings, seed_i);
        }
    });
    return rows;
}

std::vector<RunRow> budget_sweep(const ToyTask& task, const BenchSettings& settings, const Denoiser& oracle,
                                 const std::vector<int>& budgets, int runs, std::uint64_t seed) {
    if (runs < 1 || budgets.empty()) {
        throw Error(ErrorCode::parameter, "budget sweep needs runs and at least one budget");
    }
    std::vector<StrategyArm> arms;
    for (int n : budgets) {
        StrategyArm arm = default_arms(settings).back();
        arm.refinement.n_max = n;
        arm.label = "n=" + std::to_string(n);
        arms.push_back(arm);
    }
    BenchSettings single = settings;
    single.timing_repeats = 1;
    const auto count = static_cast<std::size_t>(runs);
    std::vector<RunRow> rows(arms.size() * count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t seed_i = run_seed(seed, i);
        for (int rep = 0; rep < std::max(1, settings.timing_repeats); ++rep) {
            for (std::size_t k = 0; k < arms.size(); ++k) {
                const std::size_t a = (k + i + static_cast<std::size_t>(rep)) % arms.size();
                RunRow row = run_arm(task, arms[a], oracle, single, seed_i);
                RunRow& slot = rows[a * count + i];
                if (rep == 0 || (row.status == "ok" && row.wall_ms < slot.wall_ms)) {
                    slot = std::move(row);
                }
            }
        }
    }
    return rows;
}

std::vector<SummaryRow> summarize(const std::vector<RunRow>& rows, bool by_init) {
    std::vector<SummaryRow> out;
    std::map<std::string, std::size_t> index;
    std::vector<std::size_t> patch_counts;
    for (const auto& r : rows) {
        const std::string key = by_init ? r.init : r.strategy;
        auto [it, inserted] = index.try_emplace(key, out.size());
        if (inserted) {
            out.push_back({key});
            patch_counts.push_back(0);
        }
        SummaryRow& s = out[it->second];
        ++s.runs;
        if (r.status != "ok") {
            ++s.failed;
            continue;
        }
        s.mean_error += r.error;
        if (!std::isnan(r.patch_error)) {
            s.mean_patch_error += r.patch_error;
            ++patch_counts[it->second];
        }
        s.mean_attempts += r.attempts;
        s.mean_wall_ms += r.wall_ms;
        s.mean_selected_dce += r.selected_dce;
        s.mean_kl += r.kl;
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        SummaryRow& s = out[i];
        const double n = static_cast<double>(s.runs - s.failed);
        if (n > 0) {
            s.mean_error /= n;
            s.mean_attempts /= n;
            s.mean_wall_ms /= n;
            s.mean_selected_dce /= n;
            s.mean_kl /= n;
        }
        s.mean_patch_error = patch_counts[i] > 0 ? s.mean_patch_error / static_cast<double>(patch_counts[i]) : std::nan("");
    }
    return out;
}

DiversityResult diversity_probe(const ToyTask& task, const StrategyArm& arm, const Denoiser& oracle,
                                const BenchSettings& settings, int pairs, std::uint64_t seed) {
    if (pairs < 1) {
        throw Error(ErrorCode::parameter, "diversity probe needs at least one pair");
    }
    DiversityResult result;
    result.distances.resize(static_cast<std::size_t>(pairs));
    parallel_for(static_cast<std::size_t>(pairs), settings.threads, [&](std::size_t i) {
        const std::uint64_t seed_i = run_seed(seed, i);
        const std::uint64_t other = mix_seed(seed_i, stream_pair);
        // same paired input, different sampling streams
        const PairedInput in = paired_input(task, settings, seed_i);
        auto run_once = [&](std::uint64_t stream_seed) {
            Rng rng(stream_seed);
            const NoiseSchedule& s = settings.schedule;
            switch (arm.init) {
            case ArmInit::noise: {
                const PixelGrid x_start = gaussian_noise(task.shape, rng);
                return run_strategy(in.y, in.mask, oracle, s, arm.strategy, x_start, s.steps(), rng);
            }
            case ArmInit::seed_only:
                return seed_only_inpaint(in.y, in.mask, arm.strategy, oracle, s, settings.em, rng);
            case ArmInit::isdiff:
                break;
            }
            return isdiff_inpaint(in.y, in.mask, arm.strategy, oracle, s, arm.refinement, settings.em, rng).image;
        };
        result.distances[i] = masked_mean_sq_distance(run_once(seed_i), run_once(other), in.mask);
    });
    double total = 0.0;
    for (double d : result.distances) {
        total += d;
    }
    result.mean_distance = total / pairs;
    return result;
}

double percentile_of(std::vector<double> values, double percentile) {
    if (values.empty()) {
        throw Error(ErrorCode::parameter, "percentile of an empty set");
    }
    if (!(percentile >= 0.0 && percentile <= 100.0)) {
        throw Error(ErrorCode::parameter, "percentile must lie in [0, 100]");
    }
    std::sort(values.begin(), values.end());
    const double pos = percentile / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

Calibration calibrate_threshold(const ToyTask& task, const BenchSettings& settings, const Denoiser& oracle, int runs,
                                double percentile, std::uint64_t seed) {
    if (runs < 1) {
        throw Error(ErrorCode::parameter, "calibration needs at least one run");
    }
    const NoiseSchedule& s = settings.schedule;
    settings.refinement.validate(s);
    const int t_c = settings.refinement.checkpoint(s);
    Calibration cal;
    cal.percentile = percentile;
    cal.dce.resize(static_cast<std::size_t>(runs));
    parallel_for(static_cast<std::size_t>(runs), settings.threads, [&](std::size_t i) {
        const std::uint64_t seed_i = run_seed(seed, i);
        const PairedInput in = paired_input(task, settings, seed_i);
        Rng rng = Rng(seed_i).split(stream_run);
        InpaintChain chain(in.y, in.mask, oracle, s, settings.strategy, gaussian_noise(task.shape, rng), s.steps());
        chain.run_until(t_c, rng);
        cal.dce[i] = dce(chain.estimate_x0(), in.mask, settings.refinement.hist_bins, settings.refinement.hist_delta);
    });
    cal.threshold = percentile_of(cal.dce, percentile);
    return cal;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

double parse_double(const std::string& s) {
    if (s == "nan") {
        return std::nan("");
    }
    return std::stod(s);
}

}  // namespace

void write_csv(std::ostream& os, const std::vector<RunRow>& rows, int dce_columns) {
    os << "task,strategy,init,seed,error,patch_error";
    for (int k = 0; k < dce_columns; ++k) {
        os << ",dce_" << k;
    }
    os << ",attempts,wall_ms,status\n";
    for (const auto& r : rows) {
        os << r.task << ',' << r.strategy << ',' << r.init << ',' << r.seed << ',' << format_double(r.error) << ','
           << format_double(r.patch_error);
        for (int k = 0; k < dce_columns; ++k) {
            os << ',';
            if (k < static_cast<int>(r.dce.size())) {
                os << format_double(r.dce[k]);
            }
        }
        os << ',' << r.attempts << ',' << format_double(r.wall_ms) << ',' << r.status << '\n';
    }
}

std::vector<CsvRow> read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) {
        throw Error(ErrorCode::io, "empty CSV");
    }
    const auto header = split_line(line);
    if (header.size() < 9) {
        throw Error(ErrorCode::io, "CSV header too short");
    }
    const std::size_t dce_columns = header.size() - 9;
    std::vector<CsvRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        const auto f = split_line(line);
        if (f.size() != header.size()) {
            throw Error(ErrorCode::io, "CSV row has " + std::to_string(f.size()) + " fields, expected " +
                                           std::to_string(header.size()));
        }
        CsvRow r;
        r.task = f[0];
        r.strategy = f[1];
        r.init = f[2];
        r.seed = std::stoull(f[3]);
        r.error = parse_double(f[4]);
        r.patch_error = parse_double(f[5]);
        for (std::size_t k = 0; k < dce_columns; ++k) {
            if (!f[6 + k].empty()) {
                r.dce.push_back(parse_double(f[6 + k]));
            }
        }
        r.attempts = std::stoi(f[6 + dce_columns]);
        r.wall_ms = parse_double(f[7 + dce_columns]);
        r.status = f[8 + dce_columns];
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_summary(std::ostream& os, const std::vector<SummaryRow>& summary) {
    os << "strategy,runs,failed,mean_error,mean_patch_error,mean_attempts,mean_wall_ms,mean_selected_dce,mean_kl\n";
    for (const auto& s : summary) {
        os << s.strategy << ',' << s.runs << ',' << s.failed << ',' << format_double(s.mean_error) << ','
           << format_double(s.mean_patch_error) << ',' << format_double(s.mean_attempts) << ','
           << format_double(s.mean_wall_ms) << ',' << format_double(s.mean_selected_dce) << ','
           << format_double(s.mean_kl) << '\n';
    }
}

bool audit_summary(const std::vector<CsvRow>& rows, const std::vector<SummaryRow>& summary, double tol) {
    for (const auto& s : summary) {
        double error = 0.0;
        double attempts = 0.0;
        double wall = 0.0;
        std::size_t n = 0;
        std::size_t total = 0;
        for (const auto& r : rows) {
            if (r.strategy != s.strategy && r.init != s.strategy) {
                continue;
            }
            ++total;
            if (r.status != "ok") {
                continue;
            }
            error += r.error;
            attempts += r.attempts;
            wall += r.wall_ms;
            ++n;
        }
        if (total != s.runs || n != s.runs - s.failed) {
            return false;
        }
        if (n == 0) {
            continue;
        }
        const auto close = [tol](double a, double b) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); };
        if (!close(error / n, s.mean_error) || !close(attempts / n, s.mean_attempts) || !close(wall / n, s.mean_wall_ms)) {
            return false;
        }
    }
    return true;
}

}  // namespace isdiff
