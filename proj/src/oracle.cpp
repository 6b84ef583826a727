#include "isdiff/oracle.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

namespace isdiff {

void DiagonalMixture::validate() const {
    if (weights.empty() || means.size() != weights.size() || variances.size() != weights.size()) {
        throw Error(ErrorCode::parameter, "mixture needs matching non-empty weights, means and variances");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (!(weights[k] >= 0.0)) {
            throw Error(ErrorCode::parameter, "mixture weights must be nonnegative");
        }
        if (means[k].size() != means.front().size() || variances[k].size() != means.front().size()) {
            throw Error(ErrorCode::dimension, "mixture component dimensions disagree");
        }
        for (double v : variances[k]) {
            if (!(v > 0.0)) {
                throw Error(ErrorCode::parameter, "mixture variances must be positive");
            }
        }
        total += weights[k];
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw Error(ErrorCode::parameter, "mixture weights must sum to 1");
    }
}

GmmModel DiagonalMixture::to_gmm() const {
    validate();
    std::vector<Eigen::VectorXd> mu;
    std::vector<Eigen::MatrixXd> cov;
    for (int k = 0; k < components(); ++k) {
        mu.push_back(Eigen::Map<const Eigen::VectorXd>(means[k].data(), dim()));
        cov.push_back(Eigen::Map<const Eigen::VectorXd>(variances[k].data(), dim()).asDiagonal());
    }
    return GmmModel(weights, std::move(mu), std::move(cov));
}

DiagonalMixture DiagonalMixture::from_gmm(const GmmModel& g) {
    DiagonalMixture out;
    for (int k = 0; k < g.components(); ++k) {
        out.weights.push_back(g.weight(k));
        out.means.emplace_back(g.mean(k).data(), g.mean(k).data() + g.dim());
        std::vector<double> var(g.dim());
        for (int d = 0; d < g.dim(); ++d) {
            var[d] = g.covariance(k)(d, d);
        }
        out.variances.push_back(std::move(var));
    }
    return out;
}

AnalyticGmmOracle::AnalyticGmmOracle(DiagonalMixture mixture, const NoiseSchedule& schedule, MixtureLayout layout,
                                     double pixel_variance)
    : m_mixture(std::move(mixture)), m_schedule(&schedule), m_layout(layout), m_pixel_variance(pixel_variance) {
    m_mixture.validate();
    if (pixel_variance < 0.0) {
        throw Error(ErrorCode::parameter, "pixel variance must be nonnegative");
    }
}

namespace {

void log_responsibilities(const DiagonalMixture& mix, std::span<const double> v, double signal, double noise_var,
                          std::span<double> out) {
    const int dim = mix.dim();
    for (int k = 0; k < mix.components(); ++k) {
        double lp = mix.weights[k] > 0.0 ? std::log(mix.weights[k]) : -std::numeric_limits<double>::infinity();
        for (int c = 0; c < dim; ++c) {
            const double mv = signal * signal * mix.variances[k][c] + noise_var;
            const double r = v[c] - signal * mix.means[k][c];
            lp -= 0.5 * (std::log(2.0 * std::numbers::pi * mv) + r * r / mv);
        }
        out[k] = lp;
    }
    const double top = *std::max_element(out.begin(), out.end());
    double total = 0.0;
    for (auto& x : out) {
        x = std::exp(x - top);
        total += x;
    }
    for (auto& x : out) {
        x /= total;
    }
}

}  // namespace

void AnalyticGmmOracle::posterior_point(std::span<const double> v, double signal, double noise_var,
                                        std::span<double> out) const {
    const int dim = m_mixture.dim();
    std::array<double, 64> resp_buf{};
    std::vector<double> resp_heap;
    std::span<double> resp;
    if (m_mixture.components() <= static_cast<int>(resp_buf.size())) {
        resp = std::span<double>(resp_buf.data(), m_mixture.components());
    } else {
        resp_heap.resize(m_mixture.components());
        resp = resp_heap;
    }
    log_responsibilities(m_mixture, v, signal, noise_var, resp);
    std::fill(out.begin(), out.end(), 0.0);
    for (int k = 0; k < m_mixture.components(); ++k) {
        if (resp[k] == 0.0) {
            continue;
        }
        for (int c = 0; c < dim; ++c) {
            const double s = m_mixture.variances[k][c];
            const double m = m_mixture.means[k][c];
            const double gain = signal * s / (signal * signal * s + noise_var);
            out[c] += resp[k] * (m + gain * (v[c] - signal * m));
        }
    }
}

std::vector<double> AnalyticGmmOracle::responsibilities(std::span<const double> v, int t) const {
    m_schedule->check_timestep(t);
    std::vector<double> out(m_mixture.components());
    log_responsibilities(m_mixture, v, m_schedule->signal_weight(t), 1.0 - m_schedule->alpha_bar(t), out);
    return out;
}

PixelGrid AnalyticGmmOracle::posterior_mean(const PixelGrid& x_t, int t) const {
    m_schedule->check_timestep(t);
    if (t == 0) {
        throw Error(ErrorCode::timestep, "oracle prediction is undefined at t=0");
    }
    const int dim = m_mixture.dim();
    if (x_t.channels() != dim) {
        throw Error(ErrorCode::dimension, "grid channels do not match the mixture dimension");
    }
    const double ab = m_schedule->alpha_bar(t);
    const double signal = std::sqrt(ab);
    PixelGrid out(x_t.shape());
    const std::size_t pixels = x_t.shape().pixels();
    if (m_layout == MixtureLayout::per_pixel) {
        for (std::size_t p = 0; p < pixels; ++p) {
            posterior_point(x_t.pixel(p), signal, 1.0 - ab, out.data().subspan(p * dim, dim));
        }
        return out;
    }

    // The per-channel pixel mean is sufficient for the shared color; pixel
    // deviations are then a conjugate Gaussian update.
    std::vector<double> mean(dim, 0.0);
    for (std::size_t p = 0; p < pixels; ++p) {
        auto px = x_t.pixel(p);
        for (int c = 0; c < dim; ++c) {
            mean[c] += px[c];
        }
    }
    for (auto& m : mean) {
        m /= static_cast<double>(pixels);
    }
    const double per_pixel_var = ab * m_pixel_variance + (1.0 - ab);
    std::vector<double> color(dim);
    posterior_point(mean, signal, per_pixel_var / static_cast<double>(pixels), color);
    const double gain = signal * m_pixel_variance / per_pixel_var;
    for (std::size_t p = 0; p < pixels; ++p) {
        auto px = x_t.pixel(p);
        for (int c = 0; c < dim; ++c) {
            out[p * dim + c] = color[c] + gain * (px[c] - signal * color[c]);
        }
    }
    return out;
}

PixelGrid AnalyticGmmOracle::predict_eps(const PixelGrid& x_t, int t) const {
    return implied_eps(x_t, posterior_mean(x_t, t), t, *m_schedule);
}

PixelGrid ConstantFillOracle::predict_eps(const PixelGrid& x_t, int t) const {
    m_schedule->check_timestep(t);
    if (t == 0) {
        throw Error(ErrorCode::timestep, "oracle prediction is undefined at t=0");
    }
    return implied_eps(x_t, PixelGrid(x_t.shape(), m_value), t, *m_schedule);
}

// ---------------------------------------------------------------------------
// MLP

namespace {

struct Offsets {
    std::size_t w1, b1, w2, b2, w3, b3, total;
};

Offsets offsets(const MlpDenoiser::Layout& l) {
    const std::size_t in = static_cast<std::size_t>(l.data_dim + l.embed_dim);
    const std::size_t h = static_cast<std::size_t>(l.hidden);
    const std::size_t d = static_cast<std::size_t>(l.data_dim);
    Offsets o{};
    o.w1 = 0;
    o.b1 = o.w1 + h * in;
    o.w2 = o.b1 + h;
    o.b2 = o.w2 + h * h;
    o.w3 = o.b2 + h;
    o.b3 = o.w3 + d * h;
    o.total = o.b3 + d;
    return o;
}

double sigmoid(double a) {
    return 1.0 / (1.0 + std::exp(-a));
}

double silu(double a) {
    return a * sigmoid(a);
}

double silu_grad(double a) {
    const double s = sigmoid(a);
    return s * (1.0 + a * (1.0 - s));
}

// out = W v + b with W rows x cols, row-major.
void affine(const double* w, const double* b, const double* v, int rows, int cols, double* out) {
    for (int r = 0; r < rows; ++r) {
        double acc = b[r];
        const double* row = w + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
            acc += row[c] * v[c];
        }
        out[r] = acc;
    }
}

struct Activations {
    std::vector<double> input, a1, h1, a2, h2, out;
};

Activations run_forward(const MlpDenoiser& d, std::span<const double> x, int t) {
    const auto& l = d.layout();
    if (static_cast<int>(x.size()) != l.data_dim) {
        throw Error(ErrorCode::dimension, "MLP input length " + std::to_string(x.size()) + " does not match " +
                                              std::to_string(l.data_dim));
    }
    const auto o = offsets(l);
    const double* p = d.parameters().data();
    Activations act;
    act.input.assign(x.begin(), x.end());
    const auto emb = time_embedding(t, l.embed_dim);
    act.input.insert(act.input.end(), emb.begin(), emb.end());
    const int in = l.data_dim + l.embed_dim;
    act.a1.resize(l.hidden);
    act.h1.resize(l.hidden);
    act.a2.resize(l.hidden);
    act.h2.resize(l.hidden);
    act.out.resize(l.data_dim);
    affine(p + o.w1, p + o.b1, act.input.data(), l.hidden, in, act.a1.data());
    std::transform(act.a1.begin(), act.a1.end(), act.h1.begin(), silu);
    affine(p + o.w2, p + o.b2, act.h1.data(), l.hidden, l.hidden, act.a2.data());
    std::transform(act.a2.begin(), act.a2.end(), act.h2.begin(), silu);
    affine(p + o.w3, p + o.b3, act.h2.data(), l.data_dim, l.hidden, act.out.data());
    return act;
}

}  // namespace

std::vector<double> time_embedding(int t, int dim) {
    std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(half, 1));
        out[i] = std::sin(t * freq);
        out[i + half] = std::cos(t * freq);
    }
    return out;
}

MlpDenoiser::MlpDenoiser(Layout layout, Shape shape) : m_layout(layout), m_shape(shape) {
    if (layout.data_dim < 1 || layout.hidden < 1 || layout.embed_dim < 0) {
        throw Error(ErrorCode::parameter, "invalid MLP layout");
    }
    if (shape.size() != static_cast<std::size_t>(layout.data_dim)) {
        throw Error(ErrorCode::dimension, "MLP data dimension does not match the grid shape");
    }
    m_params.assign(offsets(layout).total, 0.0);
}

std::vector<MlpDenoiser::Tensor> MlpDenoiser::tensors() const {
    const auto o = offsets(m_layout);
    return {
        {"w1", o.w1, o.b1 - o.w1}, {"b1", o.b1, o.w2 - o.b1}, {"w2", o.w2, o.b2 - o.w2},
        {"b2", o.b2, o.w3 - o.b2}, {"w3", o.w3, o.b3 - o.w3}, {"b3", o.b3, o.total - o.b3},
    };
}

void MlpDenoiser::init_random(Rng& rng) {
    const auto o = offsets(m_layout);
    const int in = m_layout.data_dim + m_layout.embed_dim;
    auto fill = [&](std::size_t start, int rows, int cols) {
        const double limit = std::sqrt(6.0 / (rows + cols));
        for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * cols; ++i) {
            m_params[start + i] = (2.0 * rng.uniform() - 1.0) * limit;
        }
    };
    std::fill(m_params.begin(), m_params.end(), 0.0);
    fill(o.w1, m_layout.hidden, in);
    fill(o.w2, m_layout.hidden, m_layout.hidden);
    fill(o.w3, m_layout.data_dim, m_layout.hidden);
}

std::vector<double> MlpDenoiser::forward(std::span<const double> x_t, int t) const {
    return run_forward(*this, x_t, t).out;
}

PixelGrid MlpDenoiser::predict_eps(const PixelGrid& x_t, int t) const {
    if (!(x_t.shape() == m_shape)) {
        throw Error(ErrorCode::dimension, "grid shape does not match the MLP");
    }
    return PixelGrid(x_t.shape(), forward(x_t.data(), t));
}

namespace {

std::vector<double> noisy_input(const TrainingExample& ex, const NoiseSchedule& s) {
    s.check_timestep(ex.t);
    if (ex.eps.size() != ex.x0.size()) {
        throw Error(ErrorCode::dimension, "training example noise and data lengths differ");
    }
    const double a = s.signal_weight(ex.t);
    const double b = s.noise_weight(ex.t);
    std::vector<double> x(ex.x0.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = a * ex.x0[i] + b * ex.eps[i];
    }
    return x;
}

}  // namespace

double mlp_loss(const MlpDenoiser& d, std::span<const TrainingExample> batch, const NoiseSchedule& s) {
    if (batch.empty()) {
        throw Error(ErrorCode::parameter, "empty training batch");
    }
    const double scale = 1.0 / (static_cast<double>(batch.size()) * d.layout().data_dim);
    double loss = 0.0;
    for (const auto& ex : batch) {
        const auto out = d.forward(noisy_input(ex, s), ex.t);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double r = out[i] - ex.eps[i];
            loss += r * r;
        }
    }
    return loss * scale;
}

double mlp_loss_and_gradient(const MlpDenoiser& d, std::span<const TrainingExample> batch, const NoiseSchedule& s,
                             std::vector<double>& grad) {
    if (batch.empty()) {
        throw Error(ErrorCode::parameter, "empty training batch");
    }
    const auto& l = d.layout();
    const auto o = offsets(l);
    const double* p = d.parameters().data();
    const int in = l.data_dim + l.embed_dim;
    const int h = l.hidden;
    const int dd = l.data_dim;
    grad.assign(d.parameter_count(), 0.0);
    const double scale = 1.0 / (static_cast<double>(batch.size()) * dd);

    std::vector<double> d_out(dd), d_h2(h), d_a2(h), d_h1(h), d_a1(h);
    double loss = 0.0;
    for (const auto& ex : batch) {
        const auto act = run_forward(d, noisy_input(ex, s), ex.t);
        for (int i = 0; i < dd; ++i) {
            const double r = act.out[i] - ex.eps[i];
            loss += r * r;
            d_out[i] = 2.0 * r * scale;
        }
        // output layer
        std::fill(d_h2.begin(), d_h2.end(), 0.0);
        for (int r = 0; r < dd; ++r) {
            double* gw = grad.data() + o.w3 + static_cast<std::size_t>(r) * h;
            const double* w = p + o.w3 + static_cast<std::size_t>(r) * h;
            for (int c = 0; c < h; ++c) {
                gw[c] += d_out[r] * act.h2[c];
                d_h2[c] += w[c] * d_out[r];
            }
            grad[o.b3 + r] += d_out[r];
        }
        for (int j = 0; j < h; ++j) {
            d_a2[j] = d_h2[j] * silu_grad(act.a2[j]);
        }
        // second hidden layer
        std::fill(d_h1.begin(), d_h1.end(), 0.0);
        for (int r = 0; r < h; ++r) {
            double* gw = grad.data() + o.w2 + static_cast<std::size_t>(r) * h;
            const double* w = p + o.w2 + static_cast<std::size_t>(r) * h;
            for (int c = 0; c < h; ++c) {
                gw[c] += d_a2[r] * act.h1[c];
                d_h1[c] += w[c] * d_a2[r];
            }
            grad[o.b2 + r] += d_a2[r];
        }
        for (int j = 0; j < h; ++j) {
            d_a1[j] = d_h1[j] * silu_grad(act.a1[j]);
        }
        // first hidden layer
        for (int r = 0; r < h; ++r) {
            double* gw = grad.data() + o.w1 + static_cast<std::size_t>(r) * in;
            for (int c = 0; c < in; ++c) {
                gw[c] += d_a1[r] * act.input[c];
            }
            grad[o.b1 + r] += d_a1[r];
        }
    }
    return loss * scale;
}

double mlp_train_step(MlpDenoiser& d, std::span<const TrainingExample> batch, const NoiseSchedule& s, double lr) {
    if (!(lr >= 0.0)) {
        throw Error(ErrorCode::parameter, "learning rate must be nonnegative");
    }
    std::vector<double> grad;
    const double loss = mlp_loss_and_gradient(d, batch, s, grad);
    if (!std::isfinite(loss)) {
        throw Error(ErrorCode::training_divergence, "non-finite training loss");
    }
    if (lr == 0.0) {
        return loss;
    }
    auto params = d.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= lr * grad[i];
    }
    if (!std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); })) {
        throw Error(ErrorCode::training_divergence, "non-finite parameters after a training step");
    }
    return loss;
}

namespace {

constexpr std::uint32_t mlp_magic = 0x504C4D49;  // "IMLP" little-endian

template <typename T>
void put_le(std::ofstream& os, T value) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::ifstream& is) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

}  // namespace

void save_mlp(const MlpDenoiser& d, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
    }
    put_le<std::uint32_t>(os, mlp_magic);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.layout().data_dim));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.layout().hidden));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.layout().embed_dim));
    for (double v : d.parameters()) {
        put_le<double>(os, v);
    }
    if (!os) {
        throw Error(ErrorCode::io, "failed writing " + path.string());
    }
}

MlpDenoiser load_mlp(const std::filesystem::path& path, Shape shape) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error(ErrorCode::io, "cannot open " + path.string());
    }
    if (get_le<std::uint32_t>(is) != mlp_magic) {
        throw Error(ErrorCode::io, path.string() + " is not an MLP weight file");
    }
    MlpDenoiser::Layout layout;
    layout.data_dim = static_cast<int>(get_le<std::uint32_t>(is));
    layout.hidden = static_cast<int>(get_le<std::uint32_t>(is));
    layout.embed_dim = static_cast<int>(get_le<std::uint32_t>(is));
    if (!is) {
        throw Error(ErrorCode::io, "truncated header in " + path.string());
    }
    MlpDenoiser d(layout, shape);
    for (auto& v : d.parameters()) {
        v = get_le<double>(is);
    }
    if (!is) {
        throw Error(ErrorCode::io, "truncated parameters in " + path.string());
    }
    return d;
}

}  // namespace isdiff
