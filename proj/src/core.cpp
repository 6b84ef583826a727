#include "isdiff/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace isdiff {

const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::empty_region: return "empty-region";
    case ErrorCode::parameter: return "parameter";
    case ErrorCode::timestep: return "timestep";
    case ErrorCode::degenerate_input: return "degenerate-input";
    case ErrorCode::degenerate_mask: return "degenerate-mask";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::factorization: return "factorization";
    case ErrorCode::training_divergence: return "training-divergence";
    case ErrorCode::io: return "io";
    case ErrorCode::config: return "config";
    }
    return "unknown";
}

PixelGrid::PixelGrid(Shape shape, double fill) : m_shape(shape) {
    if (shape.height < 1 || shape.width < 1 || shape.channels < 1) {
        throw Error(ErrorCode::dimension, "pixel grid dimensions must be positive");
    }
    m_data.assign(shape.size(), fill);
}

PixelGrid::PixelGrid(Shape shape, std::vector<double> data) : m_shape(shape), m_data(std::move(data)) {
    if (shape.height < 1 || shape.width < 1 || shape.channels < 1) {
        throw Error(ErrorCode::dimension, "pixel grid dimensions must be positive");
    }
    if (m_data.size() != shape.size()) {
        throw Error(ErrorCode::dimension, "pixel grid data length does not match H*W*C");
    }
}

std::span<const double> PixelGrid::pixel(std::size_t p) const {
    return std::span<const double>(m_data).subspan(p * m_shape.channels, m_shape.channels);
}

bool PixelGrid::all_finite() const {
    return std::all_of(m_data.begin(), m_data.end(), [](double v) { return std::isfinite(v); });
}

Mask::Mask(int height, int width, std::uint8_t fill) : m_height(height), m_width(width) {
    if (height < 1 || width < 1) {
        throw Error(ErrorCode::dimension, "mask dimensions must be positive");
    }
    m_bits.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

Mask::Mask(int height, int width, std::vector<std::uint8_t> bits)
    : m_height(height), m_width(width), m_bits(std::move(bits)) {
    if (height < 1 || width < 1) {
        throw Error(ErrorCode::dimension, "mask dimensions must be positive");
    }
    if (m_bits.size() != static_cast<std::size_t>(height) * width) {
        throw Error(ErrorCode::dimension, "mask data length does not match H*W");
    }
    for (auto& b : m_bits) {
        if (b > 1) {
            throw Error(ErrorCode::parameter, "mask entries must be 0 or 1");
        }
    }
}

std::size_t Mask::count_known() const {
    return static_cast<std::size_t>(std::count(m_bits.begin(), m_bits.end(), std::uint8_t{1}));
}

void Mask::check_matches(const Shape& shape) const {
    if (shape.height != m_height || shape.width != m_width) {
        throw Error(ErrorCode::dimension, "mask " + std::to_string(m_height) + "x" + std::to_string(m_width) +
                                              " does not match grid " + std::to_string(shape.height) + "x" +
                                              std::to_string(shape.width));
    }
}

int histogram_bin(double value, int bins) {
    const double v = std::clamp(value, -1.0, 1.0);
    const int b = static_cast<int>(std::floor((v + 1.0) * 0.5 * bins));
    return std::clamp(b, 0, bins - 1);
}

Histogram normalize_counts(std::vector<double> counts, int bins, int channels, double delta) {
    Histogram h;
    h.bins = bins;
    h.channels = channels;
    h.delta = delta;
    h.probs = std::move(counts);
    for (int c = 0; c < channels; ++c) {
        auto first = h.probs.begin() + static_cast<std::ptrdiff_t>(c) * bins;
        double total = 0.0;
        for (auto it = first; it != first + bins; ++it) {
            total += *it;
        }
        if (total <= 0.0) {
            throw Error(ErrorCode::empty_region, "histogram over an empty region");
        }
        double sum = 0.0;
        for (auto it = first; it != first + bins; ++it) {
            *it = *it / total + delta;
            sum += *it;
        }
        for (auto it = first; it != first + bins; ++it) {
            *it /= sum;
        }
    }
    return h;
}

Histogram histogram(const PixelGrid& x, const Mask& m, Region select, int bins, double delta) {
    if (bins < 2) {
        throw Error(ErrorCode::parameter, "histogram needs at least 2 bins");
    }
    if (delta < 0.0) {
        throw Error(ErrorCode::parameter, "histogram smoothing must be nonnegative");
    }
    m.check_matches(x.shape());
    const int channels = x.channels();
    std::vector<double> counts(static_cast<std::size_t>(channels) * bins, 0.0);
    const bool want_known = select == Region::known;
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (m.known(p) != want_known) {
            continue;
        }
        auto px = x.pixel(p);
        for (int c = 0; c < channels; ++c) {
            counts[static_cast<std::size_t>(c) * bins + histogram_bin(px[c], bins)] += 1.0;
        }
    }
    return normalize_counts(std::move(counts), bins, channels, delta);
}

PixelGrid compose(const PixelGrid& a, const PixelGrid& b, const Mask& m) {
    if (!(a.shape() == b.shape())) {
        throw Error(ErrorCode::dimension, "compose: grid shapes differ");
    }
    m.check_matches(a.shape());
    PixelGrid out = b;
    const int channels = a.channels();
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (m.known(p)) {
            for (int c = 0; c < channels; ++c) {
                out[p * channels + c] = a[p * channels + c];
            }
        }
    }
    return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : m_seed(seed), m_engine(mix_seed(seed, 0)) {}

double Rng::uniform() {
    return static_cast<double>(m_engine() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (m_has_spare) {
        m_has_spare = false;
        return m_spare;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    m_spare = radius * std::sin(angle);
    m_has_spare = true;
    return radius * std::cos(angle);
}

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) {
        throw Error(ErrorCode::parameter, "uniform_index over an empty range");
    }
    // rejection keeps the draw unbiased
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = 0;
    do {
        r = m_engine();
    } while (r >= limit);
    return static_cast<std::size_t>(r % n);
}

Rng Rng::split(std::uint64_t stream) const {
    return Rng(mix_seed(m_seed, stream + 0x51ED));
}

PixelGrid gaussian_noise(const Shape& shape, Rng& rng) {
    PixelGrid g(shape);
    for (auto& v : g.data()) {
        v = rng.normal();
    }
    return g;
}

std::vector<double> region_values(const PixelGrid& x, const Mask& m, Region select, int channel) {
    m.check_matches(x.shape());
    std::vector<double> out;
    const bool want_known = select == Region::known;
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (m.known(p) == want_known) {
            out.push_back(x.pixel(p)[channel]);
        }
    }
    return out;
}

}  // namespace isdiff
