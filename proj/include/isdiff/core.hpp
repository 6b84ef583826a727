#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace isdiff {

enum class ErrorCode {
    dimension,
    empty_region,
    parameter,
    timestep,
    degenerate_input,
    degenerate_mask,
    numerical,
    factorization,
    training_divergence,
    io,
    config,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

struct Shape {
    int height = 0;
    int width = 0;
    int channels = 1;

    std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    std::size_t size() const { return pixels() * static_cast<std::size_t>(channels); }
    bool operator==(const Shape&) const = default;
};

// H x W x C intensities, row-major with channels innermost. Nominal range [-1, 1].
class PixelGrid {
public:
    PixelGrid() = default;
    explicit PixelGrid(Shape shape, double fill = 0.0);
    PixelGrid(Shape shape, std::vector<double> data);

    const Shape& shape() const { return m_shape; }
    int height() const { return m_shape.height; }
    int width() const { return m_shape.width; }
    int channels() const { return m_shape.channels; }
    std::size_t size() const { return m_data.size(); }

    double& at(int y, int x, int c) { return m_data[index(y, x, c)]; }
    double at(int y, int x, int c) const { return m_data[index(y, x, c)]; }
    double& operator[](std::size_t i) { return m_data[i]; }
    double operator[](std::size_t i) const { return m_data[i]; }

    std::span<double> data() { return m_data; }
    std::span<const double> data() const { return m_data; }
    // All channel values of pixel p (p = y*W + x).
    std::span<const double> pixel(std::size_t p) const;

    bool all_finite() const;
    bool operator==(const PixelGrid&) const = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * m_shape.width + x) * m_shape.channels + c;
    }

    Shape m_shape;
    std::vector<double> m_data;
};

// Binary H x W map; 1 = known/observed pixel.
class Mask {
public:
    Mask() = default;
    Mask(int height, int width, std::uint8_t fill = 0);
    Mask(int height, int width, std::vector<std::uint8_t> bits);

    int height() const { return m_height; }
    int width() const { return m_width; }
    std::size_t pixels() const { return m_bits.size(); }

    bool known(std::size_t p) const { return m_bits[p] != 0; }
    bool known(int y, int x) const { return m_bits[static_cast<std::size_t>(y) * m_width + x] != 0; }
    void set(int y, int x, bool known) { m_bits[static_cast<std::size_t>(y) * m_width + x] = known ? 1 : 0; }

    std::size_t count_known() const;
    std::size_t count_unknown() const { return pixels() - count_known(); }
    std::span<const std::uint8_t> bits() const { return m_bits; }

    void check_matches(const Shape& shape) const;
    bool operator==(const Mask&) const = default;

private:
    int m_height = 0;
    int m_width = 0;
    std::vector<std::uint8_t> m_bits;
};

enum class Region { known, unknown };

// Per-channel normalized histogram over B uniform bins on [-1, 1].
struct Histogram {
    int bins = 0;
    int channels = 0;
    double delta = 0.0;
    std::vector<double> probs;  // channels x bins

    double prob(int channel, int bin) const { return probs[static_cast<std::size_t>(channel) * bins + bin]; }
    std::span<const double> channel(int c) const {
        return std::span<const double>(probs).subspan(static_cast<std::size_t>(c) * bins, bins);
    }
};

int histogram_bin(double value, int bins);

// Raw counts are normalized, floored by additive delta and renormalized.
Histogram histogram(const PixelGrid& x, const Mask& m, Region select, int bins, double delta);
Histogram normalize_counts(std::vector<double> counts, int bins, int channels, double delta);

// m * a + (1 - m) * b, pixel values copied exactly.
PixelGrid compose(const PixelGrid& a, const PixelGrid& b, const Mask& m);

// Splittable 64-bit stream. Normal draws use Box-Muller over the engine's
// own bits so outputs do not depend on the standard library's distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return m_seed; }
    std::uint64_t next_u64() { return m_engine(); }
    double uniform();  // [0, 1)
    double normal();
    std::size_t uniform_index(std::size_t n);
    // Independent child stream; does not advance this stream.
    Rng split(std::uint64_t stream) const;

    bool operator==(const Rng&) const = default;

private:
    std::uint64_t m_seed;
    std::mt19937_64 m_engine;
    bool m_has_spare = false;
    double m_spare = 0.0;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

PixelGrid gaussian_noise(const Shape& shape, Rng& rng);

// Known-region / unknown-region values of one channel, in pixel order.
std::vector<double> region_values(const PixelGrid& x, const Mask& m, Region select, int channel);

}  // namespace isdiff
