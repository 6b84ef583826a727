#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "isdiff/core.hpp"
#include "isdiff/gmm.hpp"
#include "isdiff/schedule.hpp"

namespace isdiff {

// Noise predictor standing in for a pretrained network.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual PixelGrid predict_eps(const PixelGrid& x_t, int t) const = 0;
};

// Mixture over C-dimensional pixel values with diagonal covariances.
struct DiagonalMixture {
    std::vector<double> weights;
    std::vector<std::vector<double>> means;      // K x C
    std::vector<std::vector<double>> variances;  // K x C

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
    void validate() const;

    GmmModel to_gmm() const;
    static DiagonalMixture from_gmm(const GmmModel& g);  // keeps covariance diagonals
};

enum class MixtureLayout {
    // every pixel drawn independently from the mixture
    per_pixel,
    // one color c drawn from the mixture for the whole image, plus i.i.d.
    // N(0, pixel_variance) per-pixel deviations
    shared_color,
};

// Exact posterior-mean denoiser for a known mixture data model.
class AnalyticGmmOracle final : public Denoiser {
public:
    AnalyticGmmOracle(DiagonalMixture mixture, const NoiseSchedule& schedule,
                      MixtureLayout layout = MixtureLayout::per_pixel, double pixel_variance = 0.0);

    PixelGrid predict_eps(const PixelGrid& x_t, int t) const override;
    // E[x0 | x_t]
    PixelGrid posterior_mean(const PixelGrid& x_t, int t) const;
    // Posterior component probabilities of one C-dim observation at timestep t
    // (per-pixel layout).
    std::vector<double> responsibilities(std::span<const double> v, int t) const;

    const DiagonalMixture& mixture() const { return m_mixture; }
    MixtureLayout layout() const { return m_layout; }
    double pixel_variance() const { return m_pixel_variance; }

private:
    void posterior_point(std::span<const double> v, double signal, double noise_var, std::span<double> out) const;

    DiagonalMixture m_mixture;
    const NoiseSchedule* m_schedule;
    MixtureLayout m_layout;
    double m_pixel_variance;
};

// Predicts a clean estimate equal to `value` everywhere.
class ConstantFillOracle final : public Denoiser {
public:
    ConstantFillOracle(const NoiseSchedule& schedule, double value) : m_schedule(&schedule), m_value(value) {}

    PixelGrid predict_eps(const PixelGrid& x_t, int t) const override;

private:
    const NoiseSchedule* m_schedule;
    double m_value;
};

// Fully connected eps-predictor: [x_t, time embedding] -> hidden -> hidden -> eps.
// SiLU activations, fp64 parameters.
class MlpDenoiser final : public Denoiser {
public:
    struct Layout {
        int data_dim = 0;
        int hidden = 128;
        int embed_dim = 16;
        bool operator==(const Layout&) const = default;
    };

    MlpDenoiser(Layout layout, Shape shape);

    const Layout& layout() const { return m_layout; }
    const Shape& shape() const { return m_shape; }
    std::size_t parameter_count() const { return m_params.size(); }
    std::span<double> parameters() { return m_params; }
    std::span<const double> parameters() const { return m_params; }

    // Named parameter tensors, in storage order.
    struct Tensor {
        const char* name;
        std::size_t offset;
        std::size_t size;
    };
    std::vector<Tensor> tensors() const;

    void init_random(Rng& rng);

    std::vector<double> forward(std::span<const double> x_t, int t) const;
    PixelGrid predict_eps(const PixelGrid& x_t, int t) const override;

    bool operator==(const MlpDenoiser& o) const {
        return m_layout == o.m_layout && m_shape == o.m_shape && m_params == o.m_params;
    }

private:
    Layout m_layout;
    Shape m_shape;
    std::vector<double> m_params;
};

std::vector<double> time_embedding(int t, int dim);

struct TrainingExample {
    std::vector<double> x0;
    int t = 1;
    std::vector<double> eps;
};

// Mean over batch and elements of (eps_hat - eps)^2 with x_t = q_sample(x0, t, eps).
double mlp_loss(const MlpDenoiser& d, std::span<const TrainingExample> batch, const NoiseSchedule& s);
// Loss and its gradient with respect to every parameter (hand-written backprop).
double mlp_loss_and_gradient(const MlpDenoiser& d, std::span<const TrainingExample> batch, const NoiseSchedule& s,
                             std::vector<double>& grad);
// One SGD step; returns the loss before the step.
double mlp_train_step(MlpDenoiser& d, std::span<const TrainingExample> batch, const NoiseSchedule& s, double lr);

// Little-endian: u32 magic, u32 data_dim, u32 hidden, u32 embed_dim, then fp64
// parameters. Shape is not stored; the loader takes it from the caller.
void save_mlp(const MlpDenoiser& d, const std::filesystem::path& path);
MlpDenoiser load_mlp(const std::filesystem::path& path, Shape shape);

}  // namespace isdiff
