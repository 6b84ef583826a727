#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "isdiff/core.hpp"

namespace isdiff {

// One point per row.
using PointSet = Eigen::MatrixXd;

class GmmModel {
public:
    GmmModel() = default;
    GmmModel(std::vector<double> weights, std::vector<Eigen::VectorXd> means, std::vector<Eigen::MatrixXd> covariances);

    int components() const { return static_cast<int>(m_weights.size()); }
    int dim() const { return m_means.empty() ? 0 : static_cast<int>(m_means.front().size()); }
    double weight(int k) const { return m_weights[k]; }
    const Eigen::VectorXd& mean(int k) const { return m_means[k]; }
    const Eigen::MatrixXd& covariance(int k) const { return m_covs[k]; }
    const std::vector<double>& weights() const { return m_weights; }
    const Eigen::MatrixXd& cholesky(int k) const { return m_chol[k]; }

    double log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    // log(w_k) + log N(x; mu_k, Sigma_k) for every k.
    void component_log_densities(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const;
    // Same for every row of `points`; out is N x K.
    void component_log_densities(const PointSet& points, Eigen::MatrixXd& out) const;

    static GmmModel standard_normal(int dim);

private:
    void factorize();

    std::vector<double> m_weights;
    std::vector<Eigen::VectorXd> m_means;
    std::vector<Eigen::MatrixXd> m_covs;
    std::vector<Eigen::MatrixXd> m_chol;  // lower Cholesky factors
    std::vector<double> m_log_norm;       // -0.5 (d log 2pi + log det)
};

struct EmConfig {
    int components = 5;
    int max_iters = 200;
    double tolerance = 1e-8;  // per-point log-likelihood change
    double variance_floor = 1e-4;
    std::uint64_t seed = 0;
    std::size_t max_points = 100000;

    void validate() const;
};

struct EmTrace {
    GmmModel model;
    std::vector<double> log_likelihood;  // after init and after every M-step
    std::vector<bool> reseeded;          // M-step that produced entry i re-seeded a component
    int iterations = 0;
    bool converged = false;
};

EmTrace fit_em_trace(const PointSet& points, const EmConfig& cfg);
GmmModel fit_em(const PointSet& points, const EmConfig& cfg);

PointSet gmm_sample(const GmmModel& g, std::size_t n, Rng& rng);
// Component index and point for one draw.
int gmm_draw(const GmmModel& g, Rng& rng, Eigen::Ref<Eigen::VectorXd> out);

double gmm_log_likelihood(const GmmModel& g, const PointSet& points);

struct KlEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

// Monte-Carlo KL(g || reference) with samples drawn from g.
KlEstimate kl_to(const GmmModel& g, const GmmModel& reference, std::size_t n_mc, Rng& rng);

// Plain-text table: header "K C", then one line per component with the weight,
// mean entries and row-major covariance entries.
void write_gmm(std::ostream& os, const GmmModel& g);
GmmModel read_gmm(std::istream& is);

// Pixel values of the selected region, one row per pixel.
PointSet region_points(const PixelGrid& x, const Mask& m, Region select);

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v);

}  // namespace isdiff
