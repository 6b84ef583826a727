#include "isdiff/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace isdiff {

namespace {

constexpr double log_two_pi = 1.8378770664093454835606594728112;

Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& cov, double floor) {
    const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) {
        throw Error(ErrorCode::numerical, "covariance eigendecomposition failed");
    }
    Eigen::VectorXd values = eig.eigenvalues().cwiseMax(floor);
    if (!values.allFinite()) {
        throw Error(ErrorCode::numerical, "non-finite covariance");
    }
    if ((eig.eigenvalues().array() >= floor).all()) {
        return sym;
    }
    Eigen::MatrixXd out = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

}  // namespace

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
    const double top = v.maxCoeff();
    if (!std::isfinite(top)) {
        return top;
    }
    return top + std::log((v.array() - top).exp().sum());
}

GmmModel::GmmModel(std::vector<double> weights, std::vector<Eigen::VectorXd> means, std::vector<Eigen::MatrixXd> covariances)
    : m_weights(std::move(weights)), m_means(std::move(means)), m_covs(std::move(covariances)) {
    if (m_weights.empty() || m_weights.size() != m_means.size() || m_weights.size() != m_covs.size()) {
        throw Error(ErrorCode::parameter, "mixture needs matching non-empty weights, means and covariances");
    }
    const auto d = m_means.front().size();
    for (std::size_t k = 0; k < m_weights.size(); ++k) {
        if (m_means[k].size() != d || m_covs[k].rows() != d || m_covs[k].cols() != d) {
            throw Error(ErrorCode::dimension, "mixture component dimensions disagree");
        }
        if (!(m_weights[k] >= 0.0)) {
            throw Error(ErrorCode::parameter, "mixture weights must be nonnegative");
        }
    }
    factorize();
}

void GmmModel::factorize() {
    m_chol.clear();
    m_log_norm.clear();
    for (const auto& cov : m_covs) {
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorCode::factorization, "covariance is not positive definite");
        }
        Eigen::MatrixXd l = llt.matrixL();
        const double log_det = 2.0 * l.diagonal().array().log().sum();
        m_chol.push_back(std::move(l));
        m_log_norm.push_back(-0.5 * (static_cast<double>(cov.rows()) * log_two_pi + log_det));
    }
}

void GmmModel::component_log_densities(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const {
    for (int k = 0; k < components(); ++k) {
        const Eigen::VectorXd z = m_chol[k].triangularView<Eigen::Lower>().solve(x - m_means[k]);
        const double lw = m_weights[k] > 0.0 ? std::log(m_weights[k]) : -std::numeric_limits<double>::infinity();
        out[k] = lw + m_log_norm[k] - 0.5 * z.squaredNorm();
    }
}

void GmmModel::component_log_densities(const PointSet& points, Eigen::MatrixXd& out) const {
    out.resize(points.rows(), components());
    for (int k = 0; k < components(); ++k) {
        Eigen::MatrixXd centered = (points.rowwise() - m_means[k].transpose()).transpose();
        m_chol[k].triangularView<Eigen::Lower>().solveInPlace(centered);
        const double lw = m_weights[k] > 0.0 ? std::log(m_weights[k]) : -std::numeric_limits<double>::infinity();
        out.col(k) = (lw + m_log_norm[k]) - 0.5 * centered.colwise().squaredNorm().transpose().array();
    }
}

double GmmModel::log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::VectorXd terms(components());
    component_log_densities(x, terms);
    return log_sum_exp(terms);
}

GmmModel GmmModel::standard_normal(int dim) {
    return GmmModel({1.0}, {Eigen::VectorXd::Zero(dim)}, {Eigen::MatrixXd::Identity(dim, dim)});
}

void EmConfig::validate() const {
    if (components < 1) {
        throw Error(ErrorCode::parameter, "EM needs at least one component");
    }
    if (!(variance_floor > 0.0)) {
        throw Error(ErrorCode::parameter, "variance floor must be positive");
    }
    if (max_iters < 1 || max_points < 1 || !(tolerance >= 0.0)) {
        throw Error(ErrorCode::parameter, "invalid EM iteration settings");
    }
}

namespace {

PointSet subsample(const PointSet& points, std::size_t limit, Rng& rng) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (n <= limit) {
        return points;
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < limit; ++i) {
        std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
    }
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(limit));
    PointSet out(static_cast<Eigen::Index>(limit), points.cols());
    for (std::size_t i = 0; i < limit; ++i) {
        out.row(static_cast<Eigen::Index>(i)) = points.row(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

// Farthest-point style seeding: each new center drawn with probability
// proportional to the squared distance to the nearest chosen center.
std::vector<Eigen::VectorXd> seed_centers(const PointSet& x, int k, Rng& rng) {
    const Eigen::Index n = x.rows();
    std::vector<Eigen::VectorXd> centers;
    centers.push_back(x.row(static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n)))).transpose());
    Eigen::VectorXd d2 = (x.rowwise() - centers.back().transpose()).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < k) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            const double u = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > u) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n)));
        }
        centers.push_back(x.row(pick).transpose());
        d2 = d2.cwiseMin((x.rowwise() - centers.back().transpose()).rowwise().squaredNorm());
    }
    return centers;
}

Eigen::MatrixXd weighted_covariance(const PointSet& x, const Eigen::VectorXd& w, const Eigen::VectorXd& mean, double mass) {
    const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
    return (centered.transpose() * w.asDiagonal() * centered) / mass;
}

struct MStepResult {
    GmmModel model;
    bool reseeded = false;
};

// resp: N x K responsibilities; worst: index of the worst-explained point.
MStepResult m_step(const PointSet& x, const Eigen::MatrixXd& resp, const EmConfig& cfg, Eigen::Index worst,
                   const Eigen::MatrixXd& global_cov) {
    const int k = static_cast<int>(resp.cols());
    const double empty_mass = 1e-3;
    std::vector<double> weights(k);
    std::vector<Eigen::VectorXd> means(k);
    std::vector<Eigen::MatrixXd> covs(k);
    bool reseeded = false;
    for (int j = 0; j < k; ++j) {
        const Eigen::VectorXd w = resp.col(j);
        const double mass = w.sum();
        if (mass < empty_mass) {
            reseeded = true;
            weights[j] = 1.0;
            means[j] = x.row(worst).transpose();
            covs[j] = floor_eigenvalues(global_cov, cfg.variance_floor);
            continue;
        }
        weights[j] = mass;
        means[j] = (x.transpose() * w) / mass;
        covs[j] = floor_eigenvalues(weighted_covariance(x, w, means[j], mass), cfg.variance_floor);
    }
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (auto& w : weights) {
        w /= total;
    }
    return {GmmModel(std::move(weights), std::move(means), std::move(covs)), reseeded};
}

// Responsibilities and total log-likelihood; also reports the point with the
// lowest mixture density.
double e_step(const GmmModel& g, const PointSet& x, Eigen::MatrixXd& resp, Eigen::Index& worst) {
    Eigen::MatrixXd terms;
    g.component_log_densities(x, terms);
    const Eigen::VectorXd peak = terms.rowwise().maxCoeff();
    if (!peak.allFinite()) {
        throw Error(ErrorCode::numerical, "non-finite mixture log-likelihood");
    }
    resp = (terms.colwise() - peak).array().exp().matrix();
    const Eigen::ArrayXd sums = resp.rowwise().sum().array();
    resp.array().colwise() /= sums;
    const Eigen::VectorXd lse = peak.array() + sums.log();
    if (!lse.allFinite()) {
        throw Error(ErrorCode::numerical, "non-finite mixture log-likelihood");
    }
    lse.minCoeff(&worst);
    return lse.sum();
}

}  // namespace

EmTrace fit_em_trace(const PointSet& all_points, const EmConfig& cfg) {
    cfg.validate();
    if (all_points.rows() < cfg.components) {
        throw Error(ErrorCode::degenerate_input, "EM needs at least K=" + std::to_string(cfg.components) +
                                                     " points, got " + std::to_string(all_points.rows()));
    }
    if (all_points.cols() < 1) {
        throw Error(ErrorCode::dimension, "points must have at least one coordinate");
    }
    if (!all_points.allFinite()) {
        throw Error(ErrorCode::numerical, "non-finite input points");
    }
    Rng rng(cfg.seed);
    const PointSet x = subsample(all_points, cfg.max_points, rng);
    const Eigen::Index n = x.rows();
    const int k = cfg.components;

    const Eigen::VectorXd global_mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd global_cov =
        weighted_covariance(x, Eigen::VectorXd::Ones(n), global_mean, static_cast<double>(n));

    // hard assignment to the seeded centers gives the first parameter set
    const auto centers = seed_centers(x, k, rng);
    Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            const double d = (x.row(i).transpose() - centers[j]).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        resp(i, best) = 1.0;
    }
    // an empty hard cluster is re-seeded at its own center
    Eigen::Index worst = 0;
    EmTrace trace;
    {
        std::vector<double> weights(k);
        std::vector<Eigen::VectorXd> means(k);
        std::vector<Eigen::MatrixXd> covs(k);
        for (int j = 0; j < k; ++j) {
            const Eigen::VectorXd w = resp.col(j);
            const double mass = w.sum();
            if (mass < 1.0) {
                weights[j] = 1.0;
                means[j] = centers[j];
                covs[j] = floor_eigenvalues(global_cov, cfg.variance_floor);
            } else {
                weights[j] = mass;
                means[j] = (x.transpose() * w) / mass;
                covs[j] = floor_eigenvalues(weighted_covariance(x, w, means[j], mass), cfg.variance_floor);
            }
        }
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        for (auto& w : weights) {
            w /= total;
        }
        trace.model = GmmModel(std::move(weights), std::move(means), std::move(covs));
    }

    double ll = e_step(trace.model, x, resp, worst);
    trace.log_likelihood.push_back(ll);
    trace.reseeded.push_back(false);
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        auto next = m_step(x, resp, cfg, worst, global_cov);
        const double next_ll = e_step(next.model, x, resp, worst);
        trace.model = std::move(next.model);
        trace.log_likelihood.push_back(next_ll);
        trace.reseeded.push_back(next.reseeded);
        trace.iterations = iter + 1;
        const double gain = (next_ll - ll) / static_cast<double>(n);
        ll = next_ll;
        if (!next.reseeded && gain < cfg.tolerance) {
            trace.converged = true;
            break;
        }
    }
    return trace;
}

GmmModel fit_em(const PointSet& points, const EmConfig& cfg) {
    return fit_em_trace(points, cfg).model;
}

int gmm_draw(const GmmModel& g, Rng& rng, Eigen::Ref<Eigen::VectorXd> out) {
    const double u = rng.uniform();
    double acc = 0.0;
    int k = g.components() - 1;
    for (int j = 0; j < g.components(); ++j) {
        acc += g.weight(j);
        if (u < acc) {
            k = j;
            break;
        }
    }
    Eigen::VectorXd z(g.dim());
    for (int d = 0; d < g.dim(); ++d) {
        z[d] = rng.normal();
    }
    out = g.mean(k) + g.cholesky(k) * z;
    return k;
}

PointSet gmm_sample(const GmmModel& g, std::size_t n, Rng& rng) {
    if (n < 1) {
        throw Error(ErrorCode::parameter, "sample count must be at least 1");
    }
    PointSet out(static_cast<Eigen::Index>(n), g.dim());
    Eigen::VectorXd point(g.dim());
    for (std::size_t i = 0; i < n; ++i) {
        gmm_draw(g, rng, point);
        out.row(static_cast<Eigen::Index>(i)) = point.transpose();
    }
    return out;
}

double gmm_log_likelihood(const GmmModel& g, const PointSet& points) {
    if (points.rows() < 1) {
        throw Error(ErrorCode::empty_region, "log-likelihood of an empty point set");
    }
    if (points.cols() != g.dim()) {
        throw Error(ErrorCode::dimension, "point dimension does not match the mixture");
    }
    double ll = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        ll += g.log_density(points.row(i).transpose());
    }
    return ll;
}

KlEstimate kl_to(const GmmModel& g, const GmmModel& reference, std::size_t n_mc, Rng& rng) {
    if (g.dim() != reference.dim()) {
        throw Error(ErrorCode::dimension, "KL between mixtures of different dimension");
    }
    if (n_mc < 2) {
        throw Error(ErrorCode::parameter, "KL estimate needs at least 2 samples");
    }
    Eigen::VectorXd point(g.dim());
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < n_mc; ++i) {
        gmm_draw(g, rng, point);
        const double term = g.log_density(point) - reference.log_density(point);
        sum += term;
        sum_sq += term * term;
    }
    const double n = static_cast<double>(n_mc);
    const double mean = sum / n;
    const double var = std::max(sum_sq / n - mean * mean, 0.0) * n / (n - 1.0);
    return {mean, std::sqrt(var / n)};
}

void write_gmm(std::ostream& os, const GmmModel& g) {
    os << g.components() << ' ' << g.dim() << '\n';
    os << std::setprecision(17);
    for (int k = 0; k < g.components(); ++k) {
        os << g.weight(k);
        for (int d = 0; d < g.dim(); ++d) {
            os << ' ' << g.mean(k)[d];
        }
        for (int r = 0; r < g.dim(); ++r) {
            for (int c = 0; c < g.dim(); ++c) {
                os << ' ' << g.covariance(k)(r, c);
            }
        }
        os << '\n';
    }
}

GmmModel read_gmm(std::istream& is) {
    int k = 0;
    int dim = 0;
    if (!(is >> k >> dim) || k < 1 || dim < 1) {
        throw Error(ErrorCode::io, "malformed mixture table header");
    }
    std::vector<double> weights(k);
    std::vector<Eigen::VectorXd> means(k, Eigen::VectorXd(dim));
    std::vector<Eigen::MatrixXd> covs(k, Eigen::MatrixXd(dim, dim));
    for (int j = 0; j < k; ++j) {
        is >> weights[j];
        for (int d = 0; d < dim; ++d) {
            is >> means[j][d];
        }
        for (int r = 0; r < dim; ++r) {
            for (int c = 0; c < dim; ++c) {
                is >> covs[j](r, c);
            }
        }
    }
    if (!is) {
        throw Error(ErrorCode::io, "truncated mixture table");
    }
    return GmmModel(std::move(weights), std::move(means), std::move(covs));
}

PointSet region_points(const PixelGrid& x, const Mask& m, Region select) {
    m.check_matches(x.shape());
    const bool want_known = select == Region::known;
    const std::size_t count = want_known ? m.count_known() : m.count_unknown();
    PointSet out(static_cast<Eigen::Index>(count), x.channels());
    Eigen::Index row = 0;
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        if (m.known(p) != want_known) {
            continue;
        }
        auto px = x.pixel(p);
        for (int c = 0; c < x.channels(); ++c) {
            out(row, c) = px[c];
        }
        ++row;
    }
    return out;
}

}  // namespace isdiff
