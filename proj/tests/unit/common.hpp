#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bma.hpp"

namespace bma::test {

inline std::string fixture(const std::string& name) { return std::string(BMA_FIXTURE_DIR) + "/" + name; }
inline std::string source(const std::string& name) { return std::string(BMA_SOURCE_DIR) + "/" + name; }

/// Dataset of k studies with effects drawn around `mu`; optional clusters of
/// the given size.
inline Dataset random_dataset(Rng& rng, int k, double mu = 0.2, double tau = 0.1, int cluster_size = 0) {
  std::vector<StudyRecord> recs;
  for (int i = 0; i < k; ++i) {
    StudyRecord r;
    r.id = "s" + std::to_string(i + 1);
    r.se = 0.08 + 0.25 * rng.uniform();
    r.y = mu + tau * rng.normal() + r.se * rng.normal();
    if (cluster_size > 0) r.cluster = "c" + std::to_string(i / cluster_size);
    recs.push_back(r);
  }
  return Dataset(std::move(recs), EffectSizeMeasure::SMD, {});
}

/// Dense multivariate normal log density (Cholesky of the full covariance).
inline double dense_mvn_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::VectorXd e = y - mean;
  const Eigen::VectorXd z = llt.matrixL().solve(e);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(y.size()) * std::log(2.0 * M_PI) + logdet + z.squaredNorm());
}

/// Closed-form log marginal likelihood of a fixed-effect model whose mean
/// coefficients have independent normal priors: y ~ N(X m, V + X S X').
inline double gaussian_log_marginal(const Dataset& data, const Eigen::MatrixXd& X, const Eigen::VectorXd& prior_mean,
                                    const Eigen::VectorXd& prior_sd, double tau = 0.0) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::VectorXd y(n);
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = data.records()[static_cast<std::size_t>(i)].y;
    const double s = data.records()[static_cast<std::size_t>(i)].se;
    V(i, i) = s * s + tau * tau;
  }
  const Eigen::MatrixXd S = prior_sd.array().square().matrix().asDiagonal();
  return dense_mvn_logpdf(y, X * prior_mean, V + X * S * X.transpose());
}

}  // namespace bma::test
