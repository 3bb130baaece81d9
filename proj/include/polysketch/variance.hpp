#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "polysketch/errors.hpp"

namespace polysketch {

/// Weight-distribution moments entering the variance formulas:
/// q = E[Re(z)^2] of a unit-second-moment weight, m4 = E[|z|^4].
struct SketchMoments {
  double q;
  double m4;

  SketchMoments(double q_, double m4_) : q(q_), m4(m4_) {
    if (q < 0.0 || q > 1.0) throw ConfigError("SketchMoments: q must lie in [0,1]");
    if (m4 < 1.0) throw ConfigError("SketchMoments: m4 must be >= 1 (Jensen)");
  }

  static SketchMoments rademacher_real() { return {1.0, 1.0}; }
  static SketchMoments gaussian_real() { return {1.0, 3.0}; }
  static SketchMoments rademacher_complex() { return {0.5, 1.0}; }
  static SketchMoments gaussian_complex() { return {0.5, 2.0}; }
};

/// Per-degree variance/covariance constants of a blocked structured sketch.
struct VarianceTerms {
  double v_n;          // single-feature variance
  double cov_n;        // within-block covariance, |cov_n| <= v_n
  std::int64_t c_pairs;  // same-block index pairs (l != l')
};

namespace detail {

inline void check_same_dim(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                           const char* where) {
  if (x.size() != y.size())
    throw DimensionError(std::string(where) + ": dimension mismatch (" +
                         std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
}

inline double ipow(double base, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= base;
  return r;
}

}  // namespace detail

/// Single-feature variance of the unstructured polynomial sketch of degree n,
/// for any weight law with moments (q, m4):
///   (m4*sum x_k^2 y_k^2 + |x|^2|y|^2 - sum x_k^2 y_k^2
///      + ((2q-1)^2 + 1)((x'y)^2 - sum x_k^2 y_k^2))^n - (x'y)^{2n}.
/// With D features, divide by D.
inline double var_unstructured(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int n,
                               const SketchMoments& moments) {
  detail::check_same_dim(x, y, "var_unstructured");
  if (n < 1) throw ConfigError("var_unstructured: degree must be >= 1");
  // m4 = 1 with unit second moment forces |z| = 1 a.s.; in one dimension the
  // kernel estimate is then deterministic and the variance exactly zero.
  if (x.size() == 1 && moments.m4 == 1.0) return 0.0;
  const double sq = (x.array().square() * y.array().square()).sum();
  const double norms = x.squaredNorm() * y.squaredNorm();
  const double dot = x.dot(y);
  const double twoq1 = 2.0 * moments.q - 1.0;
  const double base = moments.m4 * sq + norms - sq + (twoq1 * twoq1 + 1.0) * (dot * dot - sq);
  const double v = detail::ipow(base, n) - detail::ipow(dot * dot, n);
  return std::max(v, 0.0);
}

/// Scaled variance constant of the Bernstein feature-count bound (m4 = 1 case,
/// normalized by |x|^{2p} |y|^{2p}).
inline double sigma_sq_bound(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int p, double q) {
  detail::check_same_dim(x, y, "sigma_sq_bound");
  const double nx = x.squaredNorm();
  const double ny = y.squaredNorm();
  if (nx <= 0.0 || ny <= 0.0) throw ConfigError("sigma_sq_bound: zero-norm input");
  const double v = var_unstructured(x, y, p, SketchMoments(q, 1.0));
  return v / detail::ipow(nx * ny, p);
}

/// Smallest D with D >= 2*(2/(3 eps) + sigma^2/eps^2)*log(2/delta).
inline std::int64_t bernstein_feature_count(double sigma_sq, double eps, double delta) {
  if (eps <= 0.0 || delta <= 0.0) throw ConfigError("bernstein_feature_count: eps, delta must be > 0");
  if (delta >= 2.0) throw ConfigError("bernstein_feature_count: delta must be < 2");
  const double bound = 2.0 * (2.0 / (3.0 * eps) + sigma_sq / (eps * eps)) * std::log(2.0 / delta);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(bound)));
}

/// Number of same-block index pairs l != l' in a blocked sketch of D features
/// over blocks of size d: floor(D/d) d(d-1) + mod(D,d)(mod(D,d)-1).
inline std::int64_t c_pairs(std::int64_t D, std::int64_t d) {
  if (D < 1 || d < 1) throw ConfigError("c_pairs: D, d must be >= 1");
  const std::int64_t r = D % d;
  return (D / d) * d * (d - 1) + r * (r - 1);
}

/// Within-block covariance Cov_q^{(n)} = ((x'y)^2 - V_q^{(1)}/(d-1))^n - (x'y)^{2n}.
inline double cov_tensor_srht(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int n,
                              std::int64_t d, const SketchMoments& moments) {
  if (d < 2) throw DimensionError("cov_tensor_srht: requires d >= 2");
  const double v1 = var_unstructured(x, y, 1, moments);
  const double dot = x.dot(y);
  const double inner = dot * dot - v1 / static_cast<double>(d - 1);
  return detail::ipow(inner, n) - detail::ipow(dot * dot, n);
}

/// Variance of the TensorSRHT approximate kernel with D features in (padded)
/// dimension d: V_q^{(n)}/D + (c(D,d)/D^2) Cov_q^{(n)}.
inline double var_tensor_srht(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int n,
                              std::int64_t D, std::int64_t d, const SketchMoments& moments) {
  detail::check_same_dim(x, y, "var_tensor_srht");
  if (d < 2) throw DimensionError("var_tensor_srht: requires d >= 2");
  if (D < 1) throw ConfigError("var_tensor_srht: D must be >= 1");
  const double vn = var_unstructured(x, y, n, moments);
  const double cov = cov_tensor_srht(x, y, n, d, moments);
  const double Dd = static_cast<double>(D);
  const double v = vn / Dd + (static_cast<double>(c_pairs(D, d)) / (Dd * Dd)) * cov;
  return std::max(v, 0.0);
}

inline VarianceTerms variance_terms(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int n,
                                    std::int64_t D, std::int64_t d, const SketchMoments& moments) {
  return VarianceTerms{var_unstructured(x, y, n, moments), cov_tensor_srht(x, y, n, d, moments),
                       c_pairs(D, d)};
}

/// Convex surrogate of var_tensor_srht, exact at D in {1..d} and D in {kd}
/// when Cov <= 0:
///   (V + (d-1)Cov)/D          if Cov > 0 or D > d,
///   (V - Cov)/D + Cov         otherwise.
inline double surrogate_var_tensor_srht(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int n,
                                        std::int64_t D, std::int64_t d,
                                        const SketchMoments& moments) {
  detail::check_same_dim(x, y, "surrogate_var_tensor_srht");
  if (d < 2) throw DimensionError("surrogate_var_tensor_srht: requires d >= 2");
  if (D < 1) throw ConfigError("surrogate_var_tensor_srht: D must be >= 1");
  const double vn = var_unstructured(x, y, n, moments);
  const double cov = cov_tensor_srht(x, y, n, d, moments);
  const double Dd = static_cast<double>(D);
  if (cov > 0.0 || D > d) return (vn + static_cast<double>(d - 1) * cov) / Dd;
  return (vn - cov) / Dd + cov;
}

}  // namespace polysketch
