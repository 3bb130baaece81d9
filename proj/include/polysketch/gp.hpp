#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <functional>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "polysketch/errors.hpp"
#include "polysketch/rng.hpp"
#include "polysketch/sketches.hpp"

namespace polysketch {

/// Heteroscedastic observation noise; regression uses a constant vector.
struct NoiseModel {
  Eigen::VectorXd variances;

  static NoiseModel homoscedastic(double variance, Eigen::Index n) {
    NoiseModel m;
    m.variances = Eigen::VectorXd::Constant(n, variance);
    m.validate();
    return m;
  }

  void validate() const {
    if (variances.size() < 1) throw ConfigError("NoiseModel: empty noise vector");
    if ((variances.array() <= 0.0).any())
      throw ConfigError("NoiseModel: all variances must be strictly positive");
  }
};

struct PosteriorSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

/// Feature-space GP posterior around the D x D system
/// B = Phi^H diag(sigma^-2) Phi + I_D, factorized once; never forms the
/// N x N kernel matrix.
class GPFit {
 public:
  GPFit(const FeatureMatrix& features, const Eigen::VectorXd& y, const NoiseModel& noise) {
    noise.validate();
    if (features.rows() != y.size() || features.rows() != noise.variances.size())
      throw DimensionError("GPFit: rows of features, y, and noise must match");
    is_real_ = features.is_real;
    const Eigen::Index D = features.cols();
    const Eigen::VectorXcd inv_var =
        noise.variances.cwiseInverse().cast<std::complex<double>>();
    Eigen::MatrixXcd B = features.values.adjoint() * inv_var.asDiagonal() * features.values;
    B.diagonal().array() += 1.0;

    llt_.compute(B);
    if (llt_.info() != Eigen::Success) {
      const double base = 1e-10 * B.real().trace() / static_cast<double>(D);
      double jitter = base;
      bool ok = false;
      for (int attempt = 0; attempt < 3; ++attempt) {
        Eigen::MatrixXcd Bj = B;
        Bj.diagonal().array() += jitter;
        llt_.compute(Bj);
        if (llt_.info() == Eigen::Success) {
          ok = true;
          break;
        }
        jitter *= 10.0;
      }
      if (!ok)
        throw NumericalError("GPFit: Cholesky of B failed after jitter escalation (D=" +
                             std::to_string(D) + ", trace=" + std::to_string(B.real().trace()) +
                             ", last jitter=" + std::to_string(jitter / 10.0) + ")");
    }
    const Eigen::VectorXcd weighted_y =
        (noise.variances.cwiseInverse().array() * y.array()).matrix().cast<std::complex<double>>();
    coef_ = llt_.solve(features.values.adjoint() * weighted_y);
  }

  bool is_real() const { return is_real_; }
  Eigen::Index feature_dim() const { return coef_.size(); }
  const Eigen::VectorXcd& coefficients() const { return coef_; }

  void set_bias_correction(std::function<double(const Eigen::VectorXd&)> fn) {
    bias_correction_ = std::move(fn);
  }
  bool has_bias_correction() const { return static_cast<bool>(bias_correction_); }

  /// Posterior mean Re{Phi* coef} and variance Re{Phi*(x)' B^-1 conj(Phi*(x))}
  /// per test point. When a bias correction is set, X_star must carry the raw
  /// inputs so the correction can be evaluated.
  PosteriorSummary predict(const FeatureMatrix& features_star,
                           const Eigen::MatrixXd* X_star = nullptr) const {
    if (features_star.cols() != coef_.size())
      throw DimensionError("GPFit::predict: feature width mismatch");
    const Eigen::Index M = features_star.rows();
    PosteriorSummary out;
    out.mean = (features_star.values * coef_).real();
    const Eigen::MatrixXcd solved = llt_.solve(features_star.values.adjoint());
    out.variance.resize(M);
    for (Eigen::Index j = 0; j < M; ++j) {
      const std::complex<double> v = features_star.values.row(j) * solved.col(j);
      out.variance[j] = std::max(v.real(), 0.0);
    }
    if (bias_correction_) {
      if (X_star == nullptr)
        throw ConfigError("GPFit::predict: bias correction set but no raw inputs given");
      if (X_star->rows() != M) throw DimensionError("GPFit::predict: X_star row mismatch");
      for (Eigen::Index j = 0; j < M; ++j)
        out.variance[j] += std::max(bias_correction_(X_star->row(j).transpose()), 0.0);
    }
    return out;
  }

 private:
  Eigen::LLT<Eigen::MatrixXcd> llt_;
  Eigen::VectorXcd coef_;
  bool is_real_ = false;
  std::function<double(const Eigen::VectorXd&)> bias_correction_;
};

inline GPFit fit_gp(const FeatureMatrix& features, const Eigen::VectorXd& y,
                    const NoiseModel& noise) {
  return GPFit(features, y, noise);
}

inline PosteriorSummary predict(const GPFit& fit, const FeatureMatrix& features_star,
                                const Eigen::MatrixXd* X_star = nullptr) {
  return fit.predict(features_star, X_star);
}

/// Dense O(N^3) posterior from explicit kernel matrices; reference oracle for
/// the primal path and the exact side of the KL metric.
inline PosteriorSummary exact_gp_reference(const Eigen::MatrixXcd& K,
                                           const Eigen::MatrixXcd& k_star,
                                           const Eigen::VectorXd& k_star_star_diag,
                                           const Eigen::VectorXd& y, const NoiseModel& noise) {
  noise.validate();
  const Eigen::Index N = K.rows();
  if (K.cols() != N) throw DimensionError("exact_gp_reference: K must be square");
  if (y.size() != N || noise.variances.size() != N)
    throw DimensionError("exact_gp_reference: y/noise size mismatch");
  if (k_star.cols() != N || k_star.rows() != k_star_star_diag.size())
    throw DimensionError("exact_gp_reference: k_star shape mismatch");
  Eigen::MatrixXcd A = K;
  A.diagonal() += noise.variances.cast<std::complex<double>>();
  Eigen::LDLT<Eigen::MatrixXcd> ldlt(A);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("exact_gp_reference: factorization failed");
  const Eigen::VectorXcd alpha = ldlt.solve(y.cast<std::complex<double>>());
  PosteriorSummary out;
  out.mean = (k_star * alpha).real();
  const Eigen::MatrixXcd solved = ldlt.solve(k_star.adjoint());
  out.variance.resize(k_star.rows());
  for (Eigen::Index j = 0; j < k_star.rows(); ++j) {
    const std::complex<double> v = k_star.row(j) * solved.col(j);
    out.variance[j] = std::max(k_star_star_diag[j] - v.real(), 0.0);
  }
  return out;
}

inline PosteriorSummary exact_gp_reference(const Eigen::MatrixXd& K, const Eigen::MatrixXd& k_star,
                                           const Eigen::VectorXd& k_star_star_diag,
                                           const Eigen::VectorXd& y, const NoiseModel& noise) {
  const Eigen::MatrixXcd Kc = K.cast<std::complex<double>>();
  const Eigen::MatrixXcd ksc = k_star.cast<std::complex<double>>();
  return exact_gp_reference(Kc, ksc, k_star_star_diag, y, noise);
}

/// Log-normal moment-matched regression targets for one-hot labels:
/// sigma^2 = log((y + alpha)^-1 + 1), y~ = log(y + alpha) - sigma^2/2.
struct DirichletTargets {
  Eigen::MatrixXd y_transformed;  // N x C
  Eigen::MatrixXd variances;      // N x C
};

inline DirichletTargets dirichlet_transform(const Eigen::MatrixXd& one_hot, double alpha) {
  if (alpha <= 0.0) throw ConfigError("dirichlet_transform: alpha must be > 0");
  const Eigen::Index N = one_hot.rows();
  const Eigen::Index C = one_hot.cols();
  if (C < 2) throw ConfigError("dirichlet_transform: need at least 2 classes");
  for (Eigen::Index i = 0; i < N; ++i) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < C; ++c) {
      const double v = one_hot(i, c);
      if (v != 0.0 && v != 1.0)
        throw ConfigError("dirichlet_transform: row " + std::to_string(i) + " is not one-hot");
      sum += v;
    }
    if (sum != 1.0)
      throw ConfigError("dirichlet_transform: row " + std::to_string(i) + " is not one-hot");
  }
  DirichletTargets t;
  t.y_transformed.resize(N, C);
  t.variances.resize(N, C);
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index c = 0; c < C; ++c) {
      const double ya = one_hot(i, c) + alpha;
      const double s2 = std::log(1.0 / ya + 1.0);
      t.variances(i, c) = s2;
      t.y_transformed(i, c) = std::log(ya) - 0.5 * s2;
    }
  }
  return t;
}

/// Class probabilities by sampling per-class latents and softmaxing,
/// averaged over n_mc draws. Rows are renormalized to sum to one.
inline Eigen::MatrixXd classify(const std::vector<GPFit>& fits, const FeatureMatrix& features_star,
                                int n_mc, RngStream& stream) {
  const auto C = static_cast<Eigen::Index>(fits.size());
  if (C < 2) throw ConfigError("classify: need at least 2 classes");
  if (n_mc < 1) throw ConfigError("classify: n_mc must be >= 1");
  const Eigen::Index M = features_star.rows();
  Eigen::MatrixXd means(M, C), stds(M, C);
  for (Eigen::Index c = 0; c < C; ++c) {
    if (fits[static_cast<std::size_t>(c)].feature_dim() != features_star.cols())
      throw DimensionError("classify: class " + std::to_string(c) + " feature width mismatch");
    const PosteriorSummary s = fits[static_cast<std::size_t>(c)].predict(features_star);
    means.col(c) = s.mean;
    stds.col(c) = s.variance.cwiseSqrt();
  }
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(M, C);
  Eigen::VectorXd z(C);
  for (int t = 0; t < n_mc; ++t) {
    for (Eigen::Index i = 0; i < M; ++i) {
      for (Eigen::Index c = 0; c < C; ++c)
        z[c] = means(i, c) + stds(i, c) * stream.next_gaussian();
      const double zmax = z.maxCoeff();
      const Eigen::ArrayXd e = (z.array() - zmax).exp();
      probs.row(i) += (e / e.sum()).matrix().transpose();
    }
  }
  probs /= static_cast<double>(n_mc);
  for (Eigen::Index i = 0; i < M; ++i) probs.row(i) /= probs.row(i).sum();
  return probs;
}

/// KL( N(mu_a, diag(var_a)) || N(mu_e, diag(var_e)) ) =
/// 1/2 sum_i [ var_e/var_a + log(var_e/var_a) - 1 + (mu_e - mu_a)^2/var_a ].
inline double kl_diag_gaussians(const Eigen::VectorXd& mu_a, const Eigen::VectorXd& var_a,
                                const Eigen::VectorXd& mu_e, const Eigen::VectorXd& var_e) {
  if (mu_a.size() != var_a.size() || mu_a.size() != mu_e.size() || mu_a.size() != var_e.size())
    throw DimensionError("kl_diag_gaussians: length mismatch");
  if ((var_a.array() <= 0.0).any() || (var_e.array() <= 0.0).any())
    throw ConfigError("kl_diag_gaussians: variances must be positive");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu_a.size(); ++i) {
    const double r = var_e[i] / var_a[i];
    const double dm = mu_e[i] - mu_a[i];
    kl += r + std::log(r) - 1.0 + dm * dm / var_a[i];
  }
  return 0.5 * kl;
}

/// Standard selection grids for the label-transform parameter and the
/// regression noise variance. Selection itself is external; these are the
/// preset candidate values.
inline std::vector<double> alpha_grid() {
  std::vector<double> g;
  for (int e = -5; e <= 0; ++e) g.push_back(std::pow(10.0, e));
  return g;
}

inline std::vector<double> noise_variance_grid() {
  std::vector<double> g;
  for (int e = -15; e <= 15; ++e) g.push_back(std::pow(2.0, e));
  return g;
}

/// Regression MNLL: mean of 1/2 log(2 pi (var + noise)) + (y - mu)^2/(2 (var + noise)).
inline double mnll_regression(const PosteriorSummary& summary, const Eigen::VectorXd& y_true,
                              double noise_variance) {
  if (summary.mean.size() != y_true.size())
    throw DimensionError("mnll_regression: length mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < y_true.size(); ++i) {
    const double v = summary.variance[i] + noise_variance;
    const double r = y_true[i] - summary.mean[i];
    total += 0.5 * std::log(2.0 * std::numbers::pi * v) + r * r / (2.0 * v);
  }
  return total / static_cast<double>(y_true.size());
}

/// Classification MNLL: mean of -log p(true class); probabilities clamped at
/// 1e-300 (with a warning) to keep the mean finite.
inline double mnll_classification(const Eigen::MatrixXd& probs, const Eigen::VectorXi& labels) {
  if (probs.rows() != labels.size())
    throw DimensionError("mnll_classification: length mismatch");
  double total = 0.0;
  bool warned = false;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= probs.cols())
      throw ConfigError("mnll_classification: label out of range at row " + std::to_string(i));
    double p = probs(i, labels[i]);
    if (p < 1e-300) {
      if (!warned) {
        std::cerr << "mnll_classification: clamping zero probability at 1e-300\n";
        warned = true;
      }
      p = 1e-300;
    }
    total += -std::log(p);
  }
  return total / static_cast<double>(labels.size());
}

}  // namespace polysketch
