#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "polysketch/errors.hpp"
#include "polysketch/rng.hpp"
#include "polysketch/variance.hpp"

namespace polysketch {

enum class WeightFamily { kGaussian, kRademacher };
enum class Field { kReal, kComplex };

inline SketchMoments moments_for(WeightFamily family, Field field) {
  if (family == WeightFamily::kRademacher)
    return field == Field::kReal ? SketchMoments::rademacher_real()
                                 : SketchMoments::rademacher_complex();
  return field == Field::kReal ? SketchMoments::gaussian_real()
                               : SketchMoments::gaussian_complex();
}

struct SketchSpec {
  WeightFamily family = WeightFamily::kRademacher;
  Field field = Field::kReal;
  int degree = 1;
  Eigen::Index num_features = 1;
  Eigen::Index input_dim = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (degree < 1) throw ConfigError("SketchSpec: degree must be >= 1");
    if (num_features < 1) throw ConfigError("SketchSpec: num_features must be >= 1");
    if (input_dim < 1) throw ConfigError("SketchSpec: input_dim must be >= 1");
  }
};

/// N x D block of features. Real sketches carry exactly-zero imaginary parts
/// and set is_real.
struct FeatureMatrix {
  Eigen::MatrixXcd values;
  bool is_real = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  static FeatureMatrix from_real(Eigen::MatrixXd real) {
    FeatureMatrix fm;
    fm.values = Eigen::MatrixXcd::Zero(real.rows(), real.cols());
    fm.values.real() = std::move(real);
    fm.is_real = true;
    return fm;
  }

  static FeatureMatrix from_complex(Eigen::MatrixXcd vals) {
    FeatureMatrix fm;
    fm.values = std::move(vals);
    fm.is_real = false;
    return fm;
  }

  /// Horizontal concatenation; the result is real iff all parts are.
  static FeatureMatrix hcat(const std::vector<FeatureMatrix>& parts) {
    if (parts.empty()) throw ConfigError("FeatureMatrix::hcat: no parts");
    Eigen::Index total = 0;
    bool all_real = true;
    for (const auto& p : parts) {
      total += p.cols();
      all_real = all_real && p.is_real;
      if (p.rows() != parts.front().rows())
        throw DimensionError("FeatureMatrix::hcat: row count mismatch");
    }
    FeatureMatrix fm;
    fm.values.resize(parts.front().rows(), total);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      fm.values.middleCols(at, p.cols()) = p.values;
      at += p.cols();
    }
    fm.is_real = all_real;
    return fm;
  }
};

/// (x'y + nu)^p, evaluated exactly.
inline double exact_polynomial_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int p,
                                      double nu) {
  detail::check_same_dim(x, y, "exact_polynomial_kernel");
  return detail::ipow(x.dot(y) + nu, p);
}

/// Appends sqrt(nu), reducing the inhomogeneous kernel to the homogeneous one.
inline Eigen::VectorXd augment_inhomogeneous(const Eigen::VectorXd& x, double nu) {
  if (nu < 0.0) throw ConfigError("augment_inhomogeneous: nu must be >= 0");
  Eigen::VectorXd out(x.size() + 1);
  out.head(x.size()) = x;
  out[x.size()] = std::sqrt(nu);
  return out;
}

namespace detail {

inline Eigen::MatrixXcd real_times_complex(const Eigen::MatrixXd& X, const Eigen::MatrixXcd& W) {
  Eigen::MatrixXcd out(X.rows(), W.cols());
  out.real() = X * W.real();
  out.imag() = X * W.imag();
  return out;
}

}  // namespace detail

/// Unstructured polynomial sketch: p x D i.i.d. weight vectors with
/// E[z conj(z)'] = I_d, one stream per (degree index, feature index).
class UnstructuredSketch {
 public:
  explicit UnstructuredSketch(const SketchSpec& spec) : spec_(spec) {
    spec_.validate();
    weights_.reserve(static_cast<std::size_t>(spec_.degree));
    const Eigen::Index d = spec_.input_dim;
    const Eigen::Index D = spec_.num_features;
    for (int i = 0; i < spec_.degree; ++i) {
      Eigen::MatrixXcd Wi = Eigen::MatrixXcd::Zero(d, D);
      for (Eigen::Index l = 0; l < D; ++l) {
        RngStream stream(spec_.seed,
                         static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(D) +
                             static_cast<std::uint64_t>(l));
        if (spec_.field == Field::kReal) {
          Eigen::VectorXd w(d);
          if (spec_.family == WeightFamily::kRademacher) {
            w = sample_rademacher(stream, d);
          } else {
            for (Eigen::Index k = 0; k < d; ++k) w[k] = stream.next_gaussian();
          }
          Wi.col(l).real() = w;
        } else {
          const auto kind = spec_.family == WeightFamily::kRademacher
                                ? ComplexWeightKind::kRademacherRotated
                                : ComplexWeightKind::kGaussianPair;
          Wi.col(l) = sample_complex_weights(kind, stream, d);
        }
      }
      weights_.push_back(std::move(Wi));
    }
  }

  const SketchSpec& spec() const { return spec_; }
  const std::vector<Eigen::MatrixXcd>& weights() const { return weights_; }

  FeatureMatrix apply(const Eigen::MatrixXd& X) const {
    if (X.cols() != spec_.input_dim)
      throw DimensionError("UnstructuredSketch::apply: expected " +
                           std::to_string(spec_.input_dim) + " columns, got " +
                           std::to_string(X.cols()));
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec_.num_features));
    if (spec_.field == Field::kReal) {
      Eigen::MatrixXd prod = Eigen::MatrixXd::Ones(X.rows(), spec_.num_features);
      for (const auto& Wi : weights_) prod.array() *= (X * Wi.real()).array();
      return FeatureMatrix::from_real(prod * scale);
    }
    Eigen::MatrixXcd prod = Eigen::MatrixXcd::Ones(X.rows(), spec_.num_features);
    for (const auto& Wi : weights_) prod.array() *= detail::real_times_complex(X, Wi).array();
    return FeatureMatrix::from_complex(prod * scale);
  }

 private:
  SketchSpec spec_;
  std::vector<Eigen::MatrixXcd> weights_;  // per degree: d x D
};

inline UnstructuredSketch build_unstructured_sketch(const SketchSpec& spec) {
  return UnstructuredSketch(spec);
}

inline FeatureMatrix apply_sketch(const UnstructuredSketch& sk, const Eigen::MatrixXd& X) {
  return sk.apply(X);
}

/// Hermitian inner product of two feature rows: Phi(x)' conj(Phi(y)).
inline std::complex<double> approx_kernel(const Eigen::VectorXcd& phi_x,
                                          const Eigen::VectorXcd& phi_y) {
  if (phi_x.size() != phi_y.size())
    throw DimensionError("approx_kernel: feature length mismatch");
  return (phi_x.array() * phi_y.array().conjugate()).sum();
}

/// Approximate kernel matrix between two feature blocks: A conj(B)'.
inline Eigen::MatrixXcd approx_kernel_matrix(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("approx_kernel_matrix: feature width mismatch");
  return a.values * b.values.adjoint();
}

/// Random Fourier features for the Gaussian kernel exp(-|x-y|^2/(2 l^2)).
/// Real variant: sqrt(2/D) [cos(w_j'x)..., sin(w_j'x)...] with D/2 frequencies;
/// complex variant: sqrt(1/D) exp(i w_j'x) with D frequencies; w ~ N(0, I/l^2).
inline FeatureMatrix rff_features(double length_scale, Eigen::Index D, Eigen::Index d, Field field,
                                  std::uint64_t seed, const Eigen::MatrixXd& X) {
  if (length_scale <= 0.0) throw ConfigError("rff_features: length_scale must be > 0");
  if (D < 1 || d < 1) throw ConfigError("rff_features: D, d must be >= 1");
  if (X.cols() != d) throw DimensionError("rff_features: expected " + std::to_string(d) +
                                          " columns, got " + std::to_string(X.cols()));
  if (field == Field::kReal && D % 2 != 0)
    throw ConfigError("rff_features: real variant requires even D");
  const Eigen::Index num_freq = field == Field::kReal ? D / 2 : D;
  Eigen::MatrixXd omega(d, num_freq);
  for (Eigen::Index j = 0; j < num_freq; ++j) {
    RngStream stream(seed, static_cast<std::uint64_t>(j));
    for (Eigen::Index k = 0; k < d; ++k) omega(k, j) = stream.next_gaussian() / length_scale;
  }
  const Eigen::MatrixXd proj = X * omega;  // N x num_freq
  if (field == Field::kReal) {
    const double scale = std::sqrt(2.0 / static_cast<double>(D));
    Eigen::MatrixXd out(X.rows(), D);
    out.leftCols(num_freq) = proj.array().cos() * scale;
    out.rightCols(num_freq) = proj.array().sin() * scale;
    return FeatureMatrix::from_real(std::move(out));
  }
  const double scale = std::sqrt(1.0 / static_cast<double>(D));
  Eigen::MatrixXcd out(X.rows(), D);
  out.real() = proj.array().cos() * scale;
  out.imag() = proj.array().sin() * scale;
  return FeatureMatrix::from_complex(std::move(out));
}

}  // namespace polysketch
