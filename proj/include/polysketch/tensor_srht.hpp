#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "polysketch/errors.hpp"
#include "polysketch/fwht.hpp"
#include "polysketch/rng.hpp"
#include "polysketch/sketches.hpp"

namespace polysketch {

/// Structured polynomial sketch: per (block, degree), features are signed or
/// phased permuted columns of the unnormalized Hadamard matrix, applied via
/// the fast transform in O(p D log d). Inputs are zero-padded to d_pad
/// internally; when D is not a multiple of d_pad the final block keeps its
/// first mod(D, d_pad) columns.
class TensorSrhtSketch {
 public:
  TensorSrhtSketch(int degree, Eigen::Index num_features, Eigen::Index input_dim, Field field,
                   std::uint64_t seed)
      : degree_(degree),
        num_features_(num_features),
        input_dim_(input_dim),
        field_(field),
        seed_(seed) {
    if (degree_ < 1) throw ConfigError("TensorSrhtSketch: degree must be >= 1");
    if (num_features_ < 1) throw ConfigError("TensorSrhtSketch: num_features must be >= 1");
    if (input_dim_ < 1) throw ConfigError("TensorSrhtSketch: input_dim must be >= 1");
    d_pad_ = HadamardDim::pad_from(input_dim_).value;
    num_blocks_ = (num_features_ + d_pad_ - 1) / d_pad_;
    diags_.resize(static_cast<std::size_t>(num_blocks_ * degree_));
    perms_.resize(static_cast<std::size_t>(num_blocks_ * degree_));
    for (Eigen::Index b = 0; b < num_blocks_; ++b) {
      for (int i = 0; i < degree_; ++i) {
        RngStream stream(seed_, static_cast<std::uint64_t>(b) * static_cast<std::uint64_t>(degree_) +
                                    static_cast<std::uint64_t>(i));
        auto& diag = diags_[index(b, i)];
        if (field_ == Field::kReal) {
          diag = sample_rademacher(stream, d_pad_).cast<std::complex<double>>();
        } else {
          diag = sample_complex_weights(ComplexWeightKind::kRademacherRotated, stream, d_pad_);
        }
        perms_[index(b, i)] = random_permutation(stream, d_pad_);
      }
    }
  }

  int degree() const { return degree_; }
  Eigen::Index num_features() const { return num_features_; }
  Eigen::Index input_dim() const { return input_dim_; }
  Eigen::Index padded_dim() const { return d_pad_; }
  Eigen::Index num_blocks() const { return num_blocks_; }
  Field field() const { return field_; }

  const Eigen::VectorXcd& diagonal(Eigen::Index block, int deg) const {
    return diags_[index(block, deg)];
  }
  const std::vector<Eigen::Index>& permutation(Eigen::Index block, int deg) const {
    return perms_[index(block, deg)];
  }

  FeatureMatrix apply(const Eigen::MatrixXd& X) const {
    if (X.cols() != input_dim_)
      throw DimensionError("TensorSrhtSketch::apply: expected " + std::to_string(input_dim_) +
                           " columns, got " + std::to_string(X.cols()));
    const double scale = 1.0 / std::sqrt(static_cast<double>(num_features_));
    if (field_ == Field::kReal) {
      Eigen::MatrixXd out(X.rows(), num_features_);
      Eigen::VectorXd buf(d_pad_), acc(d_pad_);
      for (Eigen::Index r = 0; r < X.rows(); ++r) {
        Eigen::Index at = 0;
        for (Eigen::Index b = 0; b < num_blocks_; ++b) {
          acc.setOnes();
          for (int i = 0; i < degree_; ++i) {
            buf.setZero();
            buf.head(input_dim_) = X.row(r).transpose();
            buf.array() *= diags_[index(b, i)].real().array();
            fwht_inplace(buf.data(), d_pad_);
            const auto& perm = perms_[index(b, i)];
            for (Eigen::Index l = 0; l < d_pad_; ++l)
              acc[l] *= buf[perm[static_cast<std::size_t>(l)]];
          }
          const Eigen::Index take = std::min(d_pad_, num_features_ - at);
          out.row(r).segment(at, take) = acc.head(take).transpose() * scale;
          at += take;
        }
      }
      return FeatureMatrix::from_real(std::move(out));
    }
    Eigen::MatrixXcd out(X.rows(), num_features_);
    Eigen::VectorXcd buf(d_pad_), acc(d_pad_);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      Eigen::Index at = 0;
      for (Eigen::Index b = 0; b < num_blocks_; ++b) {
        acc.setOnes();
        for (int i = 0; i < degree_; ++i) {
          buf.setZero();
          buf.head(input_dim_).real() = X.row(r).transpose();
          buf.array() *= diags_[index(b, i)].array();
          fwht_inplace(buf.data(), d_pad_);
          const auto& perm = perms_[index(b, i)];
          for (Eigen::Index l = 0; l < d_pad_; ++l)
            acc[l] *= buf[perm[static_cast<std::size_t>(l)]];
        }
        const Eigen::Index take = std::min(d_pad_, num_features_ - at);
        out.row(r).segment(at, take) = acc.head(take).transpose() * scale;
        at += take;
      }
    }
    return FeatureMatrix::from_complex(std::move(out));
  }

 private:
  std::size_t index(Eigen::Index block, int deg) const {
    return static_cast<std::size_t>(block * degree_ + deg);
  }

  int degree_;
  Eigen::Index num_features_;
  Eigen::Index input_dim_;
  Field field_;
  std::uint64_t seed_;
  Eigen::Index d_pad_ = 1;
  Eigen::Index num_blocks_ = 1;
  std::vector<Eigen::VectorXcd> diags_;          // per (block, degree), length d_pad
  std::vector<std::vector<Eigen::Index>> perms_; // per (block, degree)
};

inline TensorSrhtSketch build_tensor_srht(int degree, Eigen::Index num_features,
                                          Eigen::Index input_dim, Field field,
                                          std::uint64_t seed) {
  return TensorSrhtSketch(degree, num_features, input_dim, field, seed);
}

inline FeatureMatrix apply_tensor_srht(const TensorSrhtSketch& sk, const Eigen::MatrixXd& X) {
  return sk.apply(X);
}

/// Explicit D_i H_d P_pi matrices per (block, degree); column l is
/// diag o h_{pi(l)}. Slow-path oracle for tests.
inline std::vector<Eigen::MatrixXcd> weight_matrix_explicit(const TensorSrhtSketch& sk) {
  const Eigen::Index d = sk.padded_dim();
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(d, d);
  for (Eigen::Index j = 0; j < d; ++j) fwht_inplace(H.col(j).data(), d);
  std::vector<Eigen::MatrixXcd> out;
  out.reserve(static_cast<std::size_t>(sk.num_blocks() * sk.degree()));
  for (Eigen::Index b = 0; b < sk.num_blocks(); ++b) {
    for (int i = 0; i < sk.degree(); ++i) {
      const auto& diag = sk.diagonal(b, i);
      const auto& perm = sk.permutation(b, i);
      Eigen::MatrixXcd M(d, d);
      for (Eigen::Index l = 0; l < d; ++l)
        M.col(l) = diag.array() * H.col(perm[static_cast<std::size_t>(l)]).array();
      out.push_back(std::move(M));
    }
  }
  return out;
}

}  // namespace polysketch
