#pragma once

#include <Eigen/Dense>

#include <complex>

#include "polysketch/errors.hpp"

namespace polysketch {

inline bool is_power_of_two(Eigen::Index n) { return n > 0 && (n & (n - 1)) == 0; }

inline Eigen::Index next_pow2(Eigen::Index n) {
  Eigen::Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Dimension of a Hadamard block: a power of two (inputs are zero-padded up
/// to it). One is allowed: H_1 = [1].
struct HadamardDim {
  Eigen::Index value;

  explicit HadamardDim(Eigen::Index v) : value(v) {
    if (!is_power_of_two(v))
      throw DimensionError("HadamardDim: " + std::to_string(v) + " is not a power of two");
  }

  static HadamardDim pad_from(Eigen::Index input_dim) {
    if (input_dim < 1) throw ConfigError("HadamardDim: dimension must be >= 1");
    return HadamardDim(next_pow2(input_dim));
  }
};

/// In-place multiply by the unnormalized Hadamard matrix H_n,
/// H_2 = [[1,1],[1,-1]], H_{2n} = [[H_n,H_n],[H_n,-H_n]]. O(n log n).
/// n = 1 is the identity. No normalization is applied here; sketches own
/// their own 1/sqrt(D) scaling.
template <typename Scalar>
void fwht_inplace(Scalar* data, Eigen::Index n) {
  if (!is_power_of_two(n))
    throw DimensionError("fwht_inplace: length must be a power of two, got " + std::to_string(n));
  for (Eigen::Index h = 1; h < n; h <<= 1) {
    for (Eigen::Index i = 0; i < n; i += h << 1) {
      for (Eigen::Index j = i; j < i + h; ++j) {
        const Scalar x = data[j];
        const Scalar y = data[j + h];
        data[j] = x + y;
        data[j + h] = x - y;
      }
    }
  }
}

template <typename Scalar>
void fwht_inplace(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& v) {
  fwht_inplace(v.data(), v.size());
}

}  // namespace polysketch
