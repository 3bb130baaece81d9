#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "polysketch/errors.hpp"

namespace polysketch {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_id) {
  return splitmix64(splitmix64(seed) ^ stream_id);
}

}  // namespace detail

/// Seeded random stream. Each (seed, stream_id) pair owns an independent
/// engine, so draw sequences do not depend on interleaving with other
/// streams. All samplers below consume raw 64-bit words, keeping sequences
/// identical across platforms and thread counts.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), engine_(detail::mix_seed(seed, stream_id)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  std::uint64_t next_u64() { return engine_(); }

  /// One fair bit; refills from a buffered 64-bit word.
  int next_bit() {
    if (bits_left_ == 0) {
      bit_buffer_ = next_u64();
      bits_left_ = 64;
    }
    int b = static_cast<int>(bit_buffer_ & 1u);
    bit_buffer_ >>= 1;
    --bits_left_;
    return b;
  }

  int next_2bits() {
    if (bits_left_ < 2) {
      bit_buffer_ = next_u64();
      bits_left_ = 64;
    }
    int b = static_cast<int>(bit_buffer_ & 3u);
    bit_buffer_ >>= 2;
    bits_left_ -= 2;
    return b;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via the polar method (pairs cached).
  double next_gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_unit() - 1.0;
      v = 2.0 * next_unit() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    cached_ = v * f;
    has_cached_ = true;
    return u * f;
  }

  /// Unbiased integer in {0, ..., bound-1}.
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::uint64_t bit_buffer_ = 0;
  int bits_left_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

enum class ComplexWeightKind { kRademacherRotated, kGaussianPair, kUnitCircle };

/// i.i.d. uniform over {+1, -1}.
inline Eigen::VectorXd sample_rademacher(RngStream& stream, Eigen::Index n) {
  if (n < 1) throw ConfigError("sample_rademacher: n must be >= 1");
  Eigen::VectorXd out(n);
  for (Eigen::Index k = 0; k < n; ++k) out[k] = stream.next_bit() ? 1.0 : -1.0;
  return out;
}

/// Unit-second-moment complex weights: E[z conj(z)] = 1, E[z^2] = 0,
/// E[Re(z)^2] = 1/2 for all kinds.
inline Eigen::VectorXcd sample_complex_weights(ComplexWeightKind kind, RngStream& stream,
                                               Eigen::Index n) {
  if (n < 1) throw ConfigError("sample_complex_weights: n must be >= 1");
  Eigen::VectorXcd out(n);
  switch (kind) {
    case ComplexWeightKind::kRademacherRotated: {
      static const std::complex<double> support[4] = {
          {1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}};
      for (Eigen::Index k = 0; k < n; ++k) out[k] = support[stream.next_2bits()];
      return out;
    }
    case ComplexWeightKind::kGaussianPair: {
      const double scale = std::sqrt(0.5);
      for (Eigen::Index k = 0; k < n; ++k) {
        const double re = stream.next_gaussian();
        const double im = stream.next_gaussian();
        out[k] = std::complex<double>(scale * re, scale * im);
      }
      return out;
    }
    case ComplexWeightKind::kUnitCircle: {
      for (Eigen::Index k = 0; k < n; ++k) {
        const double theta = 2.0 * std::numbers::pi * stream.next_unit();
        out[k] = std::complex<double>(std::cos(theta), std::sin(theta));
      }
      return out;
    }
  }
  throw ConfigError("sample_complex_weights: unknown kind");
}

/// Uniform permutation of {0, ..., d-1} (Fisher-Yates).
inline std::vector<Eigen::Index> random_permutation(RngStream& stream, Eigen::Index d) {
  if (d < 1) throw ConfigError("random_permutation: d must be >= 1");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(d));
  for (Eigen::Index k = 0; k < d; ++k) perm[static_cast<std::size_t>(k)] = k;
  for (Eigen::Index k = d - 1; k > 0; --k) {
    const auto j = static_cast<Eigen::Index>(stream.next_below(static_cast<std::uint64_t>(k) + 1));
    std::swap(perm[static_cast<std::size_t>(k)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

}  // namespace polysketch
