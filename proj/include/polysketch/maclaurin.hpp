#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "polysketch/errors.hpp"
#include "polysketch/fwht.hpp"
#include "polysketch/rng.hpp"
#include "polysketch/sketches.hpp"
#include "polysketch/tensor_srht.hpp"
#include "polysketch/variance.hpp"

namespace polysketch {

/// Dot-product kernel given by Maclaurin coefficients a_n >= 0, optionally
/// with a per-point Gaussian prefactor g(x) = exp(-|x|^2/(2 l^2)):
///   k(x, y) = g(x) g(y) sum_n a_n (x'y)^n.
struct KernelSpec {
  enum class Kind { kPolynomial, kExponential, kGaussian };

  Kind kind = Kind::kPolynomial;
  int degree = 1;            // polynomial
  double nu = 0.0;           // polynomial
  double scale = 1.0;        // polynomial sigma^2 factor
  double length_scale = 1.0; // exponential / gaussian

  static KernelSpec polynomial(int p, double nu, double scale = 1.0) {
    if (p < 1) throw ConfigError("KernelSpec: polynomial degree must be >= 1");
    if (nu < 0.0) throw ConfigError("KernelSpec: nu must be >= 0");
    if (scale <= 0.0) throw ConfigError("KernelSpec: scale must be > 0");
    KernelSpec k;
    k.kind = Kind::kPolynomial;
    k.degree = p;
    k.nu = nu;
    k.scale = scale;
    return k;
  }

  static KernelSpec exponential(double l) {
    if (l <= 0.0) throw ConfigError("KernelSpec: length_scale must be > 0");
    KernelSpec k;
    k.kind = Kind::kExponential;
    k.length_scale = l;
    return k;
  }

  static KernelSpec gaussian(double l) {
    if (l <= 0.0) throw ConfigError("KernelSpec: length_scale must be > 0");
    KernelSpec k;
    k.kind = Kind::kGaussian;
    k.length_scale = l;
    return k;
  }

  /// Maclaurin coefficient a_n. Polynomial: scale * C(p,n) nu^{p-n} for n <= p;
  /// exponential/gaussian: 1/(n! l^{2n}).
  double coefficient(int n) const {
    if (n < 0) throw ConfigError("KernelSpec::coefficient: n must be >= 0");
    if (kind == Kind::kPolynomial) {
      if (n > degree) return 0.0;
      double binom = 1.0;
      for (int i = 0; i < n; ++i) binom = binom * static_cast<double>(degree - i) / (i + 1);
      return scale * binom * std::pow(nu, degree - n);
    }
    const double l2 = length_scale * length_scale;
    double a = 1.0;
    for (int i = 1; i <= n; ++i) a /= static_cast<double>(i) * l2;
    return a;
  }

  bool has_prefactor() const { return kind == Kind::kGaussian; }

  double prefactor(const Eigen::VectorXd& x) const {
    if (kind != Kind::kGaussian) return 1.0;
    return std::exp(-x.squaredNorm() / (2.0 * length_scale * length_scale));
  }

  double evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    detail::check_same_dim(x, y, "KernelSpec::evaluate");
    switch (kind) {
      case Kind::kPolynomial:
        return scale * detail::ipow(x.dot(y) + nu, degree);
      case Kind::kExponential:
        return std::exp(x.dot(y) / (length_scale * length_scale));
      case Kind::kGaussian:
        return std::exp(-(x - y).squaredNorm() / (2.0 * length_scale * length_scale));
    }
    throw ConfigError("KernelSpec::evaluate: unknown kind");
  }
};

/// Which polynomial sketch approximates each Maclaurin term.
struct MaclaurinFamily {
  bool structured = false;  // TensorSRHT (Rademacher-type unit-modulus weights)
  WeightFamily weights = WeightFamily::kRademacher;
  Field field = Field::kReal;

  SketchMoments moments() const {
    if (structured)
      return field == Field::kReal ? SketchMoments::rademacher_real()
                                   : SketchMoments::rademacher_complex();
    return moments_for(weights, field);
  }
};

/// Optimized truncation degree and per-degree feature counts.
struct Allocation {
  int p_star = 0;
  std::vector<Eigen::Index> counts;  // counts[n-1] features for degree n
  double objective = 0.0;

  Eigen::Index total() const {
    Eigen::Index t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

/// Pairwise U-statistics entering the empirical bias/variance objective,
/// precomputed once from an m-point sample (independent of any D_n). All sums
/// carry the 1/(m(m-1)) normalization and exclude the diagonal.
struct ObjectiveTables {
  int p_max = 0;
  Eigen::Index sample_size = 0;
  std::int64_t d_eff = 0;   // block dimension of the structured formulas (padded)
  bool structured = false;  // false also when d = 1 (unstructured fallback)
  std::vector<double> variance_sum;  // n = 1..p_max, prefactor-weighted V_q^{(n)} pair means
  std::vector<double> cov_sum;       // n = 1..p_max, structured covariance pair means
  double kk_sum = 0.0;               // mean k_ij^2
  std::vector<double> k_dot_sum;     // n = 0..p_max: mean k_ij g_i g_j t_ij^n
  std::vector<double> dot_dot_sum;   // s = 0..2 p_max: mean (g_i g_j)^2 t_ij^s
};

inline ObjectiveTables precompute_objective_tables(const Eigen::MatrixXd& X_sample,
                                                   const KernelSpec& kernel,
                                                   const MaclaurinFamily& family, int p_max) {
  const Eigen::Index m = X_sample.rows();
  if (m < 2) throw ConfigError("precompute_objective_tables: need at least 2 sample points");
  if (p_max < 1) throw ConfigError("precompute_objective_tables: p_max must be >= 1");

  ObjectiveTables t;
  t.p_max = p_max;
  t.sample_size = m;
  t.d_eff = static_cast<std::int64_t>(next_pow2(X_sample.cols()));
  t.structured = family.structured && t.d_eff >= 2;
  t.variance_sum.assign(static_cast<std::size_t>(p_max), 0.0);
  t.cov_sum.assign(static_cast<std::size_t>(p_max), 0.0);
  t.k_dot_sum.assign(static_cast<std::size_t>(p_max) + 1, 0.0);
  t.dot_dot_sum.assign(2 * static_cast<std::size_t>(p_max) + 1, 0.0);

  const SketchMoments moments = family.moments();
  const double twoq1 = 2.0 * moments.q - 1.0;
  const double qfac = twoq1 * twoq1 + 1.0;
  // unit-modulus weights in one dimension give a deterministic estimate
  const bool zero_variance = X_sample.cols() == 1 && moments.m4 == 1.0;

  Eigen::VectorXd g(m);
  for (Eigen::Index i = 0; i < m; ++i) g[i] = kernel.prefactor(X_sample.row(i).transpose());

  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const Eigen::VectorXd xi = X_sample.row(i).transpose();
      const Eigen::VectorXd xj = X_sample.row(j).transpose();
      const double dot = xi.dot(xj);
      const double sq = (xi.array().square() * xj.array().square()).sum();
      const double norms = xi.squaredNorm() * xj.squaredNorm();
      const double vbase = moments.m4 * sq + norms - sq + qfac * (dot * dot - sq);
      const double gij = g[i] * g[j];
      const double wvar = gij * gij;
      const double kij = kernel.evaluate(xi, xj);

      // base^n - dot^{2n} and the structured covariance analogue, degree by degree
      double vpow = 1.0, dpow = 1.0, cpow = 1.0;
      const double v1 = std::max(vbase - dot * dot, 0.0);
      const double cbase =
          t.structured ? dot * dot - v1 / static_cast<double>(t.d_eff - 1) : 0.0;
      for (int n = 1; n <= p_max; ++n) {
        vpow *= vbase;
        dpow *= dot * dot;
        cpow *= cbase;
        if (!zero_variance)
          t.variance_sum[static_cast<std::size_t>(n - 1)] +=
              2.0 * wvar * std::max(vpow - dpow, 0.0);
        if (t.structured) t.cov_sum[static_cast<std::size_t>(n - 1)] += 2.0 * wvar * (cpow - dpow);
      }

      t.kk_sum += 2.0 * kij * kij;
      double tpow = 1.0;
      for (int n = 0; n <= p_max; ++n) {
        t.k_dot_sum[static_cast<std::size_t>(n)] += 2.0 * kij * gij * tpow;
        tpow *= dot;
      }
      tpow = 1.0;
      for (int s = 0; s <= 2 * p_max; ++s) {
        t.dot_dot_sum[static_cast<std::size_t>(s)] += 2.0 * wvar * tpow;
        tpow *= dot;
      }
    }
  }

  const double norm = 1.0 / (static_cast<double>(m) * static_cast<double>(m - 1));
  for (auto& v : t.variance_sum) v *= norm;
  for (auto& v : t.cov_sum) v *= norm;
  t.kk_sum *= norm;
  for (auto& v : t.k_dot_sum) v *= norm;
  for (auto& v : t.dot_dot_sum) v *= norm;
  return t;
}

namespace detail {

/// Per-degree variance contribution a_n^2 * (pair mean) at count D_n; the
/// structured branch follows the convex surrogate on aggregated sums.
inline double degree_variance_term(const ObjectiveTables& tables, const KernelSpec& kernel, int n,
                                   Eigen::Index Dn) {
  const double a = kernel.coefficient(n);
  const double a2 = a * a;
  const double vs = tables.variance_sum[static_cast<std::size_t>(n - 1)];
  const double Dd = static_cast<double>(Dn);
  if (!tables.structured) return a2 * vs / Dd;
  const double cs = tables.cov_sum[static_cast<std::size_t>(n - 1)];
  if (cs > 0.0 || Dn > tables.d_eff)
    return a2 * (vs + static_cast<double>(tables.d_eff - 1) * cs) / Dd;
  return a2 * ((vs - cs) / Dd + cs);
}

}  // namespace detail

/// Variance part of the empirical objective for given per-degree counts
/// (counts[n-1] features for degree n; active degrees must hold >= 1).
inline double objective_variance(const ObjectiveTables& tables, const KernelSpec& kernel,
                                 const std::vector<Eigen::Index>& counts) {
  if (static_cast<int>(counts.size()) > tables.p_max)
    throw ConfigError("objective_variance: counts exceed table degree range");
  double total = 0.0;
  for (int n = 1; n <= static_cast<int>(counts.size()); ++n) {
    const auto Dn = counts[static_cast<std::size_t>(n - 1)];
    if (kernel.coefficient(n) > 0.0) {
      if (Dn < 1) throw ConfigError("objective_variance: zero count on active degree " +
                                    std::to_string(n));
      total += detail::degree_variance_term(tables, kernel, n, Dn);
    }
  }
  return total;
}

/// Squared-bias part: mean over pairs of
/// (k_ij - sum_{n<=p} a_n g_i g_j t_ij^n)^2, degree 0 always included.
inline double objective_bias(const ObjectiveTables& tables, const KernelSpec& kernel, int p) {
  if (p > tables.p_max) throw ConfigError("objective_bias: p exceeds table degree range");
  double bias = tables.kk_sum;
  for (int n = 0; n <= p; ++n) {
    const double an = kernel.coefficient(n);
    if (an == 0.0) continue;
    bias -= 2.0 * an * tables.k_dot_sum[static_cast<std::size_t>(n)];
    for (int n2 = 0; n2 <= p; ++n2) {
      const double an2 = kernel.coefficient(n2);
      if (an2 == 0.0) continue;
      bias += an * an2 * tables.dot_dot_sum[static_cast<std::size_t>(n + n2)];
    }
  }
  return std::max(bias, 0.0);
}

/// Incremental Algorithm: start every active degree (a_n > 0) at one feature
/// and repeatedly add a feature where it lowers the variance objective most
/// (ties -> lowest degree). Exactly `budget` features across active degrees.
inline std::vector<Eigen::Index> incremental_allocate(int p, Eigen::Index budget,
                                                      const ObjectiveTables& tables,
                                                      const KernelSpec& kernel) {
  if (p < 1 || p > tables.p_max) throw ConfigError("incremental_allocate: invalid degree range");
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(p), 0);
  Eigen::Index active = 0;
  for (int n = 1; n <= p; ++n) {
    if (kernel.coefficient(n) > 0.0) {
      counts[static_cast<std::size_t>(n - 1)] = 1;
      ++active;
    }
  }
  if (active == 0) throw ConfigError("incremental_allocate: no active degrees");
  if (budget < active)
    throw ConfigError("incremental_allocate: budget " + std::to_string(budget) +
                      " below active degree count " + std::to_string(active));
  for (Eigen::Index t = active; t < budget; ++t) {
    int best = -1;
    double best_delta = std::numeric_limits<double>::infinity();
    for (int n = 1; n <= p; ++n) {
      const auto Dn = counts[static_cast<std::size_t>(n - 1)];
      if (Dn == 0) continue;
      const double delta = detail::degree_variance_term(tables, kernel, n, Dn + 1) -
                           detail::degree_variance_term(tables, kernel, n, Dn);
      if (delta < best_delta) {
        best_delta = delta;
        best = n;
      }
    }
    ++counts[static_cast<std::size_t>(best - 1)];
  }
  return counts;
}

/// Extended Incremental Algorithm: run incremental_allocate for each
/// p in [p_min, p_max] and keep the strict argmin of bias + variance
/// (ties -> smaller p). D_total is the total feature width including the
/// always-appended degree-0 slot, so degrees share D_total - 1; truncation
/// orders whose active-degree count exceeds that budget are skipped.
inline Allocation extended_allocate(int p_min, int p_max, Eigen::Index D_total,
                                    const ObjectiveTables& tables, const KernelSpec& kernel) {
  if (p_min < 1 || p_min > p_max) throw ConfigError("extended_allocate: invalid p range");
  if (p_max > tables.p_max) throw ConfigError("extended_allocate: p_max exceeds table range");
  const Eigen::Index budget = D_total - 1;
  Allocation best;
  double best_obj = std::numeric_limits<double>::infinity();
  bool found = false;
  for (int p = p_min; p <= p_max; ++p) {
    Eigen::Index active = 0;
    for (int n = 1; n <= p; ++n)
      if (kernel.coefficient(n) > 0.0) ++active;
    if (active == 0 || active > budget) continue;
    auto counts = incremental_allocate(p, budget, tables, kernel);
    const double obj = objective_bias(tables, kernel, p) + objective_variance(tables, kernel, counts);
    if (obj < best_obj) {
      best_obj = obj;
      best.p_star = p;
      best.counts = std::move(counts);
      best.objective = obj;
      found = true;
    }
  }
  if (!found) throw ConfigError("extended_allocate: no feasible truncation degree in range");
  return best;
}

/// Truncated importance-sampling plan of the random Maclaurin estimator:
/// D_total i.i.d. degrees from mu(n) proportional to c^{-(n+1)} restricted to
/// {1..p_max}. `measure` holds the renormalized mu.
struct RandomMaclaurinPlan {
  std::vector<Eigen::Index> counts;  // counts[n-1] draws of degree n
  std::vector<double> measure;       // measure[n-1] = mu(n)
  Eigen::Index total = 0;
};

inline RandomMaclaurinPlan random_maclaurin_assign(Eigen::Index D_total, int p_max, double c,
                                                   RngStream& stream) {
  if (D_total < 1) throw ConfigError("random_maclaurin_assign: D_total must be >= 1");
  if (p_max < 1) throw ConfigError("random_maclaurin_assign: p_max must be >= 1");
  if (c <= 1.0) throw ConfigError("random_maclaurin_assign: c must be > 1");
  RandomMaclaurinPlan plan;
  plan.counts.assign(static_cast<std::size_t>(p_max), 0);
  plan.measure.assign(static_cast<std::size_t>(p_max), 0.0);
  plan.total = D_total;
  double z = 0.0;
  for (int n = 1; n <= p_max; ++n) {
    plan.measure[static_cast<std::size_t>(n - 1)] = std::pow(c, -(n + 1));
    z += plan.measure[static_cast<std::size_t>(n - 1)];
  }
  for (auto& mu : plan.measure) mu /= z;
  for (Eigen::Index j = 0; j < D_total; ++j) {
    const double u = stream.next_unit();
    double cdf = 0.0;
    int drawn = p_max;
    for (int n = 1; n <= p_max; ++n) {
      cdf += plan.measure[static_cast<std::size_t>(n - 1)];
      if (u < cdf) {
        drawn = n;
        break;
      }
    }
    ++plan.counts[static_cast<std::size_t>(drawn - 1)];
  }
  return plan;
}

namespace detail {

inline std::uint64_t degree_seed(std::uint64_t seed, int n) {
  return splitmix64(seed ^ (0x5bf0a8f1d45ULL + static_cast<std::uint64_t>(n)));
}

inline FeatureMatrix degree_sketch_features(const MaclaurinFamily& family, int n, Eigen::Index Dn,
                                            std::uint64_t seed, const Eigen::MatrixXd& X) {
  if (family.structured) {
    TensorSrhtSketch sk(n, Dn, X.cols(), family.field, degree_seed(seed, n));
    return sk.apply(X);
  }
  SketchSpec spec;
  spec.family = family.weights;
  spec.field = family.field;
  spec.degree = n;
  spec.num_features = Dn;
  spec.input_dim = X.cols();
  spec.seed = degree_seed(seed, n);
  return UnstructuredSketch(spec).apply(X);
}

inline FeatureMatrix assemble_weighted_blocks(const KernelSpec& kernel,
                                              const MaclaurinFamily& family, std::uint64_t seed,
                                              const Eigen::MatrixXd& X,
                                              const std::vector<Eigen::Index>& counts,
                                              const std::vector<double>& column_scales) {
  std::vector<FeatureMatrix> parts;
  FeatureMatrix a0;
  a0.values = Eigen::MatrixXcd::Zero(X.rows(), 1);
  a0.values.real().setConstant(std::sqrt(kernel.coefficient(0)));
  a0.is_real = true;
  parts.push_back(std::move(a0));
  for (int n = 1; n <= static_cast<int>(counts.size()); ++n) {
    const auto Dn = counts[static_cast<std::size_t>(n - 1)];
    if (Dn == 0) continue;
    FeatureMatrix block = degree_sketch_features(family, n, Dn, seed, X);
    block.values *= column_scales[static_cast<std::size_t>(n - 1)];
    parts.push_back(std::move(block));
  }
  FeatureMatrix out = FeatureMatrix::hcat(parts);
  if (kernel.has_prefactor()) {
    Eigen::VectorXd g(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) g[i] = kernel.prefactor(X.row(i).transpose());
    out.values.array().colwise() *= g.array().cast<std::complex<double>>();
  }
  return out;
}

}  // namespace detail

/// Feature map of the truncated Maclaurin approximation: [sqrt(a_0), then
/// sqrt(a_n) Phi_n per allocated degree], rows scaled by the kernel prefactor.
/// Width is alloc.total() + 1.
inline FeatureMatrix assemble_features(const KernelSpec& kernel, const Allocation& alloc,
                                       const MaclaurinFamily& family, std::uint64_t seed,
                                       const Eigen::MatrixXd& X) {
  if (alloc.p_star < 1 || static_cast<int>(alloc.counts.size()) != alloc.p_star)
    throw ConfigError("assemble_features: allocation inconsistent");
  for (int n = 1; n <= alloc.p_star; ++n) {
    const bool active = kernel.coefficient(n) > 0.0;
    const bool has = alloc.counts[static_cast<std::size_t>(n - 1)] > 0;
    if (active != has)
      throw ConfigError("assemble_features: allocation does not match active degrees");
  }
  std::vector<double> scales(alloc.counts.size(), 0.0);
  for (int n = 1; n <= alloc.p_star; ++n)
    scales[static_cast<std::size_t>(n - 1)] = std::sqrt(kernel.coefficient(n));
  return detail::assemble_weighted_blocks(kernel, family, seed, X, alloc.counts, scales);
}

/// Feature map of the (truncated) random Maclaurin estimator: degree-n block
/// scaled by sqrt(a_n D_n / (D_total mu(n))) on top of the sketch's own
/// 1/sqrt(D_n), so the kernel estimate is the importance-weighted sum.
inline FeatureMatrix assemble_random_maclaurin(const KernelSpec& kernel,
                                               const RandomMaclaurinPlan& plan,
                                               const MaclaurinFamily& family, std::uint64_t seed,
                                               const Eigen::MatrixXd& X) {
  std::vector<double> scales(plan.counts.size(), 0.0);
  for (int n = 1; n <= static_cast<int>(plan.counts.size()); ++n) {
    const auto Dn = plan.counts[static_cast<std::size_t>(n - 1)];
    if (Dn == 0) continue;
    const double mu = plan.measure[static_cast<std::size_t>(n - 1)];
    scales[static_cast<std::size_t>(n - 1)] = std::sqrt(
        kernel.coefficient(n) * static_cast<double>(Dn) /
        (static_cast<double>(plan.total) * mu));
  }
  return detail::assemble_weighted_blocks(kernel, family, seed, X, plan.counts, scales);
}

/// E[k_hat(x, x)] of the truncated approximation:
/// g(x)^2 (a_0 + sum_{n<=p*, D_n>0} a_n |x|^{2n}).
inline double expected_self_kernel(const KernelSpec& kernel, const Allocation& alloc,
                                   const Eigen::VectorXd& x) {
  const double g = kernel.prefactor(x);
  const double x2 = x.squaredNorm();
  double sum = kernel.coefficient(0);
  double pw = 1.0;
  for (int n = 1; n <= alloc.p_star; ++n) {
    pw *= x2;
    if (alloc.counts[static_cast<std::size_t>(n - 1)] > 0) sum += kernel.coefficient(n) * pw;
  }
  return g * g * sum;
}

/// Posterior-variance correction k(x,x) - E[k_hat(x,x)] >= 0 restoring the
/// truncated tail mass; consumed by the GP module when enabled.
inline std::function<double(const Eigen::VectorXd&)> make_bias_correction(
    const KernelSpec& kernel, const Allocation& alloc) {
  return [kernel, alloc](const Eigen::VectorXd& x) {
    return std::max(kernel.evaluate(x, x) - expected_self_kernel(kernel, alloc, x), 0.0);
  };
}

}  // namespace polysketch
