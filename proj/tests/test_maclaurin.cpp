#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "mc_helpers.hpp"
#include "polysketch/maclaurin.hpp"
#include "polysketch/variance.hpp"

using namespace polysketch;

namespace {

Eigen::MatrixXd random_matrix(RngStream& s, Eigen::Index n, Eigen::Index d) {
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = s.next_gaussian();
  return X;
}

// exhaustive-search oracle over all compositions of `budget` into positive
// counts for the active degrees
void enumerate_counts(int slot, Eigen::Index remaining, std::vector<Eigen::Index>& current,
                      const std::vector<int>& active,
                      const std::function<void(const std::vector<Eigen::Index>&)>& visit) {
  if (slot == static_cast<int>(active.size())) {
    if (remaining == 0) visit(current);
    return;
  }
  const Eigen::Index slots_left = static_cast<Eigen::Index>(active.size()) - slot - 1;
  for (Eigen::Index c = 1; c + slots_left <= remaining; ++c) {
    current[static_cast<std::size_t>(slot)] = c;
    enumerate_counts(slot + 1, remaining - c, current, active, visit);
  }
}

// independent evaluation of the per-degree variance objective (mirrors the
// table formulas, separate from the greedy code path)
double eval_variance_objective(const ObjectiveTables& tables, const KernelSpec& kernel,
                               const std::vector<Eigen::Index>& counts) {
  double total = 0.0;
  for (int n = 1; n <= static_cast<int>(counts.size()); ++n) {
    const auto Dn = counts[static_cast<std::size_t>(n - 1)];
    if (Dn == 0) continue;
    const double a2 = kernel.coefficient(n) * kernel.coefficient(n);
    const double vs = tables.variance_sum[static_cast<std::size_t>(n - 1)];
    if (!tables.structured) {
      total += a2 * vs / static_cast<double>(Dn);
    } else {
      const double cs = tables.cov_sum[static_cast<std::size_t>(n - 1)];
      if (cs > 0.0 || Dn > tables.d_eff)
        total += a2 * (vs + static_cast<double>(tables.d_eff - 1) * cs) / static_cast<double>(Dn);
      else
        total += a2 * ((vs - cs) / static_cast<double>(Dn) + cs);
    }
  }
  return total;
}

std::vector<Eigen::Index> exhaustive_allocate(int p, Eigen::Index budget,
                                              const ObjectiveTables& tables,
                                              const KernelSpec& kernel) {
  std::vector<int> active;
  for (int n = 1; n <= p; ++n)
    if (kernel.coefficient(n) > 0.0) active.push_back(n);
  std::vector<Eigen::Index> current(active.size());
  std::vector<Eigen::Index> best_counts;
  double best = std::numeric_limits<double>::infinity();
  enumerate_counts(0, budget, current, active, [&](const std::vector<Eigen::Index>& cand) {
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(p), 0);
    for (std::size_t a = 0; a < active.size(); ++a)
      counts[static_cast<std::size_t>(active[a] - 1)] = cand[a];
    const double f = eval_variance_objective(tables, kernel, counts);
    if (f < best) {
      best = f;
      best_counts = counts;
    }
  });
  return best_counts;
}

}  // namespace

TEST(KernelSpec, PolynomialCoefficients) {
  const auto k = KernelSpec::polynomial(2, 1.0);
  EXPECT_DOUBLE_EQ(k.coefficient(0), 1.0);
  EXPECT_DOUBLE_EQ(k.coefficient(1), 2.0);
  EXPECT_DOUBLE_EQ(k.coefficient(2), 1.0);
  EXPECT_DOUBLE_EQ(k.coefficient(3), 0.0);
  const auto homogeneous = KernelSpec::polynomial(3, 0.0, 2.0);
  EXPECT_DOUBLE_EQ(homogeneous.coefficient(3), 2.0);
  EXPECT_DOUBLE_EQ(homogeneous.coefficient(1), 0.0);
}

TEST(KernelSpec, ExponentialCoefficientsAndGaussianPrefactor) {
  const auto e = KernelSpec::exponential(1.0);
  EXPECT_NEAR(e.coefficient(3), 1.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(e.prefactor(Eigen::VectorXd::Ones(4)), 1.0);
  const auto g = KernelSpec::gaussian(2.0);
  Eigen::VectorXd x(2);
  x << 1.0, -2.0;
  EXPECT_NEAR(g.prefactor(x), std::exp(-x.squaredNorm() / 8.0), 1e-15);
  EXPECT_NEAR(g.coefficient(2), 1.0 / (2.0 * 16.0), 1e-15);
  // evaluate() agrees with the weighted expansion
  Eigen::VectorXd y(2);
  y << 0.5, 0.25;
  double expansion = 0.0;
  for (int n = 0; n < 60; ++n) expansion += g.coefficient(n) * std::pow(x.dot(y), n);
  expansion *= g.prefactor(x) * g.prefactor(y);
  EXPECT_NEAR(g.evaluate(x, y), expansion, 1e-12);
}

TEST(RandomMaclaurinAssign, CountsSumToTotalAndMeasureMatches) {
  RngStream s(3, 0);
  const auto plan = random_maclaurin_assign(50, 6, 2.0, s);
  Eigen::Index total = 0;
  for (auto c : plan.counts) total += c;
  EXPECT_EQ(total, 50);
  // mu(n) proportional to 2^{-(n+1)} before truncation
  double z = 0.0;
  for (int n = 1; n <= 6; ++n) z += std::pow(2.0, -(n + 1));
  for (int n = 1; n <= 6; ++n)
    EXPECT_NEAR(plan.measure[static_cast<std::size_t>(n - 1)], std::pow(2.0, -(n + 1)) / z, 1e-15);
}

TEST(RandomMaclaurinAssign, EmpiricalFrequenciesMatchTruncatedMeasure) {
  RngStream s(4, 0);
  const int draws = 100000;
  const auto plan = random_maclaurin_assign(draws, 5, 2.0, s);
  for (int n = 1; n <= 5; ++n) {
    const double mu = plan.measure[static_cast<std::size_t>(n - 1)];
    const double sigma = std::sqrt(draws * mu * (1.0 - mu));
    EXPECT_LE(
        std::abs(static_cast<double>(plan.counts[static_cast<std::size_t>(n - 1)]) - draws * mu),
        4.0 * sigma)
        << "n=" << n;
  }
}

TEST(RandomMaclaurinAssign, RejectsBadArguments) {
  RngStream s(5, 0);
  EXPECT_THROW(random_maclaurin_assign(0, 5, 2.0, s), ConfigError);
  EXPECT_THROW(random_maclaurin_assign(10, 0, 2.0, s), ConfigError);
  EXPECT_THROW(random_maclaurin_assign(10, 5, 1.0, s), ConfigError);
}

TEST(ObjectiveTables, TwoPointSampleIsHandComputable) {
  Eigen::MatrixXd X(2, 3);
  X << 1.0, 0.5, -0.25, 0.75, -1.0, 0.125;
  const auto kernel = KernelSpec::exponential(1.3);
  MaclaurinFamily fam;  // unstructured real rademacher
  const auto tables = precompute_objective_tables(X, kernel, fam, 3);
  const Eigen::VectorXd x0 = X.row(0).transpose();
  const Eigen::VectorXd x1 = X.row(1).transpose();
  const double t = x0.dot(x1);
  const double k01 = kernel.evaluate(x0, x1);
  for (int n = 1; n <= 3; ++n) {
    const double vn = var_unstructured(x0, x1, n, SketchMoments::rademacher_real());
    EXPECT_NEAR(tables.variance_sum[static_cast<std::size_t>(n - 1)], vn, 1e-12 * (1.0 + vn));
  }
  EXPECT_NEAR(tables.kk_sum, k01 * k01, 1e-12 * (1.0 + k01 * k01));
  for (int n = 0; n <= 3; ++n)
    EXPECT_NEAR(tables.k_dot_sum[static_cast<std::size_t>(n)], k01 * std::pow(t, n), 1e-12);
  for (int s2 = 0; s2 <= 6; ++s2)
    EXPECT_NEAR(tables.dot_dot_sum[static_cast<std::size_t>(s2)], std::pow(t, s2), 1e-12);
}

TEST(ObjectiveTables, InvariantToSamplePermutation) {
  RngStream s(6, 0);
  Eigen::MatrixXd X = random_matrix(s, 7, 4);
  Eigen::MatrixXd Xp = X;
  Xp.topRows(6) = X.bottomRows(6);
  Xp.row(6) = X.row(0);
  const auto kernel = KernelSpec::gaussian(1.5);
  MaclaurinFamily fam;
  fam.structured = true;
  const auto a = precompute_objective_tables(X, kernel, fam, 4);
  const auto b = precompute_objective_tables(Xp, kernel, fam, 4);
  for (int n = 1; n <= 4; ++n) {
    EXPECT_NEAR(a.variance_sum[static_cast<std::size_t>(n - 1)],
                b.variance_sum[static_cast<std::size_t>(n - 1)],
                1e-10 * (1.0 + std::abs(a.variance_sum[static_cast<std::size_t>(n - 1)])));
    EXPECT_NEAR(a.cov_sum[static_cast<std::size_t>(n - 1)],
                b.cov_sum[static_cast<std::size_t>(n - 1)],
                1e-10 * (1.0 + std::abs(a.cov_sum[static_cast<std::size_t>(n - 1)])));
  }
  EXPECT_NEAR(a.kk_sum, b.kk_sum, 1e-10 * (1.0 + a.kk_sum));
}

TEST(ObjectiveTables, RejectsTooFewPoints) {
  const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(1, 3);
  EXPECT_THROW(precompute_objective_tables(X, KernelSpec::exponential(1.0), MaclaurinFamily{}, 3),
               ConfigError);
}

TEST(ObjectiveBias, ExactExpansionHasZeroBias) {
  // duplicate points allowed; degree-p polynomial with all degrees included
  RngStream s(7, 0);
  Eigen::MatrixXd X = random_matrix(s, 5, 3);
  X.row(4) = X.row(2);
  const auto kernel = KernelSpec::polynomial(3, 0.7);
  const auto tables = precompute_objective_tables(X, kernel, MaclaurinFamily{}, 5);
  EXPECT_NEAR(objective_bias(tables, kernel, 3), 0.0, 1e-10);
  EXPECT_NEAR(objective_bias(tables, kernel, 5), 0.0, 1e-10);
  EXPECT_GT(objective_bias(tables, kernel, 2), 0.0);
}

TEST(ObjectiveBias, NonincreasingInDegreeForGaussianOnAlignedSample) {
  RngStream s(8, 0);
  Eigen::MatrixXd X = random_matrix(s, 8, 3).cwiseAbs();  // pairwise dots >= 0
  const auto kernel = KernelSpec::gaussian(1.2);
  const auto tables = precompute_objective_tables(X, kernel, MaclaurinFamily{}, 8);
  double prev = objective_bias(tables, kernel, 1);
  for (int p = 2; p <= 8; ++p) {
    const double b = objective_bias(tables, kernel, p);
    EXPECT_LE(b, prev + 1e-15);
    EXPECT_GE(b, 0.0);
    prev = b;
  }
}

TEST(ObjectiveVariance, HomogeneityAndSingleDegree) {
  RngStream s(9, 0);
  const Eigen::MatrixXd X = random_matrix(s, 6, 4);
  const auto kernel = KernelSpec::exponential(1.1);
  const auto tables = precompute_objective_tables(X, kernel, MaclaurinFamily{}, 4);
  std::vector<Eigen::Index> counts{2, 3, 1, 4};
  const double f1 = objective_variance(tables, kernel, counts);
  for (auto& c : counts) c *= 2;
  const double f2 = objective_variance(tables, kernel, counts);
  EXPECT_NEAR(f2, 0.5 * f1, 1e-12 * (1.0 + f1));

  // single active degree: a_n^2 S_n / D_n
  const auto mono = KernelSpec::polynomial(3, 0.0);  // only degree 3 active
  const auto mono_tables = precompute_objective_tables(X, mono, MaclaurinFamily{}, 4);
  std::vector<Eigen::Index> mono_counts{0, 0, 5, 0};
  const double a3 = mono.coefficient(3);
  EXPECT_NEAR(objective_variance(mono_tables, mono, mono_counts),
              a3 * a3 * mono_tables.variance_sum[2] / 5.0,
              1e-12 * (1.0 + mono_tables.variance_sum[2]));
  EXPECT_THROW(objective_variance(mono_tables, mono, {0, 0, 0, 1}), ConfigError);
}

TEST(ObjectiveVariance, MatchesPerPairSummationOracle) {
  RngStream s(10, 0);
  const Eigen::MatrixXd X = random_matrix(s, 6, 4);
  const auto kernel = KernelSpec::gaussian(1.4);
  for (const bool structured : {false, true}) {
    MaclaurinFamily fam;
    fam.structured = structured;
    fam.field = Field::kComplex;
    const auto tables = precompute_objective_tables(X, kernel, fam, 3);
    const std::vector<Eigen::Index> counts{3, 2, 5};
    const double got = objective_variance(tables, kernel, counts);

    // direct per-pair summation through the variance module
    const auto moments = fam.moments();
    const Eigen::Index m = X.rows();
    double expected = 0.0;
    for (int n = 1; n <= 3; ++n) {
      double vsum = 0.0, csum = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
          if (i == j) continue;
          const Eigen::VectorXd xi = X.row(i).transpose();
          const Eigen::VectorXd xj = X.row(j).transpose();
          const double w = kernel.prefactor(xi) * kernel.prefactor(xi) * kernel.prefactor(xj) *
                           kernel.prefactor(xj);
          vsum += w * var_unstructured(xi, xj, n, moments);
          if (structured) csum += w * cov_tensor_srht(xi, xj, n, tables.d_eff, moments);
        }
      }
      const double norm = 1.0 / (static_cast<double>(m) * static_cast<double>(m - 1));
      vsum *= norm;
      csum *= norm;
      const double a2 = kernel.coefficient(n) * kernel.coefficient(n);
      const auto Dn = static_cast<double>(counts[static_cast<std::size_t>(n - 1)]);
      if (!structured) {
        expected += a2 * vsum / Dn;
      } else if (csum > 0.0 || counts[static_cast<std::size_t>(n - 1)] > tables.d_eff) {
        expected += a2 * (vsum + static_cast<double>(tables.d_eff - 1) * csum) / Dn;
      } else {
        expected += a2 * ((vsum - csum) / Dn + csum);
      }
    }
    EXPECT_NEAR(got, expected, 1e-10 * (1.0 + std::abs(expected))) << "structured=" << structured;
  }
}

TEST(IncrementalAllocate, BudgetAtActiveCountGivesAllOnes) {
  RngStream s(11, 0);
  const Eigen::MatrixXd X = random_matrix(s, 5, 3);
  const auto kernel = KernelSpec::exponential(1.0);
  const auto tables = precompute_objective_tables(X, kernel, MaclaurinFamily{}, 4);
  const auto counts = incremental_allocate(4, 4, tables, kernel);
  for (const auto c : counts) EXPECT_EQ(c, 1);
  EXPECT_THROW(incremental_allocate(4, 3, tables, kernel), ConfigError);
}

TEST(IncrementalAllocate, HandExampleTwoDegrees) {
  // a_1^2 S_1 = 8, a_2^2 S_2 = 1, budget 4 -> (3, 1): f = 8/3 + 1 is minimal
  ObjectiveTables tables;
  tables.p_max = 2;
  tables.sample_size = 2;
  tables.d_eff = 4;
  tables.structured = false;
  const auto kernel = KernelSpec::polynomial(2, 1.0);  // a_1 = 2, a_2 = 1
  tables.variance_sum = {8.0 / (kernel.coefficient(1) * kernel.coefficient(1)), 1.0};
  const auto counts = incremental_allocate(2, 4, tables, kernel);
  EXPECT_EQ(counts[0], 3);
  EXPECT_EQ(counts[1], 1);
}

TEST(IncrementalAllocate, MatchesExhaustiveSearch) {
  RngStream s(12, 0);
  for (int trial = 0; trial < 50; ++trial) {
    ObjectiveTables tables;
    tables.p_max = 4;
    tables.sample_size = 2;
    tables.d_eff = 4;
    tables.structured = trial % 2 == 1;
    tables.variance_sum.resize(4);
    tables.cov_sum.resize(4);
    for (int n = 0; n < 4; ++n) {
      tables.variance_sum[static_cast<std::size_t>(n)] = 0.1 + 10.0 * s.next_unit();
      // |Cov| <= V with both signs exercised
      tables.cov_sum[static_cast<std::size_t>(n)] =
          tables.variance_sum[static_cast<std::size_t>(n)] * (2.0 * s.next_unit() - 1.0);
    }
    const auto kernel = KernelSpec::polynomial(4, 1.0);
    const auto budget = static_cast<Eigen::Index>(4 + s.next_below(9));  // 4..12
    const auto greedy = incremental_allocate(4, budget, tables, kernel);
    const auto oracle = exhaustive_allocate(4, budget, tables, kernel);
    const double f_greedy = eval_variance_objective(tables, kernel, greedy);
    const double f_oracle = eval_variance_objective(tables, kernel, oracle);
    EXPECT_NEAR(f_greedy, f_oracle, 1e-12 * (1.0 + std::abs(f_oracle)))
        << "trial=" << trial << " budget=" << budget;
  }
}

TEST(IncrementalAllocate, ObjectiveNonincreasingAlongGreedyPath) {
  RngStream s(13, 0);
  const Eigen::MatrixXd X = random_matrix(s, 6, 4);
  const auto kernel = KernelSpec::exponential(0.9);
  MaclaurinFamily fam;
  fam.structured = true;
  const auto tables = precompute_objective_tables(X, kernel, fam, 4);
  double prev = std::numeric_limits<double>::infinity();
  for (Eigen::Index budget = 4; budget <= 24; ++budget) {
    const auto counts = incremental_allocate(4, budget, tables, kernel);
    const double f = eval_variance_objective(tables, kernel, counts);
    EXPECT_LE(f, prev + 1e-12 * (1.0 + std::abs(prev)));
    prev = f;
  }
}

TEST(ExtendedAllocate, GaussianOneDimensionalToySelectsDegreeNine) {
  // zero sketch variance in one dimension makes truncation bias the whole
  // objective; with total width 10 the highest feasible truncation wins
  RngStream s(14, 0);
  Eigen::MatrixXd X(40, 1);
  for (Eigen::Index i = 0; i < 40; ++i) X(i, 0) = 2.0 * s.next_unit();
  const auto kernel = KernelSpec::gaussian(1.0);
  MaclaurinFamily fam;  // real rademacher, as in the one-dimensional study
  const auto tables = precompute_objective_tables(X, kernel, fam, 10);
  const auto alloc = extended_allocate(2, 10, 10, tables, kernel);
  EXPECT_EQ(alloc.p_star, 9);
  ASSERT_EQ(alloc.counts.size(), 9u);
  for (const auto c : alloc.counts) EXPECT_EQ(c, 1);
  EXPECT_EQ(alloc.total(), 9);
}

TEST(ExtendedAllocate, PolynomialKernelPicksItsOwnDegreeWhenBudgetAmple) {
  // with the budget large enough that per-degree variances are negligible,
  // the zero-bias truncation at the kernel degree wins, and the strict
  // argmin excludes larger p (their allocations and objectives coincide)
  RngStream s(15, 0);
  const Eigen::MatrixXd X = random_matrix(s, 8, 3);
  const auto kernel = KernelSpec::polynomial(4, 1.0);
  const auto tables = precompute_objective_tables(X, kernel, MaclaurinFamily{}, 8);
  const auto alloc = extended_allocate(2, 8, 4001, tables, kernel);
  EXPECT_EQ(alloc.p_star, 4);
  EXPECT_EQ(alloc.total(), 4000);
}

TEST(ExtendedAllocate, BeatsRandomMaclaurinCountsOnTheObjective) {
  RngStream s(16, 0);
  const Eigen::MatrixXd X = random_matrix(s, 10, 4).cwiseAbs();
  const auto kernel = KernelSpec::gaussian(1.5);
  const auto tables = precompute_objective_tables(X, kernel, MaclaurinFamily{}, 10);
  const auto alloc = extended_allocate(2, 10, 20, tables, kernel);

  auto full_objective = [&](const std::vector<Eigen::Index>& counts) {
    // bias with only the held degrees included, plus the variance part
    double bias = tables.kk_sum;
    std::vector<int> included{0};
    for (int n = 1; n <= static_cast<int>(counts.size()); ++n)
      if (counts[static_cast<std::size_t>(n - 1)] > 0) included.push_back(n);
    for (const int n : included) {
      const double an = kernel.coefficient(n);
      bias -= 2.0 * an * tables.k_dot_sum[static_cast<std::size_t>(n)];
      for (const int n2 : included)
        bias += an * kernel.coefficient(n2) * tables.dot_dot_sum[static_cast<std::size_t>(n + n2)];
    }
    return std::max(bias, 0.0) + eval_variance_objective(tables, kernel, counts);
  };

  int wins = 0;
  for (int t = 0; t < 20; ++t) {
    RngStream rm_stream(300 + static_cast<std::uint64_t>(t), 0);
    const auto plan = random_maclaurin_assign(19, 10, 2.0, rm_stream);
    if (full_objective(alloc.counts) <= full_objective(plan.counts) + 1e-12) ++wins;
  }
  EXPECT_GE(wins, 11);  // majority of 20 seeds
}

TEST(ExtendedAllocate, StructuredFallsBackToUnstructuredTablesInOneDimension) {
  RngStream s(17, 0);
  Eigen::MatrixXd X(20, 1);
  for (Eigen::Index i = 0; i < 20; ++i) X(i, 0) = s.next_gaussian();
  const auto kernel = KernelSpec::gaussian(1.0);
  MaclaurinFamily fam;
  fam.structured = true;
  const auto tables = precompute_objective_tables(X, kernel, fam, 6);
  EXPECT_FALSE(tables.structured);
  const auto alloc = extended_allocate(2, 6, 8, tables, kernel);
  EXPECT_GE(alloc.p_star, 2);
  EXPECT_EQ(alloc.total(), 7);
}

TEST(AllocationFeasibility, CountsMatchBudgetAndActiveDegrees) {
  RngStream s(18, 0);
  const Eigen::MatrixXd X = random_matrix(s, 6, 3);
  // nu = 0: only the top degree is active below p
  const auto kernel = KernelSpec::polynomial(3, 0.0);
  const auto tables = precompute_objective_tables(X, kernel, MaclaurinFamily{}, 6);
  const auto counts = incremental_allocate(5, 9, tables, kernel);
  Eigen::Index total = 0;
  for (int n = 1; n <= 5; ++n) {
    const auto c = counts[static_cast<std::size_t>(n - 1)];
    total += c;
    if (kernel.coefficient(n) > 0.0)
      EXPECT_GE(c, 1);
    else
      EXPECT_EQ(c, 0);
  }
  EXPECT_EQ(total, 9);
}

TEST(AssembleFeatures, WidthIsTotalPlusDegreeZeroSlot) {
  RngStream s(19, 0);
  const Eigen::MatrixXd X = random_matrix(s, 4, 3);
  const auto kernel = KernelSpec::polynomial(3, 1.0);
  const auto tables = precompute_objective_tables(X, kernel, MaclaurinFamily{}, 5);
  const auto alloc = extended_allocate(2, 5, 12, tables, kernel);
  const auto phi = assemble_features(kernel, alloc, MaclaurinFamily{}, 5, X);
  EXPECT_EQ(phi.cols(), alloc.total() + 1);
  EXPECT_TRUE(phi.is_real);
}

TEST(AssembleFeatures, ZeroInputHasDeterministicConstantKernel) {
  const auto kernel = KernelSpec::polynomial(2, 0.5);
  Allocation alloc;
  alloc.p_star = 2;
  alloc.counts = {3, 2};
  const Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, 3);
  const auto phi = assemble_features(kernel, alloc, MaclaurinFamily{}, 7, X);
  const auto khat = approx_kernel(phi.values.row(0), phi.values.row(1));
  EXPECT_DOUBLE_EQ(khat.real(), kernel.coefficient(0));
  EXPECT_DOUBLE_EQ(khat.imag(), 0.0);
}

TEST(AssembleFeatures, RejectsInconsistentAllocation) {
  const auto kernel = KernelSpec::polynomial(2, 0.0);  // degree 1 inactive
  Allocation alloc;
  alloc.p_star = 2;
  alloc.counts = {1, 2};
  const Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, 3);
  EXPECT_THROW(assemble_features(kernel, alloc, MaclaurinFamily{}, 7, X), ConfigError);
}

TEST(AssembleFeatures, TruncatedExpansionUnbiasedness) {
  // mean of khat over 1e4 seeds within 4 std-errs of
  // g(x) g(y) sum_{n<=p*} a_n (x'y)^n
  RngStream s(20, 0);
  Eigen::MatrixXd X = random_matrix(s, 2, 3) * 0.7;
  const Eigen::VectorXd x = X.row(0).transpose();
  const Eigen::VectorXd y = X.row(1).transpose();
  const auto kernel = KernelSpec::gaussian(1.3);
  Allocation alloc;
  alloc.p_star = 3;
  alloc.counts = {2, 2, 1};
  double target = kernel.coefficient(0);
  for (int n = 1; n <= 3; ++n) target += kernel.coefficient(n) * std::pow(x.dot(y), n);
  target *= kernel.prefactor(x) * kernel.prefactor(y);
  for (const bool structured : {false, true}) {
    MaclaurinFamily fam;
    fam.structured = structured;
    fam.field = structured ? Field::kComplex : Field::kReal;
    const int R = 10000;
    std::vector<std::complex<double>> draws(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) {
      const auto phi =
          assemble_features(kernel, alloc, fam, static_cast<std::uint64_t>(5000 + r), X);
      draws[static_cast<std::size_t>(r)] = approx_kernel(phi.values.row(0), phi.values.row(1));
    }
    const auto stats = mc::compute_stats(draws);
    EXPECT_LE(std::abs(stats.mean - target), 4.0 * stats.mean_se) << "structured=" << structured;
  }
}

TEST(AssembleFeatures, GaussianSelfKernelMatchesTruncatedSeries) {
  // E[khat(x,x)] = exp(-|x/l|^2) sum_{n<=p*} |x/l|^{2n}/n!
  Eigen::MatrixXd X(1, 2);
  X << 1.1, -0.4;
  const Eigen::VectorXd x = X.row(0).transpose();
  const double l = 1.0;
  const auto kernel = KernelSpec::gaussian(l);
  Allocation alloc;
  alloc.p_star = 4;
  alloc.counts = {1, 1, 1, 1};
  const double r2 = x.squaredNorm() / (l * l);
  double series = 0.0;
  double term = 1.0;
  for (int n = 0; n <= 4; ++n) {
    series += term;
    term *= r2 / (n + 1);
  }
  const double target = std::exp(-r2) * series;
  EXPECT_NEAR(expected_self_kernel(kernel, alloc, x), target, 1e-12);
  const int R = 10000;
  std::vector<std::complex<double>> draws(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    const auto phi =
        assemble_features(kernel, alloc, MaclaurinFamily{}, static_cast<std::uint64_t>(999 + r), X);
    draws[static_cast<std::size_t>(r)] = approx_kernel(phi.values.row(0), phi.values.row(0));
  }
  const auto stats = mc::compute_stats(draws);
  EXPECT_LE(std::abs(stats.mean - target), 4.0 * stats.mean_se);
}

TEST(AssembleRandomMaclaurin, UnbiasedForTruncatedKernel) {
  RngStream s(22, 0);
  Eigen::MatrixXd X = random_matrix(s, 2, 3) * 0.6;
  const Eigen::VectorXd x = X.row(0).transpose();
  const Eigen::VectorXd y = X.row(1).transpose();
  const auto kernel = KernelSpec::exponential(1.2);
  const int p_max = 6;
  double target = kernel.coefficient(0);
  for (int n = 1; n <= p_max; ++n) target += kernel.coefficient(n) * std::pow(x.dot(y), n);
  const int R = 20000;
  std::vector<std::complex<double>> draws(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    RngStream stream(4000 + static_cast<std::uint64_t>(r), 0);
    const auto plan = random_maclaurin_assign(12, p_max, 2.0, stream);
    const auto phi =
        assemble_random_maclaurin(kernel, plan, MaclaurinFamily{}, static_cast<std::uint64_t>(r), X);
    EXPECT_EQ(phi.cols(), 13);
    draws[static_cast<std::size_t>(r)] = approx_kernel(phi.values.row(0), phi.values.row(1));
  }
  const auto stats = mc::compute_stats(draws);
  EXPECT_LE(std::abs(stats.mean - target), 4.0 * stats.mean_se);
}

TEST(AssembleFeatures, RealPipelineHasExactlyZeroImaginaryParts) {
  RngStream s(24, 0);
  const Eigen::MatrixXd X = random_matrix(s, 6, 3);
  const auto kernel = KernelSpec::gaussian(1.1);
  Allocation alloc;
  alloc.p_star = 3;
  alloc.counts = {2, 1, 1};
  for (const bool structured : {false, true}) {
    MaclaurinFamily fam;
    fam.structured = structured;
    const auto phi = assemble_features(kernel, alloc, fam, 11, X);
    EXPECT_TRUE(phi.is_real);
    for (Eigen::Index i = 0; i < phi.values.size(); ++i)
      EXPECT_EQ(phi.values.data()[i].imag(), 0.0);
  }
}

TEST(BiasCorrection, NonnegativeAndRestoresTailMass) {
  const auto kernel = KernelSpec::gaussian(1.0);
  Allocation alloc;
  alloc.p_star = 3;
  alloc.counts = {1, 1, 1};
  const auto correction = make_bias_correction(kernel, alloc);
  RngStream s(23, 0);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd x(2);
    x << 3.0 * (s.next_unit() - 0.5), 3.0 * (s.next_unit() - 0.5);
    const double c = correction(x);
    EXPECT_GE(c, 0.0);
    EXPECT_NEAR(c + expected_self_kernel(kernel, alloc, x), kernel.evaluate(x, x), 1e-12);
  }
}
