#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "polysketch/dataset.hpp"
#include "polysketch/errors.hpp"
#include "polysketch/gp.hpp"
#include "polysketch/maclaurin.hpp"
#include "polysketch/rng.hpp"
#include "polysketch/sketches.hpp"
#include "polysketch/tensor_srht.hpp"

namespace polysketch {

/// |K - Re(K_hat)|_F / |K|_F over a square test kernel matrix.
inline double rel_frobenius_error(const Eigen::MatrixXd& K_exact, const Eigen::MatrixXcd& K_hat) {
  if (K_exact.rows() != K_exact.cols()) throw DimensionError("rel_frobenius_error: K not square");
  if (K_hat.rows() != K_exact.rows() || K_hat.cols() != K_exact.cols())
    throw DimensionError("rel_frobenius_error: shape mismatch");
  const double denom = K_exact.norm();
  if (denom == 0.0) throw ConfigError("rel_frobenius_error: zero exact norm");
  return (K_exact - K_hat.real()).norm() / denom;
}

/// Mean squared error normalized by the (population) variance of the targets.
inline double norm_mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& y_true) {
  if (pred.size() != y_true.size()) throw DimensionError("norm_mse: length mismatch");
  const double mean = y_true.mean();
  const double var = (y_true.array() - mean).square().mean();
  if (var == 0.0) throw ConfigError("norm_mse: targets have zero variance");
  return (y_true - pred).array().square().mean() / var;
}

enum class MethodType { kSketch, kTensorSrht, kRff, kRandomMaclaurin, kOptimizedMaclaurin };
enum class TaskType { kFrobenius, kGpRegression, kGpClassification };

struct MethodConfig {
  std::string name;
  MethodType type = MethodType::kSketch;
  WeightFamily weights = WeightFamily::kRademacher;
  Field field = Field::kReal;

  bool structured_block = false;  // Maclaurin types: TensorSRHT degree blocks

  MaclaurinFamily maclaurin_family() const {
    MaclaurinFamily fam;
    fam.structured = structured_block;
    fam.weights = weights;
    fam.field = field;
    return fam;
  }
};

struct ExperimentConfig {
  std::string data_path;
  std::string label_column = "y";
  TaskType task = TaskType::kFrobenius;
  KernelSpec kernel = KernelSpec::polynomial(2, 0.0);
  std::vector<MethodConfig> methods;
  std::vector<Eigen::Index> num_features;
  std::vector<std::uint64_t> seeds;
  PreprocessFlags preprocess_flags;
  Eigen::Index subsample_m = 5000;
  Eigen::Index subsample_m_star = 5000;
  double train_fraction = 0.9;
  bool fixed_split = false;
  double noise_variance = 1.0;  // gp_regression
  double alpha = 1e-2;          // gp_classification
  int n_mc = 256;
  int p_min = 2;
  int p_max = 10;
  double maclaurin_c = 2.0;
  bool bias_correction = false;
  std::string output_path;
};

struct Report {
  struct Row {
    std::string method;
    Eigen::Index num_features;
    std::uint64_t seed;
    std::map<std::string, double> metrics;
    double wall_ms = 0.0;
  };
  struct Aggregate {
    std::string method;
    Eigen::Index num_features;
    std::string metric;
    double mean = 0.0;
    double std_dev = 0.0;
  };

  std::vector<Row> rows;

  std::vector<Aggregate> aggregates() const {
    std::map<std::tuple<std::string, Eigen::Index, std::string>, std::vector<double>> groups;
    for (const auto& r : rows)
      for (const auto& [metric, value] : r.metrics)
        groups[{r.method, r.num_features, metric}].push_back(value);
    std::vector<Aggregate> out;
    for (const auto& [key, values] : groups) {
      Aggregate a;
      a.method = std::get<0>(key);
      a.num_features = std::get<1>(key);
      a.metric = std::get<2>(key);
      const double n = static_cast<double>(values.size());
      a.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
      double ss = 0.0;
      for (double v : values) ss += (v - a.mean) * (v - a.mean);
      a.std_dev = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      out.push_back(a);
    }
    return out;
  }

  /// Canonical report document; the timestamp and wall-clock timings live in
  /// separate "meta"/"timings" fields so the rest is byte-identical across
  /// reruns of the same config.
  nlohmann::json to_json(bool with_meta = true) const {
    nlohmann::json doc;
    doc["runs"] = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json jr;
      jr["method"] = r.method;
      jr["num_features"] = r.num_features;
      jr["seed"] = r.seed;
      jr["metrics"] = r.metrics;
      doc["runs"].push_back(jr);
    }
    doc["aggregates"] = nlohmann::json::array();
    for (const auto& a : aggregates()) {
      nlohmann::json ja;
      ja["method"] = a.method;
      ja["num_features"] = a.num_features;
      ja["metric"] = a.metric;
      ja["mean"] = a.mean;
      ja["std"] = a.std_dev;
      doc["aggregates"].push_back(ja);
    }
    if (with_meta) {
      const auto now = std::chrono::system_clock::now().time_since_epoch();
      doc["meta"] = {
          {"unix_ms", std::chrono::duration_cast<std::chrono::milliseconds>(now).count()}};
      doc["timings"] = nlohmann::json::array();
      for (const auto& r : rows) doc["timings"].push_back(r.wall_ms);
    }
    return doc;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "method,num_features,seed,metric,value,wall_ms\n";
    for (const auto& r : rows)
      for (const auto& [metric, value] : r.metrics)
        out << r.method << ',' << r.num_features << ',' << r.seed << ',' << metric << ','
            << value << ',' << r.wall_ms << '\n';
    return out.str();
  }
};

namespace detail {

inline void check_known_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                             const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

inline WeightFamily parse_weight_family(const std::string& s) {
  if (s == "rademacher") return WeightFamily::kRademacher;
  if (s == "gaussian") return WeightFamily::kGaussian;
  throw ConfigError("config: unknown family '" + s + "'");
}

inline Field parse_field(const std::string& s) {
  if (s == "real") return Field::kReal;
  if (s == "complex") return Field::kComplex;
  throw ConfigError("config: unknown field '" + s + "'");
}

inline MethodType parse_method_type(const std::string& s) {
  if (s == "sketch") return MethodType::kSketch;
  if (s == "tensor_srht") return MethodType::kTensorSrht;
  if (s == "rff") return MethodType::kRff;
  if (s == "random_maclaurin") return MethodType::kRandomMaclaurin;
  if (s == "optimized_maclaurin") return MethodType::kOptimizedMaclaurin;
  throw ConfigError("config: unknown method type '" + s + "'");
}

inline std::uint64_t method_structural_key(const MethodConfig& mc) {
  return static_cast<std::uint64_t>(mc.type) * 16 + static_cast<std::uint64_t>(mc.weights) * 8 +
         static_cast<std::uint64_t>(mc.field) * 2 + (mc.structured_block ? 1 : 0);
}

inline std::uint64_t method_seed(std::uint64_t seed, const MethodConfig& mc, Eigen::Index D) {
  return splitmix64(splitmix64(seed ^ (method_structural_key(mc) * 0x9e3779b97f4a7c15ULL)) ^
                    static_cast<std::uint64_t>(D));
}

}  // namespace detail

/// Allocation <-> JSON, the cacheable CLI-facing form of an optimized
/// Maclaurin allocation.
inline nlohmann::json allocation_to_json(const Allocation& alloc) {
  nlohmann::json j;
  j["p_star"] = alloc.p_star;
  j["counts"] = alloc.counts;
  j["objective"] = alloc.objective;
  return j;
}

inline Allocation allocation_from_json(const nlohmann::json& j) {
  detail::check_known_keys(j, {"p_star", "counts", "objective"}, "allocation");
  Allocation alloc;
  alloc.p_star = j.at("p_star").get<int>();
  for (const auto& c : j.at("counts")) alloc.counts.push_back(c.get<Eigen::Index>());
  alloc.objective = j.at("objective").get<double>();
  if (static_cast<int>(alloc.counts.size()) != alloc.p_star)
    throw ConfigError("allocation: counts length must equal p_star");
  return alloc;
}

inline KernelSpec parse_kernel_config(const nlohmann::json& jk) {
  detail::check_known_keys(jk, {"kind", "degree", "nu", "scale", "length_scale"}, "kernel");
  const std::string kind = jk.at("kind").get<std::string>();
  if (kind == "polynomial")
    return KernelSpec::polynomial(jk.at("degree").get<int>(), jk.value("nu", 0.0),
                                  jk.value("scale", 1.0));
  if (kind == "exponential") return KernelSpec::exponential(jk.at("length_scale").get<double>());
  if (kind == "gaussian") return KernelSpec::gaussian(jk.at("length_scale").get<double>());
  throw ConfigError("config: unknown kernel kind '" + kind + "'");
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::check_known_keys(
      j,
      {"data", "task", "kernel", "methods", "num_features", "seeds", "preprocess", "subsample",
       "split", "noise_variance", "alpha", "n_mc", "maclaurin", "output"},
      "top level");
  ExperimentConfig cfg;
  if (j.contains("data")) {
    const auto& jd = j.at("data");
    detail::check_known_keys(jd, {"path", "label_column"}, "data");
    cfg.data_path = jd.value("path", std::string());
    cfg.label_column = jd.value("label_column", std::string("y"));
  }
  const std::string task = j.value("task", std::string("frobenius"));
  if (task == "frobenius")
    cfg.task = TaskType::kFrobenius;
  else if (task == "gp_regression")
    cfg.task = TaskType::kGpRegression;
  else if (task == "gp_classification")
    cfg.task = TaskType::kGpClassification;
  else
    throw ConfigError("config: unknown task '" + task + "'");
  cfg.kernel = parse_kernel_config(j.at("kernel"));
  if (!j.contains("methods") || !j.at("methods").is_array() || j.at("methods").empty())
    throw ConfigError("config: 'methods' must be a non-empty array");
  for (const auto& jm : j.at("methods")) {
    detail::check_known_keys(jm, {"name", "type", "family", "field", "block"}, "methods[]");
    MethodConfig mc;
    mc.name = jm.at("name").get<std::string>();
    mc.type = detail::parse_method_type(jm.at("type").get<std::string>());
    mc.weights = detail::parse_weight_family(jm.value("family", std::string("rademacher")));
    mc.field = detail::parse_field(jm.value("field", std::string("real")));
    const std::string block = jm.value("block", std::string("unstructured"));
    if (block == "tensor_srht")
      mc.structured_block = true;
    else if (block != "unstructured")
      throw ConfigError("config: unknown block '" + block + "'");
    cfg.methods.push_back(std::move(mc));
  }
  for (const auto& v : j.at("num_features")) cfg.num_features.push_back(v.get<Eigen::Index>());
  for (const auto& v : j.at("seeds")) cfg.seeds.push_back(v.get<std::uint64_t>());
  if (cfg.num_features.empty() || cfg.seeds.empty())
    throw ConfigError("config: 'num_features' and 'seeds' must be non-empty");
  if (j.contains("preprocess")) {
    const auto& jp = j.at("preprocess");
    detail::check_known_keys(jp, {"zero_center", "unit_normalize", "pad_pow2"}, "preprocess");
    cfg.preprocess_flags.zero_center = jp.value("zero_center", false);
    cfg.preprocess_flags.unit_normalize = jp.value("unit_normalize", false);
    cfg.preprocess_flags.pad_pow2 = jp.value("pad_pow2", false);
  }
  if (j.contains("subsample")) {
    const auto& js = j.at("subsample");
    detail::check_known_keys(js, {"m", "m_star"}, "subsample");
    cfg.subsample_m = js.value("m", cfg.subsample_m);
    cfg.subsample_m_star = js.value("m_star", cfg.subsample_m_star);
  }
  if (j.contains("split")) {
    const auto& js = j.at("split");
    detail::check_known_keys(js, {"train_fraction", "fixed"}, "split");
    cfg.train_fraction = js.value("train_fraction", 0.9);
    cfg.fixed_split = js.value("fixed", false);
    if (cfg.train_fraction <= 0.0 || cfg.train_fraction >= 1.0)
      throw ConfigError("config: train_fraction must lie in (0,1)");
  }
  cfg.noise_variance = j.value("noise_variance", 1.0);
  cfg.alpha = j.value("alpha", 1e-2);
  cfg.n_mc = j.value("n_mc", 256);
  if (j.contains("maclaurin")) {
    const auto& jm = j.at("maclaurin");
    detail::check_known_keys(jm, {"p_min", "p_max", "c", "bias_correction"}, "maclaurin");
    cfg.p_min = jm.value("p_min", 2);
    cfg.p_max = jm.value("p_max", 10);
    cfg.maclaurin_c = jm.value("c", 2.0);
    cfg.bias_correction = jm.value("bias_correction", false);
  }
  cfg.output_path = j.value("output", std::string());
  return cfg;
}

namespace detail {

struct MethodFeatures {
  FeatureMatrix train;
  FeatureMatrix test;
  Allocation allocation;      // optimized Maclaurin only
  bool has_allocation = false;
};

/// Builds the per-method feature maps for train and test with shared weights.
/// Maclaurin methods spend D-1 on polynomial degrees plus the degree-0 slot.
inline MethodFeatures build_method_features(const ExperimentConfig& cfg, const MethodConfig& mc,
                                            Eigen::Index D, std::uint64_t seed,
                                            const Eigen::MatrixXd& X_train,
                                            const Eigen::MatrixXd& X_test) {
  MethodFeatures out;
  const std::uint64_t ms = method_seed(seed, mc, D);
  switch (mc.type) {
    case MethodType::kSketch:
    case MethodType::kTensorSrht: {
      if (cfg.kernel.kind != KernelSpec::Kind::kPolynomial)
        throw ConfigError("method '" + mc.name + "': plain polynomial sketches need a polynomial kernel");
      Eigen::MatrixXd Xtr = X_train;
      Eigen::MatrixXd Xte = X_test;
      if (cfg.kernel.nu > 0.0) {
        Xtr.conservativeResize(Eigen::NoChange, Xtr.cols() + 1);
        Xtr.col(Xtr.cols() - 1).setConstant(std::sqrt(cfg.kernel.nu));
        Xte.conservativeResize(Eigen::NoChange, Xte.cols() + 1);
        Xte.col(Xte.cols() - 1).setConstant(std::sqrt(cfg.kernel.nu));
      }
      const double root_scale = std::sqrt(cfg.kernel.scale);
      if (mc.type == MethodType::kSketch) {
        SketchSpec spec;
        spec.family = mc.weights;
        spec.field = mc.field;
        spec.degree = cfg.kernel.degree;
        spec.num_features = D;
        spec.input_dim = Xtr.cols();
        spec.seed = ms;
        UnstructuredSketch sk(spec);
        out.train = sk.apply(Xtr);
        out.test = sk.apply(Xte);
      } else {
        TensorSrhtSketch sk(cfg.kernel.degree, D, Xtr.cols(), mc.field, ms);
        out.train = sk.apply(Xtr);
        out.test = sk.apply(Xte);
      }
      out.train.values *= root_scale;
      out.test.values *= root_scale;
      return out;
    }
    case MethodType::kRff: {
      if (cfg.kernel.kind != KernelSpec::Kind::kGaussian)
        throw ConfigError("method '" + mc.name + "': rff needs a gaussian kernel");
      out.train = rff_features(cfg.kernel.length_scale, D, X_train.cols(), mc.field, ms, X_train);
      out.test = rff_features(cfg.kernel.length_scale, D, X_test.cols(), mc.field, ms, X_test);
      return out;
    }
    case MethodType::kRandomMaclaurin: {
      RngStream stream(ms, 0x524d41ULL);
      const auto plan = random_maclaurin_assign(D - 1, cfg.p_max, cfg.maclaurin_c, stream);
      MaclaurinFamily fam = mc.maclaurin_family();
      out.train = assemble_random_maclaurin(cfg.kernel, plan, fam, ms, X_train);
      out.test = assemble_random_maclaurin(cfg.kernel, plan, fam, ms, X_test);
      return out;
    }
    case MethodType::kOptimizedMaclaurin: {
      MaclaurinFamily fam = mc.maclaurin_family();
      const auto tables = precompute_objective_tables(X_train, cfg.kernel, fam, cfg.p_max);
      out.allocation = extended_allocate(cfg.p_min, cfg.p_max, D, tables, cfg.kernel);
      out.has_allocation = true;
      out.train = assemble_features(cfg.kernel, out.allocation, fam, ms, X_train);
      out.test = assemble_features(cfg.kernel, out.allocation, fam, ms, X_test);
      return out;
    }
  }
  throw ConfigError("build_method_features: unknown method type");
}

inline Eigen::MatrixXd exact_kernel_matrix(const KernelSpec& kernel, const Eigen::MatrixXd& A,
                                           const Eigen::MatrixXd& B) {
  Eigen::MatrixXd K(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j)
      K(i, j) = kernel.evaluate(A.row(i).transpose(), B.row(j).transpose());
  return K;
}

inline std::vector<Eigen::Index> subsample_indices(RngStream& stream, Eigen::Index n,
                                                   Eigen::Index m) {
  auto perm = random_permutation(stream, n);
  const Eigen::Index take = std::min(n, m);
  perm.resize(static_cast<std::size_t>(take));
  return perm;
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
  return out;
}

inline Eigen::VectorXd take_rows(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = y[idx[i]];
  return out;
}

constexpr double kMinKlVariance = 1e-12;

}  // namespace detail

inline Report run_experiment(const ExperimentConfig& cfg, const Dataset& dataset) {
  Report report;
  const Eigen::Index N = dataset.X.rows();
  if (N < 2) throw ConfigError("run_experiment: dataset too small");

  for (const std::uint64_t seed : cfg.seeds) {
    // train/test split, re-drawn per seed unless fixed
    std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;
    if (!cfg.fixed_split) {
      RngStream split_stream(seed, 0x53504c4954ULL);
      order = random_permutation(split_stream, N);
    }
    const auto n_train = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::floor(cfg.train_fraction * static_cast<double>(N))));
    std::vector<Eigen::Index> train_idx(order.begin(), order.begin() + n_train);
    std::vector<Eigen::Index> test_idx(order.begin() + n_train, order.end());
    if (test_idx.empty()) throw ConfigError("run_experiment: empty test split");

    RngStream sub_stream(seed, 0x535542ULL);
    auto train_pick = detail::subsample_indices(sub_stream, static_cast<Eigen::Index>(train_idx.size()),
                                                cfg.subsample_m);
    auto test_pick = detail::subsample_indices(sub_stream, static_cast<Eigen::Index>(test_idx.size()),
                                               cfg.subsample_m_star);
    std::vector<Eigen::Index> sub_train, sub_test;
    for (auto i : train_pick) sub_train.push_back(train_idx[static_cast<std::size_t>(i)]);
    for (auto i : test_pick) sub_test.push_back(test_idx[static_cast<std::size_t>(i)]);

    const Eigen::MatrixXd Xtr = detail::take_rows(dataset.X, sub_train);
    const Eigen::VectorXd ytr = detail::take_rows(dataset.y, sub_train);
    const Eigen::MatrixXd Xte = detail::take_rows(dataset.X, sub_test);
    const Eigen::VectorXd yte = detail::take_rows(dataset.y, sub_test);

    for (const auto& mc : cfg.methods) {
      for (const Eigen::Index D : cfg.num_features) {
        const auto t0 = std::chrono::steady_clock::now();
        Report::Row row;
        row.method = mc.name;
        row.num_features = D;
        row.seed = seed;

        auto feats = detail::build_method_features(cfg, mc, D, seed, Xtr, Xte);

        switch (cfg.task) {
          case TaskType::kFrobenius: {
            const Eigen::MatrixXd K = detail::exact_kernel_matrix(cfg.kernel, Xte, Xte);
            const Eigen::MatrixXcd K_hat = approx_kernel_matrix(feats.test, feats.test);
            row.metrics["rel_frobenius"] = rel_frobenius_error(K, K_hat);
            break;
          }
          case TaskType::kGpRegression: {
            const auto noise = NoiseModel::homoscedastic(cfg.noise_variance, Xtr.rows());
            GPFit fit(feats.train, ytr, noise);
            if (cfg.bias_correction && feats.has_allocation)
              fit.set_bias_correction(make_bias_correction(cfg.kernel, feats.allocation));
            const PosteriorSummary approx = fit.predict(feats.test, &Xte);
            const Eigen::MatrixXd K = detail::exact_kernel_matrix(cfg.kernel, Xtr, Xtr);
            const Eigen::MatrixXd Ks = detail::exact_kernel_matrix(cfg.kernel, Xte, Xtr);
            Eigen::VectorXd kss(Xte.rows());
            for (Eigen::Index i = 0; i < Xte.rows(); ++i)
              kss[i] = cfg.kernel.evaluate(Xte.row(i).transpose(), Xte.row(i).transpose());
            const PosteriorSummary exact = exact_gp_reference(K, Ks, kss, ytr, noise);
            row.metrics["kl"] = kl_diag_gaussians(
                approx.mean, (approx.variance.array() + cfg.noise_variance).matrix(), exact.mean,
                (exact.variance.array() + cfg.noise_variance).matrix());
            row.metrics["mnll"] = mnll_regression(approx, yte, cfg.noise_variance);
            row.metrics["norm_mse"] = norm_mse(approx.mean, yte);
            break;
          }
          case TaskType::kGpClassification: {
            // labels must be contiguous integers from 0
            Eigen::VectorXi labels_tr(Xtr.rows()), labels_te(Xte.rows());
            int num_classes = 0;
            auto to_label = [&](double v, Eigen::Index row_no) {
              const int c = static_cast<int>(std::llround(v));
              if (std::abs(v - c) > 1e-9 || c < 0)
                throw ConfigError("run_experiment: non-integer class label at row " +
                                  std::to_string(row_no));
              return c;
            };
            for (Eigen::Index i = 0; i < Xtr.rows(); ++i) {
              labels_tr[i] = to_label(ytr[i], i);
              num_classes = std::max(num_classes, labels_tr[i] + 1);
            }
            for (Eigen::Index i = 0; i < Xte.rows(); ++i) {
              labels_te[i] = to_label(yte[i], i);
              num_classes = std::max(num_classes, labels_te[i] + 1);
            }
            std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
            for (Eigen::Index i = 0; i < labels_tr.size(); ++i)
              seen[static_cast<std::size_t>(labels_tr[i])] = true;
            for (std::size_t c = 0; c < seen.size(); ++c)
              if (!seen[c])
                throw ConfigError("run_experiment: class labels not contiguous from 0 (missing " +
                                  std::to_string(c) + " in training split)");
            Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(Xtr.rows(), num_classes);
            for (Eigen::Index i = 0; i < Xtr.rows(); ++i) one_hot(i, labels_tr[i]) = 1.0;
            const DirichletTargets targets = dirichlet_transform(one_hot, cfg.alpha);

            const Eigen::MatrixXd K = detail::exact_kernel_matrix(cfg.kernel, Xtr, Xtr);
            const Eigen::MatrixXd Ks = detail::exact_kernel_matrix(cfg.kernel, Xte, Xtr);
            Eigen::VectorXd kss(Xte.rows());
            for (Eigen::Index i = 0; i < Xte.rows(); ++i)
              kss[i] = cfg.kernel.evaluate(Xte.row(i).transpose(), Xte.row(i).transpose());
            std::vector<GPFit> fits;
            fits.reserve(static_cast<std::size_t>(num_classes));
            double kl_total = 0.0;
            for (int c = 0; c < num_classes; ++c) {
              NoiseModel noise;
              noise.variances = targets.variances.col(c);
              fits.emplace_back(feats.train, targets.y_transformed.col(c), noise);
              if (cfg.bias_correction && feats.has_allocation)
                fits.back().set_bias_correction(make_bias_correction(cfg.kernel, feats.allocation));
              const PosteriorSummary approx = fits.back().predict(feats.test, &Xte);
              const PosteriorSummary exact =
                  exact_gp_reference(K, Ks, kss, targets.y_transformed.col(c), noise);
              kl_total += kl_diag_gaussians(
                  approx.mean, approx.variance.cwiseMax(detail::kMinKlVariance), exact.mean,
                  exact.variance.cwiseMax(detail::kMinKlVariance));
            }
            RngStream mc_stream(detail::method_seed(seed, mc, D), 0x434c53ULL);
            const Eigen::MatrixXd probs = classify(fits, feats.test, cfg.n_mc, mc_stream);
            Eigen::Index wrong = 0;
            for (Eigen::Index i = 0; i < probs.rows(); ++i) {
              Eigen::Index argmax = 0;
              probs.row(i).maxCoeff(&argmax);
              if (static_cast<int>(argmax) != labels_te[i]) ++wrong;
            }
            row.metrics["error_rate"] =
                static_cast<double>(wrong) / static_cast<double>(probs.rows());
            row.metrics["mnll"] = mnll_classification(probs, labels_te);
            row.metrics["kl"] = kl_total / static_cast<double>(num_classes);
            break;
          }
        }
        const auto t1 = std::chrono::steady_clock::now();
        row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

inline Report run_experiment(const ExperimentConfig& cfg) {
  if (cfg.data_path.empty()) throw ConfigError("run_experiment: config has no data path");
  Dataset ds = load_csv(cfg.data_path, cfg.label_column);
  ds = preprocess(std::move(ds), cfg.preprocess_flags);
  return run_experiment(cfg, ds);
}

/// Mean absolute error of real vs complex Rademacher sketches at
/// x = y = (1..1)/sqrt(d), per degree, over independent constructions.
struct Fig1Row {
  int degree;
  std::string method;
  double mae;
  double stderr_mae;
};

inline std::vector<Fig1Row> fig1_benchmark(Eigen::Index d, Eigen::Index D,
                                           const std::vector<int>& p_list, int trials,
                                           std::uint64_t seed) {
  if (d < 1 || D < 1 || trials < 1) throw ConfigError("fig1_benchmark: invalid sizes");
  Eigen::MatrixXd X(1, d);
  X.setConstant(1.0 / std::sqrt(static_cast<double>(d)));
  std::vector<Fig1Row> rows;
  for (const int p : p_list) {
    for (const Field field : {Field::kReal, Field::kComplex}) {
      double sum = 0.0, sum_sq = 0.0;
      for (int t = 0; t < trials; ++t) {
        SketchSpec spec;
        spec.family = WeightFamily::kRademacher;
        spec.field = field;
        spec.degree = p;
        spec.num_features = D;
        spec.input_dim = d;
        spec.seed = detail::splitmix64(seed ^ (static_cast<std::uint64_t>(p) << 32) ^
                                       (static_cast<std::uint64_t>(t) << 1) ^
                                       (field == Field::kComplex ? 1u : 0u));
        const FeatureMatrix phi = UnstructuredSketch(spec).apply(X);
        const std::complex<double> k_hat = approx_kernel(phi.values.row(0), phi.values.row(0));
        const double err = std::abs(k_hat - std::complex<double>(1.0, 0.0));
        sum += err;
        sum_sq += err * err;
      }
      const double mae = sum / trials;
      const double var = std::max(sum_sq / trials - mae * mae, 0.0);
      rows.push_back({p, field == Field::kReal ? "rademacher_real" : "rademacher_complex", mae,
                      std::sqrt(var / trials)});
    }
  }
  return rows;
}

inline std::string fig1_to_csv(const std::vector<Fig1Row>& rows) {
  std::ostringstream out;
  out << "p,method,mae,stderr\n";
  for (const auto& r : rows)
    out << r.degree << ',' << r.method << ',' << r.mae << ',' << r.stderr_mae << '\n';
  return out.str();
}

}  // namespace polysketch
