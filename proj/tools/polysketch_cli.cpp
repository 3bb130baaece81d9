// Command-line front end: sketch emission, variance evaluation, Maclaurin
// allocation, GP fit/predict, the benchmark harness, and the real-vs-complex
// error table. Exit codes: 0 success, 2 configuration error, 3 numerical
// error.

#include <Eigen/Dense>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "polysketch/polysketch.hpp"

namespace {

using nlohmann::json;
using namespace polysketch;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }
  return j;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << content;
}

Eigen::VectorXd parse_vector(const std::string& csv) {
  std::vector<double> vals;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      vals.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse vector entry '" + cell + "'");
    }
  }
  if (vals.empty()) throw ConfigError("empty vector argument");
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v[static_cast<Eigen::Index>(i)] = vals[i];
  return v;
}

MethodConfig parse_method(const json& jm) {
  detail::check_known_keys(jm, {"name", "type", "family", "field", "block"}, "method");
  MethodConfig mc;
  mc.name = jm.value("name", std::string("method"));
  mc.type = detail::parse_method_type(jm.at("type").get<std::string>());
  mc.weights = detail::parse_weight_family(jm.value("family", std::string("rademacher")));
  mc.field = detail::parse_field(jm.value("field", std::string("real")));
  if (jm.value("block", std::string("unstructured")) == "tensor_srht") mc.structured_block = true;
  return mc;
}

Dataset load_dataset(const json& jd) {
  detail::check_known_keys(jd, {"path", "label_column"}, "data");
  return load_csv(jd.at("path").get<std::string>(), jd.value("label_column", std::string("y")));
}

std::string features_to_csv(const FeatureMatrix& phi) {
  std::ostringstream out;
  for (Eigen::Index j = 0; j < phi.cols(); ++j) {
    out << (j ? "," : "") << "phi" << j << "_re,phi" << j << "_im";
  }
  out << '\n';
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    for (Eigen::Index j = 0; j < phi.cols(); ++j) {
      const auto v = phi.values(i, j);
      out << (j ? "," : "") << v.real() << ',' << v.imag();
    }
    out << '\n';
  }
  return out.str();
}

int cmd_sketch(const std::string& config_path, std::optional<std::uint64_t> seed_override,
               const std::string& out_override) {
  const json j = load_json(config_path);
  detail::check_known_keys(
      j, {"data", "kernel", "method", "num_features", "seed", "preprocess", "maclaurin", "output"},
      "sketch config");
  ExperimentConfig cfg;
  cfg.kernel = parse_kernel_config(j.at("kernel"));
  if (j.contains("maclaurin")) {
    const auto& jm = j.at("maclaurin");
    detail::check_known_keys(jm, {"p_min", "p_max", "c", "bias_correction"}, "maclaurin");
    cfg.p_min = jm.value("p_min", 2);
    cfg.p_max = jm.value("p_max", 10);
    cfg.maclaurin_c = jm.value("c", 2.0);
  }
  const MethodConfig mc = parse_method(j.at("method"));
  const auto D = j.at("num_features").get<Eigen::Index>();
  const std::uint64_t seed = seed_override.value_or(j.value("seed", 0ull));
  Dataset ds = load_dataset(j.at("data"));
  if (j.contains("preprocess")) {
    const auto& jp = j.at("preprocess");
    detail::check_known_keys(jp, {"zero_center", "unit_normalize", "pad_pow2"}, "preprocess");
    PreprocessFlags flags;
    flags.zero_center = jp.value("zero_center", false);
    flags.unit_normalize = jp.value("unit_normalize", false);
    flags.pad_pow2 = jp.value("pad_pow2", false);
    ds = preprocess(std::move(ds), flags);
  }
  const Eigen::MatrixXd empty(0, ds.X.cols());
  const auto feats = detail::build_method_features(cfg, mc, D, seed, ds.X, empty);
  const std::string out = !out_override.empty() ? out_override
                          : j.contains("output") ? j.at("output").get<std::string>()
                                                 : std::string();
  const std::string csv = features_to_csv(feats.train);
  if (out.empty())
    std::cout << csv;
  else
    write_text(out, csv);
  return 0;
}

int cmd_variance(const std::string& x_csv, const std::string& y_csv, int degree, Eigen::Index D) {
  const Eigen::VectorXd x = parse_vector(x_csv);
  const Eigen::VectorXd y = parse_vector(y_csv);
  json out;
  out["degree"] = degree;
  out["num_features"] = D;
  out["rademacher_real"] = var_unstructured(x, y, degree, SketchMoments::rademacher_real());
  out["gaussian_real"] = var_unstructured(x, y, degree, SketchMoments::gaussian_real());
  out["rademacher_complex"] = var_unstructured(x, y, degree, SketchMoments::rademacher_complex());
  out["gaussian_complex"] = var_unstructured(x, y, degree, SketchMoments::gaussian_complex());
  const auto d = static_cast<std::int64_t>(x.size());
  if (d >= 2) {
    out["tensor_srht_real"] = var_tensor_srht(x, y, degree, D, d, SketchMoments::rademacher_real());
    out["tensor_srht_complex"] =
        var_tensor_srht(x, y, degree, D, d, SketchMoments::rademacher_complex());
    out["surrogate_tensor_srht_real"] =
        surrogate_var_tensor_srht(x, y, degree, D, d, SketchMoments::rademacher_real());
    out["surrogate_tensor_srht_complex"] =
        surrogate_var_tensor_srht(x, y, degree, D, d, SketchMoments::rademacher_complex());
  }
  out["sigma_sq_real"] = sigma_sq_bound(x, y, degree, 1.0);
  out["sigma_sq_complex"] = sigma_sq_bound(x, y, degree, 0.5);
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_allocate(const std::string& config_path, const std::string& out_override) {
  const json j = load_json(config_path);
  detail::check_known_keys(
      j, {"data", "kernel", "method", "num_features", "subsample", "maclaurin", "output"},
      "allocate config");
  const auto kernel = parse_kernel_config(j.at("kernel"));
  MethodConfig mc;
  mc.type = MethodType::kOptimizedMaclaurin;
  if (j.contains("method")) mc = parse_method(j.at("method"));
  int p_min = 2, p_max = 10;
  if (j.contains("maclaurin")) {
    const auto& jm = j.at("maclaurin");
    detail::check_known_keys(jm, {"p_min", "p_max", "c", "bias_correction"}, "maclaurin");
    p_min = jm.value("p_min", 2);
    p_max = jm.value("p_max", 10);
  }
  Dataset ds = load_dataset(j.at("data"));
  Eigen::Index m = 5000;
  if (j.contains("subsample")) {
    detail::check_known_keys(j.at("subsample"), {"m", "m_star"}, "subsample");
    m = j.at("subsample").value("m", m);
  }
  Eigen::MatrixXd sample = ds.X;
  if (sample.rows() > m) sample = sample.topRows(m);
  const auto tables = precompute_objective_tables(sample, kernel, mc.maclaurin_family(), p_max);
  const auto alloc =
      extended_allocate(p_min, p_max, j.at("num_features").get<Eigen::Index>(), tables, kernel);
  const json out = allocation_to_json(alloc);
  const std::string path = !out_override.empty() ? out_override
                           : j.contains("output") ? j.at("output").get<std::string>()
                                                  : std::string();
  if (path.empty())
    std::cout << out.dump(2) << '\n';
  else
    write_text(path, out.dump(2) + "\n");
  return 0;
}

int cmd_gp(const std::string& config_path, std::optional<std::uint64_t> seed_override,
           const std::string& out_override) {
  const json j = load_json(config_path);
  detail::check_known_keys(j,
                           {"data", "test_data", "task", "kernel", "method", "num_features",
                            "seed", "noise_variance", "alpha", "n_mc", "maclaurin", "output"},
                           "gp config");
  ExperimentConfig cfg;
  cfg.kernel = parse_kernel_config(j.at("kernel"));
  if (j.contains("maclaurin")) {
    const auto& jm = j.at("maclaurin");
    detail::check_known_keys(jm, {"p_min", "p_max", "c", "bias_correction"}, "maclaurin");
    cfg.p_min = jm.value("p_min", 2);
    cfg.p_max = jm.value("p_max", 10);
    cfg.maclaurin_c = jm.value("c", 2.0);
    cfg.bias_correction = jm.value("bias_correction", false);
  }
  const MethodConfig mc = parse_method(j.at("method"));
  const auto D = j.at("num_features").get<Eigen::Index>();
  const std::uint64_t seed = seed_override.value_or(j.value("seed", 0ull));
  const std::string task = j.value("task", std::string("regression"));
  const Dataset train = load_dataset(j.at("data"));
  const Dataset test = load_dataset(j.at("test_data"));
  if (train.X.cols() != test.X.cols())
    throw ConfigError("gp: train and test dimensionality differ");

  const auto feats = detail::build_method_features(cfg, mc, D, seed, train.X, test.X);
  std::ostringstream out;
  if (task == "regression") {
    const double noise_var = j.value("noise_variance", 1.0);
    GPFit fit(feats.train, train.y, NoiseModel::homoscedastic(noise_var, train.X.rows()));
    if (cfg.bias_correction && feats.has_allocation)
      fit.set_bias_correction(make_bias_correction(cfg.kernel, feats.allocation));
    const auto post = fit.predict(feats.test, &test.X);
    out << "mean,variance\n";
    for (Eigen::Index i = 0; i < post.mean.size(); ++i)
      out << post.mean[i] << ',' << post.variance[i] << '\n';
  } else if (task == "classification") {
    const double alpha = j.value("alpha", 1e-2);
    const int n_mc = j.value("n_mc", 256);
    int num_classes = 0;
    for (Eigen::Index i = 0; i < train.y.size(); ++i)
      num_classes = std::max(num_classes, static_cast<int>(std::llround(train.y[i])) + 1);
    Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(train.X.rows(), num_classes);
    for (Eigen::Index i = 0; i < train.y.size(); ++i) {
      const auto c = static_cast<int>(std::llround(train.y[i]));
      if (c < 0 || c >= num_classes) throw ConfigError("gp: invalid class label");
      one_hot(i, c) = 1.0;
    }
    const auto targets = dirichlet_transform(one_hot, alpha);
    std::vector<GPFit> fits;
    for (int c = 0; c < num_classes; ++c) {
      NoiseModel noise;
      noise.variances = targets.variances.col(c);
      fits.emplace_back(feats.train, targets.y_transformed.col(c), noise);
    }
    RngStream mc_stream(seed, 0x434c53ULL);
    const auto probs = classify(fits, feats.test, n_mc, mc_stream);
    for (int c = 0; c < num_classes; ++c) out << (c ? "," : "") << "p" << c;
    out << '\n';
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      for (int c = 0; c < num_classes; ++c) out << (c ? "," : "") << probs(i, c);
      out << '\n';
    }
  } else {
    throw ConfigError("gp: unknown task '" + task + "'");
  }
  const std::string path = !out_override.empty() ? out_override
                           : j.contains("output") ? j.at("output").get<std::string>()
                                                  : std::string();
  if (path.empty())
    std::cout << out.str();
  else
    write_text(path, out.str());
  return 0;
}

int cmd_bench(const std::string& config_path, std::optional<std::uint64_t> seed_override,
              const std::string& out_override) {
  const json j = load_json(config_path);
  ExperimentConfig cfg = parse_experiment_config(j);
  if (seed_override) cfg.seeds = {*seed_override};
  const Report report = run_experiment(cfg);
  const std::string base = !out_override.empty()        ? out_override
                           : !cfg.output_path.empty()   ? cfg.output_path
                                                        : std::string("report");
  write_text(base + ".json", report.to_json().dump(2) + "\n");
  write_text(base + ".csv", report.to_csv());
  for (const auto& a : report.aggregates())
    std::cout << a.method << " D=" << a.num_features << ' ' << a.metric << " = " << a.mean
              << " +- " << a.std_dev << '\n';
  return 0;
}

int cmd_fig1(Eigen::Index d, Eigen::Index D, const std::string& p_list_csv, int trials,
             std::uint64_t seed, const std::string& out_path) {
  std::vector<int> p_list;
  std::stringstream ss(p_list_csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) p_list.push_back(std::stoi(cell));
  if (p_list.empty()) throw ConfigError("fig1: empty p list");
  const auto rows = fig1_benchmark(d, D, p_list, trials, seed);
  const auto csv = fig1_to_csv(rows);
  if (out_path.empty())
    std::cout << csv;
  else
    write_text(out_path, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-feature polynomial and Gaussian kernel approximation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  std::optional<std::uint64_t> seed_override;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "JSON config path");
    if (needs_config) opt->required();
    std::uint64_t seed_holder = 0;
    sub->add_option("--seed", seed_holder, "seed override")
        ->each([&seed_override](const std::string& s) { seed_override = std::stoull(s); });
    sub->add_option("--out", out_path, "output path override");
  };

  auto* sketch = app.add_subcommand("sketch", "emit features for a dataset");
  add_common(sketch, true);

  auto* variance = app.add_subcommand("variance", "evaluate variance formulas for two vectors");
  std::string x_csv, y_csv;
  int var_degree = 1;
  Eigen::Index var_D = 1;
  variance->add_option("--x", x_csv, "first vector, comma separated")->required();
  variance->add_option("--y", y_csv, "second vector, comma separated")->required();
  variance->add_option("--degree", var_degree, "polynomial degree");
  variance->add_option("--num-features", var_D, "feature count for structured formulas");

  auto* allocate = app.add_subcommand("allocate", "optimize Maclaurin feature allocation");
  add_common(allocate, true);

  auto* gp = app.add_subcommand("gp", "fit a feature-space GP and predict");
  add_common(gp, false);
  bool print_grids = false;
  gp->add_flag("--grids", print_grids,
               "print the preset alpha and noise-variance candidate grids and exit");

  auto* bench = app.add_subcommand("bench", "run a benchmark experiment");
  add_common(bench, true);

  auto* fig1 = app.add_subcommand("fig1", "real vs complex Rademacher error table");
  Eigen::Index fig_d = 100, fig_D = 2000;
  std::string fig_p = "1,2,3,4,5,6,7,8,9,10";
  int fig_trials = 50;
  std::uint64_t fig_seed = 0;
  fig1->add_option("--d", fig_d, "input dimension");
  fig1->add_option("--D", fig_D, "number of features");
  fig1->add_option("--p-list", fig_p, "comma-separated degrees");
  fig1->add_option("--trials", fig_trials, "independent constructions");
  fig1->add_option("--seed", fig_seed, "seed");
  fig1->add_option("--out", out_path, "output CSV path");

  try {
    app.parse(argc, argv);
    if (sketch->parsed()) return cmd_sketch(config_path, seed_override, out_path);
    if (variance->parsed()) return cmd_variance(x_csv, y_csv, var_degree, var_D);
    if (allocate->parsed()) return cmd_allocate(config_path, out_path);
    if (gp->parsed()) {
      if (print_grids) {
        json grids;
        grids["alpha"] = alpha_grid();
        grids["noise_variance"] = noise_variance_grid();
        std::cout << grids.dump(2) << '\n';
        return 0;
      }
      if (config_path.empty()) throw ConfigError("gp: --config is required");
      return cmd_gp(config_path, seed_override, out_path);
    }
    if (bench->parsed()) return cmd_bench(config_path, seed_override, out_path);
    if (fig1->parsed()) return cmd_fig1(fig_d, fig_D, fig_p, fig_trials, fig_seed, out_path);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
