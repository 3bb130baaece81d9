#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "polysketch/errors.hpp"
#include "polysketch/fwht.hpp"

namespace polysketch {

struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::string> feature_names;
  std::string source_path;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_numeric_cell(const std::string& cell, std::size_t row, std::size_t col) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw ConfigError("load_csv: non-numeric cell at row " + std::to_string(row) + ", column " +
                      std::to_string(col) + ": '" + cell + "'");
  if (!std::isfinite(v))
    throw ConfigError("load_csv: non-finite value at row " + std::to_string(row) + ", column " +
                      std::to_string(col));
  return v;
}

}  // namespace detail

/// Reads a rectangular numeric CSV with a header row; the named label column
/// becomes y, the rest X, in file order. Row/column coordinates in error
/// messages are 1-based over the data rows.
inline Dataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("load_csv: empty file '" + path + "'");
  const auto header = detail::split_csv_line(line);
  std::ptrdiff_t label_idx = -1;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == label_column) label_idx = static_cast<std::ptrdiff_t>(c);
  if (label_idx < 0)
    throw ConfigError("load_csv: label column '" + label_column + "' not found in '" + path + "'");

  std::vector<std::vector<double>> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row_no;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ConfigError("load_csv: row " + std::to_string(row_no) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    std::vector<double> vals(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      vals[c] = detail::parse_numeric_cell(cells[c], row_no, c + 1);
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ConfigError("load_csv: no data rows in '" + path + "'");

  Dataset ds;
  ds.source_path = path;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(header.size()) - 1;
  ds.X.resize(n, d);
  ds.y.resize(n);
  for (std::size_t c = 0; c < header.size(); ++c)
    if (static_cast<std::ptrdiff_t>(c) != label_idx) ds.feature_names.push_back(header[c]);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index at = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (static_cast<std::ptrdiff_t>(c) == label_idx)
        ds.y[i] = rows[static_cast<std::size_t>(i)][c];
      else
        ds.X(i, at++) = rows[static_cast<std::size_t>(i)][c];
    }
  }
  return ds;
}

struct PreprocessFlags {
  bool zero_center = false;
  bool unit_normalize = false;
  bool pad_pow2 = false;
};

/// Applies center -> normalize -> pad, in that order.
inline Dataset preprocess(Dataset ds, const PreprocessFlags& flags) {
  if (flags.zero_center) {
    const Eigen::RowVectorXd mean = ds.X.colwise().mean();
    ds.X.rowwise() -= mean;
  }
  if (flags.unit_normalize) {
    for (Eigen::Index i = 0; i < ds.X.rows(); ++i) {
      const double norm = ds.X.row(i).norm();
      if (norm == 0.0)
        throw ConfigError("preprocess: unit_normalize hit zero-norm row " + std::to_string(i + 1));
      ds.X.row(i) /= norm;
    }
  }
  if (flags.pad_pow2) {
    const Eigen::Index d = ds.X.cols();
    const Eigen::Index d_pad = next_pow2(d);
    if (d_pad != d) {
      Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(ds.X.rows(), d_pad);
      padded.leftCols(d) = ds.X;
      ds.X = std::move(padded);
      for (Eigen::Index k = d; k < d_pad; ++k)
        ds.feature_names.push_back("pad_" + std::to_string(k - d));
    }
  }
  return ds;
}

}  // namespace polysketch
