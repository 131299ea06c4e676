// Datasets: synthetic generators and CSV ingestion.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sae/network.hpp"
#include "sae/random.hpp"

namespace sae {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major features (size x C) and one scalar target per row. Class labels
/// are stored as exact integers 0..O-1.
struct Dataset {
  std::vector<double> features;
  std::vector<double> targets;
  std::size_t input_dim = 0;
  Task task = Task::classification;

  std::size_t size() const { return targets.size(); }
  const double* row(std::size_t i) const { return features.data() + i * input_dim; }

  /// Number of classes implied by the labels (max label + 1).
  std::size_t num_classes() const {
    std::size_t o = 0;
    for (double y : targets) o = std::max(o, static_cast<std::size_t>(y) + 1);
    return o;
  }

  void validate() const {
    if (targets.empty()) throw DataError("empty dataset");
    if (input_dim == 0 || features.size() != targets.size() * input_dim) {
      throw DataError("dataset features do not match " + std::to_string(targets.size()) + " rows of dimension " +
                      std::to_string(input_dim));
    }
    if (task == Task::classification) {
      for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] < 0.0 || targets[i] != std::floor(targets[i])) {
          throw DataError("row " + std::to_string(i + 1) + ": class label must be a nonnegative integer");
        }
      }
    }
  }

  /// Features as a size x C matrix.
  Tensor feature_matrix() const { return Tensor({size(), input_dim}, features); }
};

enum class DataKind { two_clusters, spirals, sinusoid_regression };

inline DataKind parse_data_kind(const std::string& s) {
  if (s == "two_clusters") return DataKind::two_clusters;
  if (s == "spirals") return DataKind::spirals;
  if (s == "sinusoid_regression") return DataKind::sinusoid_regression;
  throw DataError("unknown dataset kind '" + s + "' (expected two_clusters, spirals or sinusoid_regression)");
}

inline const char* to_string(DataKind k) {
  switch (k) {
    case DataKind::two_clusters: return "two_clusters";
    case DataKind::spirals: return "spirals";
    case DataKind::sinusoid_regression: return "sinusoid_regression";
  }
  return "?";
}

inline Task task_of(DataKind k) { return k == DataKind::sinusoid_regression ? Task::regression : Task::classification; }

/// Synthetic desk-scale datasets.
///   two_clusters: 2-D points uniform in a disc of radius 1 centred at (+-2, 0),
///                 plus noise * N(0, 1); class = side. Separable by x = 0 at noise 0.
///   spirals:      two interleaved arms r = t, angle = t * 3pi + class * pi.
///   sinusoid_regression: x ~ U[0, 1], y = sin(2 pi x) + noise * N(0, 1).
inline Dataset gen_data(DataKind kind, std::size_t n, double noise, std::uint64_t seed) {
  if (n < 1) throw DataError("dataset size must be at least 1");
  if (!(noise >= 0.0)) throw DataError("noise must be nonnegative");
  Rng rng(seed);
  Dataset d;
  d.task = task_of(kind);
  switch (kind) {
    case DataKind::two_clusters:
      d.input_dim = 2;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % 2;
        const double r = std::sqrt(uniform01(rng));
        const double a = 2.0 * std::numbers::pi * uniform01(rng);
        const double cx = cls == 0 ? -2.0 : 2.0;
        d.features.push_back(cx + r * std::cos(a) + noise * standard_normal(rng));
        d.features.push_back(r * std::sin(a) + noise * standard_normal(rng));
        d.targets.push_back(static_cast<double>(cls));
      }
      break;
    case DataKind::spirals:
      d.input_dim = 2;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % 2;
        const double t = 0.1 + 0.9 * uniform01(rng);
        const double a = 3.0 * std::numbers::pi * t + std::numbers::pi * static_cast<double>(cls);
        d.features.push_back(t * std::cos(a) + noise * standard_normal(rng));
        d.features.push_back(t * std::sin(a) + noise * standard_normal(rng));
        d.targets.push_back(static_cast<double>(cls));
      }
      break;
    case DataKind::sinusoid_regression:
      d.input_dim = 1;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = uniform01(rng);
        d.features.push_back(x);
        d.targets.push_back(std::sin(2.0 * std::numbers::pi * x) + noise * standard_normal(rng));
      }
      break;
  }
  return d;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses "f1,...,fC,target" CSV text. Row numbers in errors count the header
/// as row 1; columns are 1-based.
inline Dataset parse_csv(std::istream& in, Task task) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty dataset");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2) throw DataError("row 1: header needs at least one feature column and a target column");
  Dataset d;
  d.task = task;
  d.input_dim = header.size() - 1;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " columns, got " +
                      std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto cell = detail::trim(cells[c]);
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size() || !std::isfinite(v)) {
        throw DataError("row " + std::to_string(row) + ", column " + std::to_string(c + 1) + ": non-numeric value '" +
                        cell + "'");
      }
      if (c + 1 < cells.size()) {
        d.features.push_back(v);
      } else {
        if (task == Task::classification && (v < 0.0 || v != std::floor(v))) {
          throw DataError("row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                          ": class label must be a nonnegative integer");
        }
        d.targets.push_back(v);
      }
    }
  }
  if (d.targets.empty()) throw DataError("empty dataset");
  return d;
}

inline Dataset load_csv(const std::string& path, Task task) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path + "'");
  return parse_csv(in, task);
}

inline void write_csv(std::ostream& out, const Dataset& d) {
  for (std::size_t c = 0; c < d.input_dim; ++c) out << 'f' << (c + 1) << ',';
  out << "target\n";
  out.precision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t c = 0; c < d.input_dim; ++c) out << d.row(i)[c] << ',';
    if (d.task == Task::classification) out << static_cast<long long>(d.targets[i]);
    else out << d.targets[i];
    out << '\n';
  }
}

inline void save_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file '" + path + "'");
  write_csv(out, d);
}

}  // namespace sae
