// Classification and regression metrics.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sae/objective.hpp"

namespace sae {

namespace detail {

inline void require_nonempty(std::size_t n, const char* metric) {
  if (n == 0) throw std::invalid_argument(std::string(metric) + ": empty input");
}

inline void require_same_length(std::size_t a, std::size_t b, const char* metric) {
  if (a != b) throw std::invalid_argument(std::string(metric) + ": length mismatch");
}

}  // namespace detail

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Probability rows are stored as a flat row-major vector of size n x O.
struct ProbabilityMatrix {
  std::vector<double> values;
  std::size_t classes = 0;

  std::size_t size() const { return classes == 0 ? 0 : values.size() / classes; }
  std::span<const double> row(std::size_t i) const { return std::span<const double>(values).subspan(i * classes, classes); }
};

inline double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> targets) {
  detail::require_nonempty(targets.size(), "accuracy");
  detail::require_same_length(predicted.size(), targets.size(), "accuracy");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) correct += predicted[i] == targets[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(targets.size());
}

/// Macro-averaged one-vs-all F1. A class with TP = FP = FN = 0 scores 0.
inline double f1_macro(std::span<const std::size_t> predicted, std::span<const std::size_t> targets,
                       std::size_t classes) {
  detail::require_nonempty(targets.size(), "f1_macro");
  detail::require_same_length(predicted.size(), targets.size(), "f1_macro");
  if (classes == 0) throw std::invalid_argument("f1_macro: number of classes must be positive");
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (predicted[i] >= classes || targets[i] >= classes) throw std::out_of_range("f1_macro: class index out of range");
    if (predicted[i] == targets[i]) {
      ++tp[targets[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[targets[i]];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double denom = 2.0 * static_cast<double>(tp[c]) + static_cast<double>(fp[c] + fn[c]);
    if (denom > 0.0) total += 2.0 * static_cast<double>(tp[c]) / denom;
  }
  return total / static_cast<double>(classes);
}

/// Bin index for a confidence in [0, 1] over `bins` equal-width bins, each
/// closed on the right: ((m-1)/M, m/M]. Confidence 0 falls in the first bin.
inline std::size_t confidence_bin(double confidence, std::size_t bins) {
  const double M = static_cast<double>(bins);
  auto m = static_cast<std::size_t>(std::ceil(confidence * M));
  m = std::clamp<std::size_t>(m, 1, bins);
  // guard against rounding in confidence * M near an edge
  while (m > 1 && confidence <= static_cast<double>(m - 1) / M) --m;
  while (m < bins && confidence > static_cast<double>(m) / M) ++m;
  return m - 1;
}

/// Expected calibration error from per-sample confidences and correctness.
inline double ece_from_confidence(std::span<const double> confidence, const std::vector<bool>& correct,
                                  std::size_t bins = 15) {
  detail::require_nonempty(confidence.size(), "ece");
  detail::require_same_length(confidence.size(), correct.size(), "ece");
  if (bins == 0) throw std::invalid_argument("ece: number of bins must be positive");
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const auto m = confidence_bin(confidence[i], bins);
    conf_sum[m] += confidence[i];
    acc_sum[m] += correct[i] ? 1.0 : 0.0;
    ++count[m];
  }
  const double n = static_cast<double>(confidence.size());
  double ece = 0.0;
  for (std::size_t m = 0; m < bins; ++m) {
    if (count[m] == 0) continue;
    const double c = static_cast<double>(count[m]);
    ece += (c / n) * std::abs(acc_sum[m] / c - conf_sum[m] / c);
  }
  return ece;
}

/// ECE with confidence = max class probability and prediction = its argmax.
inline double ece(const ProbabilityMatrix& probs, std::span<const std::size_t> targets, std::size_t bins = 15) {
  detail::require_nonempty(targets.size(), "ece");
  detail::require_same_length(probs.size(), targets.size(), "ece");
  std::vector<double> conf(targets.size());
  std::vector<bool> correct(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto row = probs.row(i);
    const auto pred = argmax(row);
    conf[i] = row[pred];
    correct[i] = pred == targets[i];
  }
  return ece_from_confidence(conf, correct, bins);
}

/// Class-conditional ECE: samples are partitioned by predicted class and the
/// per-partition ECE is weighted by partition size.
inline double cc_ece(const ProbabilityMatrix& probs, std::span<const std::size_t> targets, std::size_t classes,
                     std::size_t bins = 15) {
  detail::require_nonempty(targets.size(), "cc_ece");
  detail::require_same_length(probs.size(), targets.size(), "cc_ece");
  if (probs.classes != classes) throw std::invalid_argument("cc_ece: probability width differs from class count");
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < targets.size(); ++i) members[argmax(probs.row(i))].push_back(i);
  const double n = static_cast<double>(targets.size());
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (members[c].empty()) continue;
    ProbabilityMatrix sub{{}, classes};
    std::vector<std::size_t> sub_targets;
    for (auto i : members[c]) {
      auto row = probs.row(i);
      sub.values.insert(sub.values.end(), row.begin(), row.end());
      sub_targets.push_back(targets[i]);
    }
    total += (static_cast<double>(members[c].size()) / n) * ece(sub, sub_targets, bins);
  }
  return total;
}

/// Mean negative log probability of the true class. Probabilities are
/// floored at the smallest normal double so the result stays finite.
inline double nll_classification(const ProbabilityMatrix& probs, std::span<const std::size_t> targets) {
  detail::require_nonempty(targets.size(), "nll");
  detail::require_same_length(probs.size(), targets.size(), "nll");
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double p = probs.row(i)[targets[i]];
    s -= std::log(std::max(p, std::numeric_limits<double>::min()));
  }
  return s / static_cast<double>(targets.size());
}

inline double gaussian_nll(std::span<const double> mean, std::span<const double> variance,
                           std::span<const double> targets) {
  detail::require_nonempty(targets.size(), "gaussian_nll");
  detail::require_same_length(mean.size(), targets.size(), "gaussian_nll");
  detail::require_same_length(variance.size(), targets.size(), "gaussian_nll");
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!(variance[i] > 0.0)) throw std::domain_error("gaussian_nll: variance must be positive");
    const double r = targets[i] - mean[i];
    s += kHalfLog2Pi + 0.5 * std::log(variance[i]) + 0.5 * r * r / variance[i];
  }
  return s / static_cast<double>(targets.size());
}

inline double mse(std::span<const double> mean, std::span<const double> targets) {
  detail::require_nonempty(targets.size(), "mse");
  detail::require_same_length(mean.size(), targets.size(), "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) s += (mean[i] - targets[i]) * (mean[i] - targets[i]);
  return s / static_cast<double>(targets.size());
}

}  // namespace sae
