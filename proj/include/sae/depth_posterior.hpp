// Learnable categorical distribution over exit depths, one row per input slot.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "sae/random.hpp"
#include "sae/tensor.hpp"

namespace sae {

/// Exit indices (0-based, sorted ascending) sampled for one input slot.
using ExitSet = std::vector<std::size_t>;

struct DepthPosterior {
  Tensor logits;  // N x D, zero-initialised, trainable
  double temperature = 1.0;

  static DepthPosterior uniform(std::size_t inputs, std::size_t depth, double temperature = 1.0) {
    return {Tensor::zeros({inputs, depth}, true), temperature};
  }

  std::size_t inputs() const { return logits.rows(); }
  std::size_t depth() const { return logits.cols(); }
};

namespace detail {

inline void check_k(std::size_t k, std::size_t depth) {
  if (k < 1 || k > depth) {
    throw std::invalid_argument("K must satisfy 1 ≤ K ≤ D (K=" + std::to_string(k) + ", D=" +
                                std::to_string(depth) + ")");
  }
}

/// Indices of the k largest values; ties resolved towards the lower index.
inline std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace detail

/// Row-stochastic theta = softmax(logits / T), row-wise.
inline Tensor theta(const Tensor& logits, double temperature) {
  Tape tape;
  return tape.value(softmax_with_temperature(tape.constant(logits), temperature));
}

inline Tensor theta(const DepthPosterior& q) { return theta(q.logits, q.temperature); }

/// Differentiable theta on a tape.
inline Var theta(Var logits, double temperature) { return softmax_with_temperature(logits, temperature); }

/// Gumbel top-K: perturb logits / T with independent standard Gumbel noise
/// and keep the K largest. Equivalent to sampling K exits without
/// replacement from softmax(logits / T).
inline ExitSet sample_top_k(std::span<const double> logits, std::size_t k, double temperature, Rng& rng) {
  detail::check_k(k, logits.size());
  detail::check_temperature(temperature);
  std::vector<double> perturbed(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) perturbed[j] = logits[j] / temperature + standard_gumbel(rng);
  return detail::top_k_indices(perturbed, k);
}

/// One ExitSet per row of an N x D logit matrix.
inline std::vector<ExitSet> sample_exit_sets(const Tensor& logits, std::size_t k, double temperature, Rng& rng) {
  std::vector<ExitSet> out;
  const std::size_t D = logits.cols();
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    out.push_back(sample_top_k(logits.data().subspan(i * D, D), k, temperature, rng));
  }
  return out;
}

/// KL(theta || Uniform(D)) = sum_j theta_j log(theta_j D), with 0 log 0 = 0.
inline double kl_to_uniform(std::span<const double> theta_row) {
  const double D = static_cast<double>(theta_row.size());
  double kl = 0.0;
  for (double p : theta_row) {
    if (p > 0.0) kl += p * std::log(p * D);
  }
  return kl;
}

/// Evaluation posterior: keep the K largest logits per row, send the rest to
/// -inf, and renormalise with softmax at `temperature`. Masked entries are
/// exactly zero.
inline Tensor mask_top_k(const Tensor& logits, std::size_t k, double temperature) {
  detail::require_matrix(logits, "mask_top_k");
  detail::check_k(k, logits.cols());
  detail::check_temperature(temperature);
  const std::size_t D = logits.cols();
  std::vector<double> masked(logits.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.data().subspan(i * D, D);
    for (auto j : detail::top_k_indices(row, k)) masked[i * D + j] = row[j];
  }
  return Tensor({logits.rows(), D}, detail::softmax_rows(masked, logits.rows(), D, temperature));
}

/// Exits with nonzero mass for at least one input; only these need to run.
inline std::vector<std::size_t> active_exit_union(const Tensor& theta_star) {
  std::set<std::size_t> active;
  for (std::size_t i = 0; i < theta_star.rows(); ++i)
    for (std::size_t j = 0; j < theta_star.cols(); ++j)
      if (theta_star(i, j) > 0.0) active.insert(j);
  return {active.begin(), active.end()};
}

/// n^j: number of input slots with nonzero mass on exit j.
inline std::vector<std::size_t> exit_usage(const Tensor& theta_star) {
  std::vector<std::size_t> n(theta_star.cols(), 0);
  for (std::size_t i = 0; i < theta_star.rows(); ++i)
    for (std::size_t j = 0; j < theta_star.cols(); ++j)
      if (theta_star(i, j) > 0.0) ++n[j];
  return n;
}

}  // namespace sae
