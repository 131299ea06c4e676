// Variational training objective and its linear hyperparameter schedules.
#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sae/depth_posterior.hpp"
#include "sae/network.hpp"
#include "sae/tensor.hpp"

namespace sae {

/// Endpoints of the alpha, temperature and input-repetition schedules.
struct ScheduleSpec {
  double alpha_start = 1.0;
  double alpha_end = 1.0;
  double temperature_start = 1.0;
  double temperature_end = 1.0;
  double repetition_start = 0.0;
  double repetition_end = 0.0;
  std::size_t steps = 1;  // t_end; 0 trains nothing

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(alpha_start) || !in01(alpha_end)) throw ConfigError("alpha endpoints must lie in [0, 1]");
    if (!(temperature_start > 0.0 && temperature_start <= 1.0) || !(temperature_end > 0.0 && temperature_end <= 1.0)) {
      throw ConfigError("temperature endpoints must lie in (0, 1]");
    }
    if (!in01(repetition_start) || !in01(repetition_end)) throw ConfigError("repetition endpoints must lie in [0, 1]");
  }

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

/// start + (end - start) * t / t_end for 0 <= t <= t_end.
inline double schedule_value(double start, double end, std::size_t t, std::size_t t_end) {
  if (t_end == 0 || t > t_end) {
    throw std::out_of_range("schedule step " + std::to_string(t) + " outside [0, " + std::to_string(t_end) + "]");
  }
  return start + (end - start) * static_cast<double>(t) / static_cast<double>(t_end);
}

struct ScheduleValues {
  double alpha;
  double temperature;
  double repetition;
};

inline ScheduleValues schedule_at(const ScheduleSpec& s, std::size_t t) {
  return {schedule_value(s.alpha_start, s.alpha_end, t, s.steps),
          schedule_value(s.temperature_start, s.temperature_end, t, s.steps),
          schedule_value(s.repetition_start, s.repetition_end, t, s.steps)};
}

/// Minimisation form of the ELBO: total = data_fit + alpha * regularizer.
struct LossBreakdown {
  double data_fit = 0.0;
  double regularizer = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// log p(target | raw prediction) for one sample.
/// Classification: raw holds O logits and target is a class index.
/// Regression: raw holds O means followed by O log-variances.
inline double log_likelihood(std::span<const double> raw, std::span<const double> target, Task task) {
  if (task == Task::classification) {
    const double cls = target[0];
    if (cls < 0.0 || cls != std::floor(cls) || cls >= static_cast<double>(raw.size())) {
      throw std::out_of_range("class index " + std::to_string(cls) + " invalid for " + std::to_string(raw.size()) +
                              " classes");
    }
    auto ls = detail::log_softmax_rows(raw, 1, raw.size(), 1.0);
    return ls[static_cast<std::size_t>(cls)];
  }
  const std::size_t O = raw.size() / 2;
  double ll = 0.0;
  for (std::size_t o = 0; o < O; ++o) {
    const double mu = raw[o];
    const double log_var = raw[O + o];
    const double r = target[o] - mu;
    ll += -kHalfLog2Pi - 0.5 * log_var - 0.5 * r * r * std::exp(-log_var);
  }
  return ll;
}

/// Per-row log-likelihood column (B x 1) for one input slot at one exit.
/// `targets` is B x O for regression or B x 1 class indices for classification.
inline Var log_likelihood_rows(Var raw, const Tensor& targets, Task task) {
  auto& tape = *raw.tape;
  const auto& R = tape.value(raw);
  const std::size_t B = R.rows();
  if (targets.rows() != B) {
    throw DimensionError("log_likelihood: " + std::to_string(targets.rows()) + " targets for " + std::to_string(B) +
                         " predictions");
  }
  if (task == Task::classification) {
    const std::size_t O = R.cols();
    Tensor onehot = Tensor::zeros({B, O});
    for (std::size_t b = 0; b < B; ++b) {
      const double cls = targets(b, 0);
      if (cls < 0.0 || cls != std::floor(cls) || cls >= static_cast<double>(O)) {
        throw std::out_of_range("class index " + std::to_string(cls) + " invalid for " + std::to_string(O) +
                                " classes");
      }
      onehot(b, static_cast<std::size_t>(cls)) = 1.0;
    }
    return sum_axis(mul(log_softmax(raw), tape.constant(std::move(onehot))), 1);
  }
  const std::size_t O = R.cols() / 2;
  if (targets.cols() != O) throw DimensionError("regression targets must have " + std::to_string(O) + " columns");
  Var mu = slice_cols(raw, 0, O);
  Var log_var = slice_cols(raw, O, 2 * O);
  Var resid = sub(tape.constant(targets), mu);
  // -0.5 log(2 pi) - 0.5 log_var - 0.5 r^2 exp(-log_var)
  Var quad = mul(mul(resid, resid), exp(scale(log_var, -1.0)));
  Var ll = add_scalar(scale(add(log_var, quad), -0.5), -kHalfLog2Pi);
  return O == 1 ? ll : sum_axis(ll, 1);
}

struct ElboResult {
  Var total;
  LossBreakdown breakdown;
};

/// Minimisation-form ELBO over one batch:
///   data_fit    = -(1/B) sum_b sum_i sum_{j in set_i} theta_i^j log p(y_i^b | yhat_i^{j,b})
///   regularizer = sum_i KL(theta_i || Uniform(D))
///   total       = data_fit + alpha * regularizer
/// theta weights are used as-is over the sampled set (no renormalisation).
/// `targets` is B x (N * target_width), slot-major.
inline ElboResult elbo_loss(const PredictionGrid& grid, const Tensor& targets, const std::vector<ExitSet>& sets,
                            Var logits, double temperature, double alpha, Task task) {
  auto& tape = *logits.tape;
  const std::size_t N = grid.inputs;
  const std::size_t D = grid.depth();
  const auto& L = tape.value(logits);
  if (L.rows() != N || L.cols() != D) {
    throw DimensionError("elbo_loss: logits " + shape_string(L.shape()) + " do not match N=" + std::to_string(N) +
                         ", D=" + std::to_string(D));
  }
  if (sets.size() != N) throw DimensionError("elbo_loss: expected one exit set per input");
  if (targets.cols() % N != 0) throw DimensionError("elbo_loss: target columns not divisible by N");
  const std::size_t tw = targets.cols() / N;

  Var th = theta(logits, temperature);
  Var data_fit = tape.constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < N; ++i) {
    Tensor slot_targets = Tensor::zeros({targets.rows(), tw});
    for (std::size_t b = 0; b < targets.rows(); ++b)
      for (std::size_t c = 0; c < tw; ++c) slot_targets(b, c) = targets(b, i * tw + c);
    Var th_row = slice_rows(th, i, i + 1);
    for (std::size_t j : sets[i]) {
      if (j >= D) throw std::out_of_range("exit index " + std::to_string(j) + " out of range");
      Var ll = mean(log_likelihood_rows(split_predictions(grid, i, j), slot_targets, task));
      data_fit = sub(data_fit, mul(slice_cols(th_row, j, j + 1), ll));
    }
  }
  Var reg = sum(kl_to_uniform_rows(logits, temperature));
  Var total = add(data_fit, scale(reg, alpha));
  LossBreakdown bd;
  bd.data_fit = tape.value(data_fit).item();
  bd.regularizer = tape.value(reg).item();
  bd.alpha = alpha;
  bd.total = tape.value(total).item();
  return {total, bd};
}

/// Value-only composition of the objective from precomputed per-exit
/// negative log-likelihoods (N x D) and theta (N x D).
inline LossBreakdown compose_elbo(const Tensor& nll, const std::vector<ExitSet>& sets, const Tensor& theta_values,
                                  double alpha) {
  LossBreakdown bd;
  for (std::size_t i = 0; i < theta_values.rows(); ++i) {
    for (std::size_t j : sets.at(i)) bd.data_fit += theta_values(i, j) * nll(i, j);
    bd.regularizer += kl_to_uniform(theta_values.data().subspan(i * theta_values.cols(), theta_values.cols()));
  }
  bd.alpha = alpha;
  bd.total = bd.data_fit + alpha * bd.regularizer;
  return bd;
}

}  // namespace sae
