// Evaluation: top-K masked aggregation of exit predictions and metric reports.
#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sae/data.hpp"
#include "sae/depth_posterior.hpp"
#include "sae/metrics.hpp"
#include "sae/network.hpp"

namespace sae {

/// Classification: `probabilities` (length O). Regression: per-output
/// `mean` and `variance` of the weighted mixture of exit Gaussians.
struct AggregatedPrediction {
  std::vector<double> probabilities;
  std::vector<double> mean;
  std::vector<double> variance;
};

struct EvaluationResult {
  Tensor theta_star;                       // N x D
  std::vector<std::size_t> active_exits;   // exits with nonzero mass
  std::vector<AggregatedPrediction> predictions;
};

inline std::vector<double> softmax(std::span<const double> logits) {
  return detail::softmax_rows(logits, 1, logits.size(), 1.0);
}

/// Repeats each sample into all N slots: rows x C -> rows x (N * C).
inline Tensor repeat_inputs(const Tensor& x, std::size_t inputs) {
  const std::size_t n = x.rows(), C = x.cols();
  Tensor out = Tensor::zeros({n, inputs * C});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < inputs; ++i)
      for (std::size_t c = 0; c < C; ++c) out(r, i * C + c) = x(r, c);
  return out;
}

/// Combines per-exit raw outputs into one prediction per row using weights
/// theta*_i^j / N. Classification averages post-softmax probabilities and
/// renormalises; regression uses the law of total variance.
inline std::vector<AggregatedPrediction> aggregate(const std::vector<Tensor>& exit_outputs, const Tensor& theta_star,
                                                   const SAEConfig& cfg) {
  const std::size_t N = cfg.inputs, w = cfg.raw_outputs(), O = cfg.output_dim;
  if (theta_star.rows() != N || theta_star.cols() != exit_outputs.size()) {
    throw DimensionError("aggregate: theta* " + shape_string(theta_star.shape()) + " does not match network");
  }
  const std::size_t rows = exit_outputs.empty() ? 0 : exit_outputs.front().rows();
  std::vector<AggregatedPrediction> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto& p = out[r];
    if (cfg.task == Task::classification) p.probabilities.assign(O, 0.0);
    else {
      p.mean.assign(O, 0.0);
      p.variance.assign(O, 0.0);
    }
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < exit_outputs.size(); ++j) {
        const double weight = theta_star(i, j) / static_cast<double>(N);
        if (weight == 0.0) continue;
        auto raw = exit_outputs[j].data().subspan(r * N * w + i * w, w);
        if (cfg.task == Task::classification) {
          auto probs = softmax(raw);
          for (std::size_t o = 0; o < O; ++o) p.probabilities[o] += weight * probs[o];
        } else {
          for (std::size_t o = 0; o < O; ++o) {
            const double mu = raw[o];
            const double var = std::exp(raw[O + o]);
            p.mean[o] += weight * mu;
            p.variance[o] += weight * var;
          }
        }
      }
    }
    if (cfg.task == Task::classification) {
      double s = 0.0;
      for (double v : p.probabilities) s += v;
      if (!(s > 0.0)) throw std::logic_error("aggregate: aggregated probabilities have zero mass");
      for (double& v : p.probabilities) v /= s;
    } else {
      // mean of the variances plus the variance of the means
      for (std::size_t o = 0; o < O; ++o) {
        double spread = 0.0;
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < exit_outputs.size(); ++j) {
            const double weight = theta_star(i, j) / static_cast<double>(N);
            if (weight == 0.0) continue;
            const double d = exit_outputs[j](r, i * w + o) - p.mean[o];
            spread += weight * d * d;
          }
        p.variance[o] += spread;
      }
    }
  }
  return out;
}

/// Evaluates a batch of samples (rows x C). Batch normalisation uses the
/// statistics of this batch.
inline EvaluationResult evaluate(const SAENetwork& net, const DepthPosterior& posterior, const Tensor& x,
                                 std::size_t k) {
  const auto& cfg = net.config;
  if (posterior.inputs() != cfg.inputs || posterior.depth() != cfg.depth) {
    throw std::invalid_argument("evaluate: posterior shape does not match network (N=" + std::to_string(cfg.inputs) +
                                ", D=" + std::to_string(cfg.depth) + ")");
  }
  for (double l : posterior.logits.values()) {
    if (!std::isfinite(l)) throw std::invalid_argument("evaluate: posterior logits are not finite");
  }
  if (x.rank() != 2 || x.cols() != cfg.input_dim) {
    throw DimensionError("evaluate: expected samples of dimension " + std::to_string(cfg.input_dim) + ", got " +
                         shape_string(x.shape()));
  }
  EvaluationResult res;
  res.theta_star = mask_top_k(posterior.logits, k, posterior.temperature);
  res.active_exits = active_exit_union(res.theta_star);
  res.predictions = aggregate(infer(net, repeat_inputs(x, cfg.inputs)), res.theta_star, cfg);
  return res;
}

/// Single-sample evaluation (a batch of one).
inline AggregatedPrediction evaluate_input(const SAENetwork& net, const DepthPosterior& posterior,
                                           std::span<const double> x, std::size_t k) {
  Tensor batch({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  return evaluate(net, posterior, batch, k).predictions.front();
}

/// Task-dependent metric values keyed by name.
struct MetricReport {
  Task task = Task::classification;
  std::map<std::string, double> values;
};

inline MetricReport compute_metrics(const std::vector<AggregatedPrediction>& preds, const Dataset& data,
                                    std::size_t classes, std::size_t bins = 15) {
  if (preds.size() != data.size()) throw std::invalid_argument("compute_metrics: prediction count mismatch");
  MetricReport rep;
  rep.task = data.task;
  if (data.task == Task::classification) {
    ProbabilityMatrix probs{{}, classes};
    std::vector<std::size_t> predicted, targets;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      probs.values.insert(probs.values.end(), preds[i].probabilities.begin(), preds[i].probabilities.end());
      predicted.push_back(argmax(preds[i].probabilities));
      targets.push_back(static_cast<std::size_t>(data.targets[i]));
      if (targets.back() >= classes) throw std::out_of_range("compute_metrics: label exceeds class count");
    }
    rep.values["accuracy"] = accuracy(predicted, targets);
    rep.values["f1_macro"] = f1_macro(predicted, targets, classes);
    rep.values["ece"] = ece(probs, targets, bins);
    rep.values["cc_ece"] = cc_ece(probs, targets, classes, bins);
    rep.values["nll"] = nll_classification(probs, targets);
  } else {
    std::vector<double> mu, var;
    for (const auto& p : preds) {
      mu.push_back(p.mean.at(0));
      var.push_back(p.variance.at(0));
    }
    rep.values["gaussian_nll"] = gaussian_nll(mu, var, data.targets);
    rep.values["mse"] = mse(mu, data.targets);
  }
  return rep;
}

}  // namespace sae
