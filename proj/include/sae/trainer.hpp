// Training: batch assembly, gradient clipping, optimisers and the step loop.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sae/data.hpp"
#include "sae/depth_posterior.hpp"
#include "sae/network.hpp"
#include "sae/objective.hpp"
#include "sae/random.hpp"
#include "sae/tensor.hpp"

namespace sae {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

struct TrainerConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 3e-4;
  double weight_decay = 0.0;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t batch_repetition = 1;
  std::size_t log_interval = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be nonnegative");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (batch_repetition < 1) throw ConfigError("batch_repetition must be at least 1");
    if (log_interval < 1) throw ConfigError("log_interval must be at least 1");
  }

  friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

/// x is rows x (N * C); y is rows x N with y(b, i) the target of slot i.
struct Batch {
  Tensor x;
  Tensor y;
  std::size_t repeated_rows = 0;
};

/// Draws a training batch of B rows (times the repetition factor r).
///
/// Each slot draws B dataset indices independently with replacement. With
/// r > 1 each slot's column is concatenated r times and shuffled
/// independently. The first floor(i_t * rows) rows then copy slot 0's sample
/// into every slot.
inline Batch make_batch(const Dataset& data, std::size_t batch_size, std::size_t inputs, double repetition, Rng& rng,
                        std::size_t batch_repetition = 1) {
  if (data.size() == 0) throw DataError("empty dataset");
  if (!(repetition >= 0.0 && repetition <= 1.0)) throw std::invalid_argument("input repetition must lie in [0, 1]");
  if (batch_size < 1 || inputs < 1 || batch_repetition < 1) throw std::invalid_argument("batch shape must be positive");
  const std::size_t rows = batch_size * batch_repetition;
  const std::size_t C = data.input_dim;

  std::vector<std::vector<std::size_t>> slots(inputs);
  for (auto& column : slots) {
    column.reserve(rows);
    for (std::size_t b = 0; b < batch_size; ++b) column.push_back(uniform_index(rng, data.size()));
    if (batch_repetition > 1) {
      for (std::size_t r = 1; r < batch_repetition; ++r)
        for (std::size_t b = 0; b < batch_size; ++b) column.push_back(column[b]);
      shuffle(column, rng);
    }
  }
  const auto repeated = static_cast<std::size_t>(std::floor(repetition * static_cast<double>(rows)));
  for (std::size_t b = 0; b < repeated; ++b)
    for (std::size_t i = 1; i < inputs; ++i) slots[i][b] = slots[0][b];

  Batch batch{Tensor::zeros({rows, inputs * C}), Tensor::zeros({rows, inputs}), repeated};
  for (std::size_t b = 0; b < rows; ++b) {
    for (std::size_t i = 0; i < inputs; ++i) {
      const std::size_t idx = slots[i][b];
      for (std::size_t c = 0; c < C; ++c) batch.x(b, i * C + c) = data.row(idx)[c];
      batch.y(b, i) = data.targets[idx];
    }
  }
  return batch;
}

/// Rescales all gradients so that their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
inline double clip_gradients(const std::vector<Tensor*>& params, double max_norm) {
  double sq = 0.0;
  for (const Tensor* p : params)
    for (double g : p->grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor* p : params)
      for (double& g : p->grad()) g *= s;
  }
  return norm;
}

/// SGD or Adam with coupled L2 weight decay (added to the gradient).
class Optimizer {
 public:
  explicit Optimizer(const TrainerConfig& cfg) : cfg_(cfg) {}

  void step(const std::vector<Tensor*>& params) {
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw std::logic_error("optimizer: parameter list changed between steps");
    ++t_;
    const double lr = cfg_.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      if (!p.has_grad()) continue;
      auto w = p.data();
      auto g = p.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + cfg_.weight_decay * w[i];
        if (cfg_.optimizer == OptimizerKind::sgd) {
          w[i] -= lr * gi;
        } else {
          m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * gi;
          v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * gi * gi;
          const double mhat = m_[k][i] / bc1;
          const double vhat = v_[k][i] / bc2;
          w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  TrainerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, LossBreakdown loss)
      : std::runtime_error(message(step, loss)), step_(step), loss_(loss) {}

  std::size_t step() const { return step_; }
  const LossBreakdown& loss() const { return loss_; }

 private:
  static std::string message(std::size_t step, const LossBreakdown& l) {
    std::ostringstream os;
    os << "non-finite loss at step " << step << ": data_fit=" << l.data_fit << " regularizer=" << l.regularizer
       << " alpha=" << l.alpha << " total=" << l.total;
    return os.str();
  }
  std::size_t step_;
  LossBreakdown loss_;
};

/// Everything that evolves during training.
struct TrainState {
  SAENetwork network;
  DepthPosterior posterior;
  Optimizer optimizer;
  Rng rng;
  std::size_t step = 0;

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& p : network.parameters()) out.push_back(p.tensor);
    out.push_back(&posterior.logits);
    return out;
  }
};

inline TrainState init_state(const SAEConfig& model, const TrainerConfig& trainer, const ScheduleSpec& schedule) {
  model.validate();
  trainer.validate();
  schedule.validate();
  Rng init_rng(model.seed);
  return TrainState{build_network(model, init_rng),
                    DepthPosterior::uniform(model.inputs, model.depth, schedule.temperature_end),
                    Optimizer(trainer), Rng(trainer.seed), 0};
}

struct StepRecord {
  std::size_t step = 0;
  ScheduleValues schedule{};
  LossBreakdown loss;
  double grad_norm = 0.0;
  std::vector<ExitSet> exit_sets;
  std::optional<Tensor> theta;
};

/// One optimisation step on a prepared batch at schedule values `sv`.
/// Exit sets are sampled from the current logits after the batch is built.
inline StepRecord train_step(TrainState& state, const Batch& batch, const ScheduleValues& sv,
                             const TrainerConfig& cfg) {
  const auto& model = state.network.config;
  StepRecord rec;
  rec.step = state.step;
  rec.schedule = sv;
  rec.exit_sets = sample_exit_sets(state.posterior.logits, model.active_exits, sv.temperature, state.rng);

  auto params = state.parameters();
  for (Tensor* p : params) p->clear_grad();

  Tape tape;
  auto grid = forward(tape, state.network, batch.x);
  Var logits = tape.watch(state.posterior.logits);
  auto elbo = elbo_loss(grid, batch.y, rec.exit_sets, logits, sv.temperature, sv.alpha, model.task);
  rec.loss = elbo.breakdown;
  if (!std::isfinite(rec.loss.total) || !std::isfinite(rec.loss.data_fit) || !std::isfinite(rec.loss.regularizer)) {
    throw TrainingDiverged(state.step, rec.loss);
  }
  tape.backward(elbo.total);
  for (Tensor* p : params) {
    if (!p->has_grad()) p->accumulate_grad(std::vector<double>(p->size(), 0.0));
  }
  rec.grad_norm = clip_gradients(params, cfg.clip_norm);
  state.optimizer.step(params);
  state.posterior.temperature = sv.temperature;
  ++state.step;
  return rec;
}

struct TrainingResult {
  TrainState state;
  std::vector<StepRecord> log;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Runs `schedule.steps` steps. The posterior snapshot theta(logits, T(t)) is
/// attached every `log_interval` steps and on the final step. After training
/// the posterior temperature is T(t_end).
inline TrainingResult train_loop(const SAEConfig& model, const TrainerConfig& cfg, const ScheduleSpec& schedule,
                                 const Dataset& data, const StepCallback& on_step = {}) {
  data.validate();
  if (data.input_dim != model.input_dim) {
    throw ConfigError("dataset has " + std::to_string(data.input_dim) + " features but input_dim is " +
                      std::to_string(model.input_dim));
  }
  if (data.task != model.task) throw ConfigError("dataset task does not match model task");
  if (model.task == Task::classification && data.num_classes() > model.output_dim) {
    throw ConfigError("dataset has labels beyond output_dim=" + std::to_string(model.output_dim));
  }
  TrainingResult result{init_state(model, cfg, schedule), {}};
  auto& st = result.state;
  for (std::size_t t = 0; t < schedule.steps; ++t) {
    const auto sv = schedule_at(schedule, t);
    auto batch = make_batch(data, cfg.batch_size, model.inputs, sv.repetition, st.rng, cfg.batch_repetition);
    auto rec = train_step(st, batch, sv, cfg);
    if (t % cfg.log_interval == 0 || t + 1 == schedule.steps) rec.theta = theta(st.posterior.logits, sv.temperature);
    if (on_step) on_step(rec);
    result.log.push_back(std::move(rec));
  }
  st.posterior.temperature = schedule.temperature_end;
  return result;
}

}  // namespace sae
