// End-to-end train and eval runs that read and write the on-disk formats.
#pragma once

#include <fstream>
#include <optional>
#include <string>

#include "sae/checkpoint.hpp"
#include "sae/config.hpp"
#include "sae/evaluator.hpp"
#include "sae/network_cost.hpp"
#include "sae/records.hpp"
#include "sae/trainer.hpp"

namespace sae {

/// Fills input_dim / output_dim from the dataset unless the config fixes them.
inline SAEConfig resolve_model(const RunConfig& rc, const Dataset& data) {
  SAEConfig m = rc.model;
  if (!rc.input_dim_set) m.input_dim = data.input_dim;
  if (!rc.output_dim_set) m.output_dim = data.task == Task::classification ? data.num_classes() : 1;
  if (m.input_dim != data.input_dim) {
    throw ConfigError("input_dim = " + std::to_string(m.input_dim) + " but the dataset has " +
                      std::to_string(data.input_dim) + " features");
  }
  if (data.task == Task::regression && m.output_dim != 1) throw ConfigError("regression supports output_dim = 1 only");
  m.validate();
  return m;
}

inline Json evaluate_to_record(const SAENetwork& net, const DepthPosterior& posterior, const Dataset& data,
                               std::size_t k, std::size_t bins) {
  data.validate();
  if (data.task != net.config.task) throw ConfigError("dataset task does not match the checkpoint");
  auto res = evaluate(net, posterior, data.feature_matrix(), k);
  auto rep = compute_metrics(res.predictions, data, net.config.output_dim, bins);
  return metrics_record_json(rep, res, k, posterior.temperature, data.size());
}

struct TrainRunResult {
  TrainingResult training;
  std::optional<Json> metrics;
};

/// Trains per `rc`, writing the step log and checkpoint (and the metrics
/// record on the training data when an output path is configured).
inline TrainRunResult run_training(const RunConfig& rc) {
  const Task task = rc.model.task;
  Dataset data = load_dataset(rc.data, task);
  data.validate();
  if (data.task != task) throw ConfigError("dataset kind does not match model task");
  const SAEConfig model = resolve_model(rc, data);

  std::ofstream log(rc.log_path);
  if (!log) throw std::runtime_error("cannot write training log '" + rc.log_path + "'");
  TrainRunResult out{train_loop(model, rc.trainer, rc.schedule, data,
                                [&](const StepRecord& r) { log << step_record_json(r).dump() << '\n'; }),
                     std::nullopt};
  if (!log) throw std::runtime_error("failed writing training log '" + rc.log_path + "'");
  auto& st = out.training.state;
  save_checkpoint(rc.checkpoint_path, st.network, st.posterior);
  if (!rc.metrics_path.empty()) {
    out.metrics = evaluate_to_record(st.network, st.posterior, data, model.active_exits, rc.bins);
    std::ofstream mf(rc.metrics_path);
    if (!mf) throw std::runtime_error("cannot write metrics '" + rc.metrics_path + "'");
    mf << out.metrics->dump() << '\n';
  }
  return out;
}

/// Loads a checkpoint and evaluates it on a CSV dataset. `k` defaults to the
/// checkpoint's K.
inline Json run_evaluation(const std::string& checkpoint_path, const std::string& data_path, std::size_t bins = 15,
                           std::optional<std::size_t> k = std::nullopt) {
  auto ck = load_checkpoint(checkpoint_path);
  auto data = load_csv(data_path, ck.network.config.task);
  return evaluate_to_record(ck.network, ck.posterior, data, k.value_or(ck.network.config.active_exits), bins);
}

}  // namespace sae
