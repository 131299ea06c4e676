// Bridges a trainable SAEConfig to the analytic cost model.
#pragma once

#include "sae/cost_model.hpp"
#include "sae/depth_posterior.hpp"
#include "sae/network.hpp"

namespace sae {

/// The fc architecture that build_network constructs for `cfg`.
inline cost::ArchSpec fc_arch(const SAEConfig& cfg) {
  cost::ArchSpec a;
  a.family = cost::Family::fc;
  a.features.assign(cfg.depth, cfg.width);
  a.f_last = cfg.width;
  a.input_dim = cfg.input_dim;
  a.outputs = cfg.raw_outputs();
  return a;
}

/// Cost of the network as trained: every exit serves all N inputs.
inline cost::CostReport training_cost(const SAEConfig& cfg) {
  return cost::network_cost(fc_arch(cfg), cfg.inputs, cost::ExitAssignment(cfg.depth, cfg.inputs));
}

/// Cost at evaluation: exit j serves the inputs whose theta* row puts mass on it.
inline cost::CostReport evaluation_cost(const SAEConfig& cfg, const Tensor& theta_star) {
  cost::ExitAssignment n;
  for (auto v : exit_usage(theta_star)) n.push_back(v);
  return cost::network_cost(fc_arch(cfg), cfg.inputs, n);
}

}  // namespace sae
