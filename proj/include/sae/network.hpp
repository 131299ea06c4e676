// Multi-input, multi-exit residual fully connected network.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sae/random.hpp"
#include "sae/tensor.hpp"

namespace sae {

enum class Task { classification, regression };

inline const char* to_string(Task t) { return t == Task::classification ? "classification" : "regression"; }

inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "regression") return Task::regression;
  throw std::invalid_argument("unknown task '" + s + "' (expected classification or regression)");
}

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shape of an SAE: N input slots, at most K active exits per slot, D blocks.
struct SAEConfig {
  std::size_t inputs = 1;       // N
  std::size_t active_exits = 1; // K
  std::size_t depth = 1;        // D
  std::size_t width = 32;       // F
  std::size_t input_dim = 1;    // C
  std::size_t output_dim = 1;   // O
  Task task = Task::classification;
  std::uint64_t seed = 0;

  /// Raw outputs per input per exit: O logits, or O means plus O log-variances.
  std::size_t raw_outputs() const { return task == Task::regression ? 2 * output_dim : output_dim; }

  void validate() const {
    if (inputs < 1) throw ConfigError("N must be at least 1");
    if (depth < 1) throw ConfigError("D must be at least 1");
    if (active_exits < 1 || active_exits > depth) throw ConfigError("K must satisfy 1 ≤ K ≤ D");
    if (width < 1) throw ConfigError("width must be at least 1");
    if (input_dim < 1) throw ConfigError("input_dim must be at least 1");
    if (output_dim < 1) throw ConfigError("output_dim must be at least 1");
  }

  friend bool operator==(const SAEConfig&, const SAEConfig&) = default;
};

struct Affine {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // 1 x fan_out

  static Affine init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) v = uniform(rng, -bound, bound);
    return {Tensor({fan_in, fan_out}, std::move(w), true), Tensor::zeros({1, fan_out}, true)};
  }
};

struct BatchNormParams {
  Tensor scale;  // 1 x F, initialised to 1
  Tensor shift;  // 1 x F, initialised to 0

  static BatchNormParams init(std::size_t features) {
    return {Tensor::full({1, features}, 1.0, true), Tensor::zeros({1, features}, true)};
  }
};

struct ResidualBlock {
  Affine affine;
  BatchNormParams norm;
};

struct ExitHead {
  Affine hidden;
  BatchNormParams norm;
  Affine prediction;
};

struct NamedParameter {
  std::string name;
  Tensor* tensor;
};

class SAENetwork {
 public:
  SAEConfig config;
  Affine input;
  std::vector<ResidualBlock> blocks;
  std::vector<ExitHead> exits;

  std::vector<NamedParameter> parameters() {
    std::vector<NamedParameter> out;
    auto affine = [&](const std::string& prefix, Affine& a) {
      out.push_back({prefix + ".weight", &a.weight});
      out.push_back({prefix + ".bias", &a.bias});
    };
    auto norm = [&](const std::string& prefix, BatchNormParams& n) {
      out.push_back({prefix + ".scale", &n.scale});
      out.push_back({prefix + ".shift", &n.shift});
    };
    affine("input", input);
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      const auto p = "block" + std::to_string(j);
      affine(p + ".affine", blocks[j].affine);
      norm(p + ".norm", blocks[j].norm);
    }
    for (std::size_t j = 0; j < exits.size(); ++j) {
      const auto p = "exit" + std::to_string(j);
      affine(p + ".hidden", exits[j].hidden);
      norm(p + ".norm", exits[j].norm);
      affine(p + ".prediction", exits[j].prediction);
    }
    return out;
  }

  std::size_t parameter_count() const {
    auto affine = [](const Affine& a) { return a.weight.size() + a.bias.size(); };
    auto norm = [](const BatchNormParams& n) { return n.scale.size() + n.shift.size(); };
    std::size_t total = affine(input);
    for (const auto& b : blocks) total += affine(b.affine) + norm(b.norm);
    for (const auto& e : exits) total += affine(e.hidden) + norm(e.norm) + affine(e.prediction);
    return total;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor->clear_grad();
  }
};

/// Constructs a network with weights uniform in +-1/sqrt(fan_in), zero biases,
/// and identity batch-norm affine parameters.
inline SAENetwork build_network(const SAEConfig& config, Rng& rng) {
  config.validate();
  SAENetwork net;
  net.config = config;
  const std::size_t F = config.width;
  net.input = Affine::init(config.inputs * config.input_dim, F, rng);
  for (std::size_t j = 0; j < config.depth; ++j) {
    net.blocks.push_back({Affine::init(F, F, rng), BatchNormParams::init(F)});
  }
  for (std::size_t j = 0; j < config.depth; ++j) {
    auto hidden = Affine::init(F, F, rng);
    auto norm = BatchNormParams::init(F);
    auto prediction = Affine::init(F, config.inputs * config.raw_outputs(), rng);
    net.exits.push_back({std::move(hidden), std::move(norm), std::move(prediction)});
  }
  return net;
}

inline SAENetwork build_network(const SAEConfig& config) {
  Rng rng(config.seed);
  return build_network(config, rng);
}

/// Per-exit outputs of one forward pass. Exit j holds a B x (N * raw) matrix
/// laid out input-major: [input 0 outputs | input 1 outputs | ...].
struct PredictionGrid {
  std::vector<Var> exits;
  std::size_t inputs = 0;
  std::size_t raw_outputs = 0;
  std::size_t batch = 0;

  std::size_t depth() const { return exits.size(); }
};

/// Raw prediction block for input slot `input` at exit `exit` (both 0-based).
inline Var split_predictions(const PredictionGrid& grid, std::size_t input, std::size_t exit) {
  if (input >= grid.inputs) {
    throw std::out_of_range("input index " + std::to_string(input) + " out of range for N=" +
                            std::to_string(grid.inputs));
  }
  if (exit >= grid.depth()) {
    throw std::out_of_range("exit index " + std::to_string(exit) + " out of range for D=" +
                            std::to_string(grid.depth()));
  }
  const std::size_t w = grid.raw_outputs;
  return slice_cols(grid.exits[exit], input * w, (input + 1) * w);
}

namespace detail {

template <class Bind>
PredictionGrid forward_with(Tape& tape, const SAENetwork& net, const Tensor& x, Bind&& bind) {
  const auto& cfg = net.config;
  if (x.rank() != 2 || x.cols() != cfg.inputs * cfg.input_dim) {
    throw DimensionError("forward: expected input of shape [B x " + std::to_string(cfg.inputs * cfg.input_dim) +
                         "], got " + shape_string(x.shape()));
  }
  auto affine = [&](Var h, const Affine& a) { return add_row(matmul(h, bind(a.weight)), bind(a.bias)); };
  auto norm = [&](Var h, const BatchNormParams& n) { return batch_norm(h, bind(n.scale), bind(n.shift)); };

  PredictionGrid grid;
  grid.inputs = cfg.inputs;
  grid.raw_outputs = cfg.raw_outputs();
  grid.batch = x.rows();

  Var h = affine(tape.constant(x), net.input);
  for (std::size_t j = 0; j < net.blocks.size(); ++j) {
    h = add(h, relu(norm(affine(h, net.blocks[j].affine), net.blocks[j].norm)));
    const auto& e = net.exits[j];
    Var z = relu(norm(affine(h, e.hidden), e.norm));
    grid.exits.push_back(affine(z, e.prediction));
  }
  return grid;
}

}  // namespace detail

/// Records a forward pass with parameters bound as gradient-tracking leaves.
inline PredictionGrid forward(Tape& tape, SAENetwork& net, const Tensor& x) {
  return detail::forward_with(tape, net, x, [&](const Tensor& p) { return tape.watch(const_cast<Tensor&>(p)); });
}

/// Forward pass without gradient tracking; returns one B x (N * raw) matrix per exit.
inline std::vector<Tensor> infer(const SAENetwork& net, const Tensor& x) {
  Tape tape;
  auto grid = detail::forward_with(tape, net, x, [&](const Tensor& p) { return tape.constant(p); });
  std::vector<Tensor> out;
  out.reserve(grid.exits.size());
  for (auto v : grid.exits) out.push_back(tape.value(v));
  return out;
}

}  // namespace sae
