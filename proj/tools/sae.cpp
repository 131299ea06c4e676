// Command-line front end: train, eval, cost, enumerate, gen-data.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sae/sae.hpp"

namespace {

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-architecture ensembles: train, evaluate and cost multi-input multi-exit networks"};
  app.require_subcommand(1);

  std::string train_config;
  auto* train = app.add_subcommand("train", "Train a network from a configuration file");
  train->add_option("config", train_config, "Configuration file")->required();

  std::string eval_checkpoint, eval_data, eval_out;
  std::size_t eval_bins = 15;
  std::optional<std::size_t> eval_k;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a CSV dataset");
  eval->add_option("checkpoint", eval_checkpoint, "Checkpoint file")->required();
  eval->add_option("data", eval_data, "CSV dataset (f1,...,fC,target)")->required();
  eval->add_option("-o,--out", eval_out, "Metrics record path (default: stdout)");
  eval->add_option("--bins", eval_bins, "Calibration bins")->check(CLI::PositiveNumber);
  eval->add_option("-k,--active-exits", eval_k, "Override K from the checkpoint");

  std::string cost_config;
  bool cost_json = false;
  auto* cost = app.add_subcommand("cost", "Analytic parameter and FLOP counts for an architecture");
  cost->add_option("arch-config", cost_config, "Architecture file")->required();
  cost->add_flag("--json", cost_json, "Emit a JSON record instead of a table");

  std::size_t enum_n = 0, enum_d = 0;
  bool enum_json = false;
  auto* enumerate = app.add_subcommand("enumerate", "List the (N, K) grid with categories and search-space sizes");
  enumerate->add_option("N_max", enum_n, "Largest N")->required()->check(CLI::PositiveNumber);
  enumerate->add_option("D", enum_d, "Depth")->required()->check(CLI::PositiveNumber);
  enumerate->add_flag("--json", enum_json, "Emit one JSON record per row");

  std::string gen_kind, gen_out;
  std::size_t gen_n = 0;
  std::uint64_t gen_seed = 0;
  double gen_noise = 0.0;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  gen->add_option("kind", gen_kind, "two_clusters | spirals | sinusoid_regression")->required();
  gen->add_option("n", gen_n, "Number of samples")->required()->check(CLI::PositiveNumber);
  gen->add_option("seed", gen_seed, "Random seed")->required();
  gen->add_option("out", gen_out, "Output CSV path")->required();
  gen->add_option("--noise", gen_noise, "Noise level")->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto rc = sae::load_config(train_config);
      auto res = sae::run_training(rc);
      const auto& last = res.training.log;
      std::cerr << "trained " << last.size() << " steps";
      if (!last.empty()) std::cerr << ", final loss " << last.back().loss.total;
      std::cerr << "; checkpoint " << rc.checkpoint_path << ", log " << rc.log_path;
      if (res.metrics) std::cerr << ", metrics " << rc.metrics_path;
      std::cerr << '\n';
    } else if (*eval) {
      auto rec = sae::run_evaluation(eval_checkpoint, eval_data, eval_bins, eval_k);
      write_text(eval_out, rec.dump() + "\n");
    } else if (*cost) {
      auto req = sae::parse_arch_config(read_text(cost_config));
      auto rep = sae::cost::network_cost(req.arch, req.inputs, req.exits);
      if (cost_json) {
        std::cout << sae::cost_record_json(rep, req.arch, req.inputs, req.exits).dump() << '\n';
      } else {
        sae::write_cost_table(std::cout, rep);
      }
    } else if (*enumerate) {
      auto rows = sae::enumerate_configs(enum_n, enum_d);
      if (enum_json) {
        for (const auto& r : rows) std::cout << sae::enumeration_row_json(r).dump() << '\n';
      } else {
        sae::write_enumeration_table(std::cout, rows);
      }
    } else if (*gen) {
      auto data = sae::gen_data(sae::parse_data_kind(gen_kind), gen_n, gen_noise, gen_seed);
      sae::save_csv(gen_out, data);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
