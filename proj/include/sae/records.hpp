// Machine-readable records (one JSON object per line) and text tables.
#pragma once

#include <cstddef>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sae/cost_model.hpp"
#include "sae/evaluator.hpp"
#include "sae/trainer.hpp"

namespace sae {

using Json = nlohmann::ordered_json;

inline Json matrix_json(const Tensor& t) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    Json row = Json::array();
    for (std::size_t j = 0; j < t.cols(); ++j) row.push_back(t(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Tensor matrix_from_json(const Json& rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m == 0 ? 0 : rows.at(0).size();
  std::vector<double> data;
  for (const auto& row : rows) {
    if (row.size() != n) throw std::invalid_argument("ragged matrix in record");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  return Tensor({m, n}, std::move(data));
}

// Training log ---------------------------------------------------------------

inline Json step_record_json(const StepRecord& r) {
  Json j;
  j["step"] = r.step;
  j["alpha"] = r.schedule.alpha;
  j["temperature"] = r.schedule.temperature;
  j["input_repetition"] = r.schedule.repetition;
  j["data_fit"] = r.loss.data_fit;
  j["regularizer"] = r.loss.regularizer;
  j["total"] = r.loss.total;
  j["grad_norm"] = r.grad_norm;
  j["exit_sets"] = r.exit_sets;
  if (r.theta) j["theta"] = matrix_json(*r.theta);
  return j;
}

inline StepRecord parse_step_record(const std::string& line) {
  const auto j = Json::parse(line);
  StepRecord r;
  r.step = j.at("step").get<std::size_t>();
  r.schedule = {j.at("alpha").get<double>(), j.at("temperature").get<double>(),
                j.at("input_repetition").get<double>()};
  r.loss = {j.at("data_fit").get<double>(), j.at("regularizer").get<double>(), j.at("alpha").get<double>(),
            j.at("total").get<double>()};
  r.grad_norm = j.value("grad_norm", 0.0);
  if (j.contains("exit_sets")) r.exit_sets = j.at("exit_sets").get<std::vector<ExitSet>>();
  if (j.contains("theta")) r.theta = matrix_from_json(j.at("theta"));
  return r;
}

// Metrics --------------------------------------------------------------------

inline Json metrics_record_json(const MetricReport& rep, const EvaluationResult& res, std::size_t k,
                                double temperature, std::size_t samples) {
  Json j;
  j["task"] = to_string(rep.task);
  j["samples"] = samples;
  j["K"] = k;
  j["temperature"] = temperature;
  Json metrics = Json::object();
  for (const auto& [name, v] : rep.values) metrics[name] = v;
  j["metrics"] = std::move(metrics);
  j["active_exits"] = res.active_exits;
  j["theta_star"] = matrix_json(res.theta_star);
  return j;
}

struct MetricsRecord {
  MetricReport report;
  std::size_t k = 0;
  double temperature = 0.0;
  std::size_t samples = 0;
  std::vector<std::size_t> active_exits;
  Tensor theta_star;
};

inline MetricsRecord parse_metrics_record(const std::string& text) {
  const auto j = Json::parse(text);
  MetricsRecord r;
  r.report.task = parse_task(j.at("task").get<std::string>());
  for (const auto& [name, v] : j.at("metrics").items()) r.report.values[name] = v.get<double>();
  r.k = j.at("K").get<std::size_t>();
  r.temperature = j.at("temperature").get<double>();
  r.samples = j.at("samples").get<std::size_t>();
  r.active_exits = j.at("active_exits").get<std::vector<std::size_t>>();
  r.theta_star = matrix_from_json(j.at("theta_star"));
  return r;
}

// Cost -----------------------------------------------------------------------

inline Json cost_record_json(const cost::CostReport& rep, const cost::ArchSpec& arch, cost::Count inputs,
                             const cost::ExitAssignment& exits) {
  Json j;
  j["family"] = cost::to_string(arch.family);
  j["N"] = inputs;
  j["exits"] = exits;
  j["params"] = rep.total.params;
  j["flops"] = rep.total.flops;
  Json lines = Json::array();
  for (const auto& l : rep.breakdown) {
    lines.push_back({{"component", l.component}, {"params", l.cost.params}, {"flops", l.cost.flops}});
  }
  j["breakdown"] = std::move(lines);
  return j;
}

inline cost::CostReport parse_cost_record(const std::string& text) {
  const auto j = Json::parse(text);
  cost::CostReport rep;
  rep.total = {j.at("params").get<cost::Count>(), j.at("flops").get<cost::Count>()};
  for (const auto& l : j.at("breakdown")) {
    rep.breakdown.push_back(
        {l.at("component").get<std::string>(), {l.at("params").get<cost::Count>(), l.at("flops").get<cost::Count>()}});
  }
  return rep;
}

inline void write_cost_table(std::ostream& os, const cost::CostReport& rep) {
  std::size_t w = 9;
  for (const auto& l : rep.breakdown) w = std::max(w, l.component.size());
  auto line = [&](const std::string& name, const cost::Cost& c) {
    os << std::left << std::setw(static_cast<int>(w)) << name << "  " << std::right << std::setw(16) << c.params << "  "
       << std::setw(20) << c.flops << '\n';
  };
  os << std::left << std::setw(static_cast<int>(w)) << "component" << "  " << std::right << std::setw(16) << "params"
     << "  " << std::setw(20) << "flops" << '\n';
  for (const auto& l : rep.breakdown) line(l.component, l.cost);
  line("total", rep.total);
}

// Enumeration ----------------------------------------------------------------

struct EnumerationRow {
  std::size_t inputs;
  std::size_t active_exits;
  std::size_t depth;
  cost::Category category;
  cost::SearchSpaceSizes sizes;
};

inline std::vector<EnumerationRow> enumerate_configs(std::size_t max_inputs, std::size_t depth) {
  std::vector<EnumerationRow> rows;
  for (std::size_t n = 1; n <= max_inputs; ++n)
    for (std::size_t k = 1; k <= depth; ++k)
      rows.push_back({n, k, depth, cost::classify_config(n, k, depth), cost::search_space_sizes(n, depth)});
  return rows;
}

inline Json enumeration_row_json(const EnumerationRow& r) {
  Json j;
  j["N"] = r.inputs;
  j["K"] = r.active_exits;
  j["D"] = r.depth;
  j["category"] = cost::to_string(r.category);
  j["naive"] = r.sizes.naive.str();
  j["reduced"] = r.sizes.reduced.str();
  return j;
}

inline void write_enumeration_table(std::ostream& os, const std::vector<EnumerationRow>& rows) {
  os << std::left << std::setw(4) << "N" << std::setw(4) << "K" << std::setw(4) << "D" << std::setw(8) << "category"
     << std::right << std::setw(24) << "naive" << std::setw(10) << "reduced" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(4) << r.inputs << std::setw(4) << r.active_exits << std::setw(4) << r.depth
       << std::setw(8) << cost::to_string(r.category) << std::right << std::setw(24) << r.sizes.naive.str()
       << std::setw(10) << r.sizes.reduced.str() << '\n';
  }
}

}  // namespace sae
