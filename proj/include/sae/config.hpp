// Sectioned key=value configuration files.
//
// Grammar (one construct per line, surrounding whitespace ignored):
//   # comment            anything after '#' is ignored
//   [section]            starts a section
//   key = value          assigns a key inside the current section
// Unknown sections or keys, duplicate keys and keys outside a section are
// errors. Every error message starts with "line <n>:".
#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sae/cost_model.hpp"
#include "sae/data.hpp"
#include "sae/network.hpp"
#include "sae/objective.hpp"
#include "sae/trainer.hpp"

namespace sae {

class ParseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct IniEntry {
  std::string value;
  std::size_t line = 0;
};

using IniSection = std::map<std::string, IniEntry>;

struct IniDocument {
  std::map<std::string, IniSection> sections;
  std::map<std::string, std::size_t> section_lines;
};

namespace detail {

inline std::string line_prefix(std::size_t line) { return "line " + std::to_string(line) + ": "; }

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline IniDocument parse_ini(const std::string& text) {
  IniDocument doc;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    auto hash = raw.find('#');
    auto s = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ParseError(detail::line_prefix(line) + "malformed section header");
      section = detail::trim(s.substr(1, s.size() - 2));
      if (doc.section_lines.count(section)) {
        throw ParseError(detail::line_prefix(line) + "section [" + section + "] already opened on line " +
                         std::to_string(doc.section_lines[section]));
      }
      doc.section_lines[section] = line;
      doc.sections[section];
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError(detail::line_prefix(line) + "expected 'key = value'");
    if (section.empty()) throw ParseError(detail::line_prefix(line) + "key outside of any section");
    auto key = detail::trim(s.substr(0, eq));
    auto value = detail::trim(s.substr(eq + 1));
    if (key.empty()) throw ParseError(detail::line_prefix(line) + "empty key");
    auto& sec = doc.sections[section];
    if (auto it = sec.find(key); it != sec.end()) {
      throw ParseError(detail::line_prefix(line) + "duplicate key '" + section + "." + key + "' (first set on line " +
                       std::to_string(it->second.line) + ", again on line " + std::to_string(line) + ")");
    }
    sec[key] = {value, line};
  }
  return doc;
}

/// Typed access to an IniDocument that enforces the allowed key set.
class IniReader {
 public:
  IniReader(IniDocument doc, std::map<std::string, std::set<std::string>> schema)
      : doc_(std::move(doc)), schema_(std::move(schema)) {
    for (const auto& [name, sec] : doc_.sections) {
      auto s = schema_.find(name);
      if (s == schema_.end()) throw ParseError(detail::line_prefix(doc_.section_lines[name]) + "unknown section [" + name + "]");
      for (const auto& [key, entry] : sec) {
        if (!s->second.count(key)) {
          throw ParseError(detail::line_prefix(entry.line) + "unknown key '" + key + "' in section [" + name + "]");
        }
      }
    }
  }

  const IniEntry* find(const std::string& section, const std::string& key) const {
    auto s = doc_.sections.find(section);
    if (s == doc_.sections.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  const IniEntry& require(const std::string& section, const std::string& key) const {
    if (const auto* e = find(section, key)) return *e;
    throw ParseError("missing required key '" + key + "' in section [" + section + "]");
  }

  std::size_t line_of(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    return e ? e->line : 0;
  }

  std::optional<std::string> text(const std::string& section, const std::string& key) const {
    if (const auto* e = find(section, key)) return e->value;
    return std::nullopt;
  }

  std::optional<double> real(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    if (!e) return std::nullopt;
    return to_real(*e, key);
  }

  std::optional<std::uint64_t> integer(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    if (!e) return std::nullopt;
    return to_integer(*e, key);
  }

  std::uint64_t required_integer(const std::string& section, const std::string& key) const {
    return to_integer(require(section, key), key);
  }

  std::vector<std::uint64_t> integer_list(const std::string& section, const std::string& key) const {
    std::vector<std::uint64_t> out;
    const auto* e = find(section, key);
    if (!e) return out;
    std::istringstream is(e->value);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(to_integer({detail::trim(item), e->line}, key));
    return out;
  }

  static double to_real(const IniEntry& e, const std::string& key) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (ec != std::errc() || ptr != e.value.data() + e.value.size() || !std::isfinite(v)) {
      throw ParseError(detail::line_prefix(e.line) + key + " must be a finite number, got '" + e.value + "'");
    }
    return v;
  }

  static std::uint64_t to_integer(const IniEntry& e, const std::string& key) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (ec != std::errc() || ptr != e.value.data() + e.value.size()) {
      throw ParseError(detail::line_prefix(e.line) + key + " must be a nonnegative integer, got '" + e.value + "'");
    }
    return v;
  }

 private:
  IniDocument doc_;
  std::map<std::string, std::set<std::string>> schema_;
};

/// Where training data comes from.
struct DataSource {
  std::string kind = "two_clusters";  // generator name or "csv"
  std::string path;                   // csv only
  std::size_t size = 1000;
  double noise = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const DataSource&, const DataSource&) = default;
};

/// Everything a training run needs.
struct RunConfig {
  SAEConfig model;
  bool input_dim_set = false;
  bool output_dim_set = false;
  TrainerConfig trainer;
  ScheduleSpec schedule;
  DataSource data;
  std::size_t bins = 15;
  std::string checkpoint_path;
  std::string log_path;
  std::string metrics_path;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline Dataset load_dataset(const DataSource& src, Task task) {
  if (src.kind == "csv") return load_csv(src.path, task);
  return gen_data(parse_data_kind(src.kind), src.size, src.noise, src.seed);
}

inline RunConfig parse_config(const std::string& text) {
  IniReader r(parse_ini(text),
              {{"model", {"N", "K", "D", "width", "task", "input_dim", "output_dim", "seed"}},
               {"schedule",
                {"alpha_start", "alpha_end", "temperature_start", "temperature_end", "repetition_start",
                 "repetition_end"}},
               {"trainer",
                {"optimizer", "learning_rate", "weight_decay", "clip_norm", "batch_size", "steps", "batch_repetition",
                 "log_interval", "seed"}},
               {"data", {"kind", "path", "size", "noise", "seed"}},
               {"eval", {"bins"}},
               {"output", {"checkpoint", "log", "metrics"}}});
  RunConfig c;
  auto& m = c.model;
  m.inputs = r.required_integer("model", "N");
  m.active_exits = r.required_integer("model", "K");
  m.depth = r.required_integer("model", "D");
  m.width = r.required_integer("model", "width");
  m.seed = r.integer("model", "seed").value_or(0);

  c.data.kind = r.require("data", "kind").value;
  if (c.data.kind != "csv") {
    try {
      parse_data_kind(c.data.kind);
    } catch (const DataError& e) {
      throw ParseError(detail::line_prefix(r.line_of("data", "kind")) + e.what());
    }
  }
  c.data.path = r.text("data", "path").value_or("");
  if (c.data.kind == "csv" && c.data.path.empty()) throw ParseError("missing required key 'path' in section [data]");
  c.data.size = r.integer("data", "size").value_or(c.data.size);
  c.data.noise = r.real("data", "noise").value_or(c.data.noise);
  c.data.seed = r.integer("data", "seed").value_or(c.data.seed);

  if (auto t = r.text("model", "task")) {
    try {
      m.task = parse_task(*t);
    } catch (const std::invalid_argument& e) {
      throw ParseError(detail::line_prefix(r.line_of("model", "task")) + e.what());
    }
  } else {
    m.task = c.data.kind == "csv" ? Task::classification : task_of(parse_data_kind(c.data.kind));
  }
  if (auto v = r.integer("model", "input_dim")) {
    m.input_dim = *v;
    c.input_dim_set = true;
  }
  if (auto v = r.integer("model", "output_dim")) {
    m.output_dim = *v;
    c.output_dim_set = true;
  }

  auto& s = c.schedule;
  s.alpha_start = r.real("schedule", "alpha_start").value_or(s.alpha_start);
  s.alpha_end = r.real("schedule", "alpha_end").value_or(s.alpha_end);
  s.temperature_start = r.real("schedule", "temperature_start").value_or(s.temperature_start);
  s.temperature_end = r.real("schedule", "temperature_end").value_or(s.temperature_end);
  s.repetition_start = r.real("schedule", "repetition_start").value_or(s.repetition_start);
  s.repetition_end = r.real("schedule", "repetition_end").value_or(s.repetition_end);
  s.steps = r.required_integer("trainer", "steps");

  auto& t = c.trainer;
  if (auto o = r.text("trainer", "optimizer")) {
    try {
      t.optimizer = parse_optimizer(*o);
    } catch (const ConfigError& e) {
      throw ParseError(detail::line_prefix(r.line_of("trainer", "optimizer")) + e.what());
    }
  }
  t.learning_rate = r.real("trainer", "learning_rate").value_or(t.learning_rate);
  t.weight_decay = r.real("trainer", "weight_decay").value_or(t.weight_decay);
  t.clip_norm = r.real("trainer", "clip_norm").value_or(t.clip_norm);
  t.batch_size = r.integer("trainer", "batch_size").value_or(t.batch_size);
  t.batch_repetition = r.integer("trainer", "batch_repetition").value_or(t.batch_repetition);
  t.log_interval = r.integer("trainer", "log_interval").value_or(t.log_interval);
  t.seed = r.integer("trainer", "seed").value_or(t.seed);

  c.bins = r.integer("eval", "bins").value_or(c.bins);
  c.checkpoint_path = r.require("output", "checkpoint").value;
  c.log_path = r.require("output", "log").value;
  c.metrics_path = r.text("output", "metrics").value_or("");

  // Range checks, each attributed to the line of the first offending key.
  auto check = [&](bool ok, const char* section, const char* key, const std::string& msg) {
    if (!ok) throw ParseError(detail::line_prefix(r.line_of(section, key)) + msg);
  };
  check(m.inputs >= 1, "model", "N", "N must be at least 1");
  check(m.depth >= 1, "model", "D", "D must be at least 1");
  check(m.active_exits >= 1 && m.active_exits <= m.depth, "model", "K", "K must satisfy 1 ≤ K ≤ D");
  check(m.width >= 1, "model", "width", "width must be at least 1");
  check(!c.input_dim_set || m.input_dim >= 1, "model", "input_dim", "input_dim must be at least 1");
  check(!c.output_dim_set || m.output_dim >= 1, "model", "output_dim", "output_dim must be at least 1");
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  auto temp = [](double v) { return v > 0.0 && v <= 1.0; };
  check(in01(s.alpha_start), "schedule", "alpha_start", "alpha_start must lie in [0, 1]");
  check(in01(s.alpha_end), "schedule", "alpha_end", "alpha_end must lie in [0, 1]");
  check(temp(s.temperature_start), "schedule", "temperature_start", "temperature_start must lie in (0, 1]");
  check(temp(s.temperature_end), "schedule", "temperature_end", "temperature_end must lie in (0, 1]");
  check(in01(s.repetition_start), "schedule", "repetition_start", "repetition_start must lie in [0, 1]");
  check(in01(s.repetition_end), "schedule", "repetition_end", "repetition_end must lie in [0, 1]");
  check(t.learning_rate >= 0.0, "trainer", "learning_rate", "learning_rate must be nonnegative");
  check(t.weight_decay >= 0.0, "trainer", "weight_decay", "weight_decay must be nonnegative");
  check(t.clip_norm > 0.0, "trainer", "clip_norm", "clip_norm must be positive");
  check(t.batch_size >= 1, "trainer", "batch_size", "batch_size must be at least 1");
  check(t.batch_repetition >= 1, "trainer", "batch_repetition", "batch_repetition must be at least 1");
  check(t.log_interval >= 1, "trainer", "log_interval", "log_interval must be at least 1");
  check(c.data.size >= 1, "data", "size", "size must be at least 1");
  check(c.data.noise >= 0.0, "data", "noise", "noise must be nonnegative");
  check(c.bins >= 1, "eval", "bins", "bins must be at least 1");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Renders every field, including defaults, so that parse(render(c)) == c.
inline std::string render_config(const RunConfig& c) {
  using detail::format_double;
  std::ostringstream os;
  const auto& m = c.model;
  os << "[model]\n"
     << "N = " << m.inputs << "\nK = " << m.active_exits << "\nD = " << m.depth << "\nwidth = " << m.width
     << "\ntask = " << to_string(m.task) << "\nseed = " << m.seed << '\n';
  if (c.input_dim_set) os << "input_dim = " << m.input_dim << '\n';
  if (c.output_dim_set) os << "output_dim = " << m.output_dim << '\n';
  const auto& s = c.schedule;
  os << "\n[schedule]\n"
     << "alpha_start = " << format_double(s.alpha_start) << "\nalpha_end = " << format_double(s.alpha_end)
     << "\ntemperature_start = " << format_double(s.temperature_start)
     << "\ntemperature_end = " << format_double(s.temperature_end)
     << "\nrepetition_start = " << format_double(s.repetition_start)
     << "\nrepetition_end = " << format_double(s.repetition_end) << '\n';
  const auto& t = c.trainer;
  os << "\n[trainer]\n"
     << "optimizer = " << to_string(t.optimizer) << "\nlearning_rate = " << format_double(t.learning_rate)
     << "\nweight_decay = " << format_double(t.weight_decay) << "\nclip_norm = " << format_double(t.clip_norm)
     << "\nbatch_size = " << t.batch_size << "\nsteps = " << s.steps << "\nbatch_repetition = " << t.batch_repetition
     << "\nlog_interval = " << t.log_interval << "\nseed = " << t.seed << '\n';
  os << "\n[data]\nkind = " << c.data.kind << '\n';
  if (!c.data.path.empty()) os << "path = " << c.data.path << '\n';
  os << "size = " << c.data.size << "\nnoise = " << format_double(c.data.noise) << "\nseed = " << c.data.seed << '\n';
  os << "\n[eval]\nbins = " << c.bins << '\n';
  os << "\n[output]\ncheckpoint = " << c.checkpoint_path << "\nlog = " << c.log_path << '\n';
  if (!c.metrics_path.empty()) os << "metrics = " << c.metrics_path << '\n';
  return os.str();
}

/// Parses an architecture description for the cost calculator.
///   [arch] family, N, input_dim, outputs, features (comma list), f_last,
///          exits (comma list of n^j, default N everywhere), kernel, height,
///          width, spatial (comma list of HxW), patch, sequence
struct CostRequest {
  cost::ArchSpec arch;
  cost::Count inputs = 1;
  cost::ExitAssignment exits;
};

inline CostRequest parse_arch_config(const std::string& text) {
  IniReader r(parse_ini(text), {{"arch",
                                 {"family", "N", "input_dim", "outputs", "features", "f_last", "exits", "kernel",
                                  "height", "width", "spatial", "patch", "sequence"}}});
  CostRequest req;
  auto& a = req.arch;
  try {
    a.family = cost::parse_family(r.require("arch", "family").value);
  } catch (const cost::CostError& e) {
    throw ParseError(detail::line_prefix(r.line_of("arch", "family")) + e.what());
  }
  req.inputs = r.required_integer("arch", "N");
  a.input_dim = r.required_integer("arch", "input_dim");
  a.outputs = r.required_integer("arch", "outputs");
  a.features = r.integer_list("arch", "features");
  if (a.features.empty()) throw ParseError("missing required key 'features' in section [arch]");
  a.f_last = r.integer("arch", "f_last").value_or(a.features.back());
  a.kernel = r.integer("arch", "kernel").value_or(a.kernel);
  a.height = r.integer("arch", "height").value_or(a.height);
  a.width = r.integer("arch", "width").value_or(a.width);
  a.patch = r.integer("arch", "patch").value_or(a.patch);
  a.sequence = r.integer("arch", "sequence").value_or(a.sequence);
  if (const auto* e = r.find("arch", "spatial")) {
    std::istringstream is(e->value);
    std::string item;
    while (std::getline(is, item, ',')) {
      item = detail::trim(item);
      auto x = item.find('x');
      if (x == std::string::npos) throw ParseError(detail::line_prefix(e->line) + "spatial entries must look like HxW");
      a.spatial.push_back({IniReader::to_integer({item.substr(0, x), e->line}, "spatial"),
                           IniReader::to_integer({item.substr(x + 1), e->line}, "spatial")});
    }
  } else if (a.family == cost::Family::conv) {
    a.spatial.assign(a.features.size(), {a.height, a.width});
  }
  req.exits = r.integer_list("arch", "exits");
  if (req.exits.empty()) req.exits.assign(a.features.size(), req.inputs);
  if (req.inputs < 1) throw ParseError(detail::line_prefix(r.line_of("arch", "N")) + "N must be at least 1");
  try {
    a.validate();
  } catch (const cost::CostError& e) {
    throw ParseError(e.what());
  }
  return req;
}

}  // namespace sae
