// Versioned text checkpoint holding the network, the depth posterior and the
// evaluation settings. Values are written as C99 hex floats so that a
// save/load round trip is bit-exact.
//
//   sae-checkpoint 1
//   config N K D width input_dim output_dim task seed
//   temperature <hexfloat>
//   tensor <name> <rows> <cols>
//   <rows*cols hexfloats separated by spaces>
//   ... one tensor block per parameter in declaration order, then
//   tensor posterior.logits N D
//   end
#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sae/depth_posterior.hpp"
#include "sae/network.hpp"

namespace sae {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  SAENetwork network;
  DepthPosterior posterior;
};

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hexfloat(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw CheckpointError("checkpoint: malformed number '" + s + "'");
  return v;
}

inline void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  os << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) os << (i ? " " : "") << hexfloat(t.values()[i]);
  os << '\n';
}

inline void read_tensor(std::istream& is, const std::string& name, Tensor& t) {
  std::string tag, got;
  std::size_t rows = 0, cols = 0;
  if (!(is >> tag >> got >> rows >> cols) || tag != "tensor") {
    throw CheckpointError("checkpoint: expected tensor block '" + name + "'");
  }
  if (got != name) throw CheckpointError("checkpoint: expected tensor '" + name + "', found '" + got + "'");
  if (rows != t.rows() || cols != t.cols()) {
    throw CheckpointError("checkpoint: tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", expected " + shape_string(t.shape()));
  }
  for (auto& v : t.values()) {
    std::string cell;
    if (!(is >> cell)) throw CheckpointError("checkpoint: truncated tensor '" + name + "'");
    v = parse_hexfloat(cell);
  }
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, SAENetwork& net, const DepthPosterior& posterior) {
  const auto& c = net.config;
  os << "sae-checkpoint 1\n";
  os << "config " << c.inputs << ' ' << c.active_exits << ' ' << c.depth << ' ' << c.width << ' ' << c.input_dim << ' '
     << c.output_dim << ' ' << to_string(c.task) << ' ' << c.seed << '\n';
  os << "temperature " << detail::hexfloat(posterior.temperature) << '\n';
  for (const auto& p : net.parameters()) detail::write_tensor(os, p.name, *p.tensor);
  detail::write_tensor(os, "posterior.logits", posterior.logits);
  os << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string magic, config_tag, task, temp_tag, temp;
  int version = 0;
  if (!(is >> magic >> version) || magic != "sae-checkpoint") throw CheckpointError("checkpoint: bad header");
  if (version != 1) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  SAEConfig c;
  if (!(is >> config_tag >> c.inputs >> c.active_exits >> c.depth >> c.width >> c.input_dim >> c.output_dim >> task >>
        c.seed) ||
      config_tag != "config") {
    throw CheckpointError("checkpoint: malformed config line");
  }
  try {
    c.task = parse_task(task);
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  if (!(is >> temp_tag >> temp) || temp_tag != "temperature") throw CheckpointError("checkpoint: missing temperature");
  Checkpoint ck{build_network(c), DepthPosterior::uniform(c.inputs, c.depth, detail::parse_hexfloat(temp))};
  for (const auto& p : ck.network.parameters()) detail::read_tensor(is, p.name, *p.tensor);
  detail::read_tensor(is, "posterior.logits", ck.posterior.logits);
  std::string end;
  if (!(is >> end) || end != "end") throw CheckpointError("checkpoint: missing end marker");
  return ck;
}

inline void save_checkpoint(const std::string& path, SAENetwork& net, const DepthPosterior& posterior) {
  std::ofstream os(path);
  if (!os) throw CheckpointError("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, net, posterior);
  if (!os) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace sae
