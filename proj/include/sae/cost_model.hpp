// Exact parameter and FLOP counts for SAE input layers, backbones and exits,
// plus the (N, K) configuration taxonomy and search-space sizes.
//
// FLOPs count one operation per weight application (multiply-accumulate
// counted once), one per bias, and one per element for normalisation terms
// exactly as the per-layer formulas below state. All arithmetic is integer.
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace sae::cost {

using Count = std::uint64_t;
using BigCount = boost::multiprecision::cpp_int;

class CostError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline Count mul(Count a, Count b) {
  Count r;
  if (__builtin_mul_overflow(a, b, &r)) throw CostError("cost arithmetic overflows 64 bits");
  return r;
}

template <class... Rest>
Count mul(Count a, Count b, Rest... rest) {
  return mul(mul(a, b), rest...);
}

inline Count add(Count a, Count b) {
  Count r;
  if (__builtin_add_overflow(a, b, &r)) throw CostError("cost arithmetic overflows 64 bits");
  return r;
}

template <class... Rest>
Count add(Count a, Count b, Rest... rest) {
  return add(add(a, b), rest...);
}

inline void positive(std::initializer_list<Count> dims, const char* what) {
  for (auto d : dims)
    if (d == 0) throw CostError(std::string(what) + ": dimensions must be positive");
}

}  // namespace detail

struct Cost {
  Count params = 0;
  Count flops = 0;

  Cost& operator+=(const Cost& o) {
    params = detail::add(params, o.params);
    flops = detail::add(flops, o.flops);
    return *this;
  }
  friend Cost operator+(Cost a, const Cost& b) { return a += b; }
  friend bool operator==(const Cost&, const Cost&) = default;
};

// ---------------------------------------------------------------------------
// Taxonomy

enum class Category { SE, EE, MIMO, MIMMO, IB };

inline const char* to_string(Category c) {
  switch (c) {
    case Category::SE: return "SE";
    case Category::EE: return "EE";
    case Category::MIMO: return "MIMO";
    case Category::MIMMO: return "MIMMO";
    case Category::IB: return "IB";
  }
  return "?";
}

/// N=1,K=1: SE; N=1,K>=2: EE; N>=2,K=1: MIMO; N>=2,K=D: MIMMO; otherwise IB.
/// With D=1 and N>=2, K=1=D is reported as MIMO.
inline Category classify_config(std::size_t inputs, std::size_t active_exits, std::size_t depth) {
  if (inputs < 1 || depth < 1 || active_exits < 1 || active_exits > depth) {
    throw CostError("invalid configuration: need N >= 1 and 1 <= K <= D (N=" + std::to_string(inputs) +
                    ", K=" + std::to_string(active_exits) + ", D=" + std::to_string(depth) + ")");
  }
  if (inputs == 1) return active_exits == 1 ? Category::SE : Category::EE;
  if (active_exits == 1) return Category::MIMO;
  if (active_exits == depth) return Category::MIMMO;
  return Category::IB;
}

struct SearchSpaceSizes {
  BigCount naive;   // (2^D - 1)^N
  BigCount reduced; // N * D
};

inline SearchSpaceSizes search_space_sizes(std::size_t inputs, std::size_t depth) {
  if (inputs < 1 || depth < 1) throw CostError("search space needs N >= 1 and D >= 1");
  BigCount per_input = (BigCount(1) << depth) - 1;
  BigCount naive = 1;
  for (std::size_t i = 0; i < inputs; ++i) naive *= per_input;
  return {naive, BigCount(inputs) * BigCount(depth)};
}

// ---------------------------------------------------------------------------
// Input layers: the first layer widened from C to N x C inputs.

/// F x N x C + F parameters and FLOPs.
inline Cost fc_input_cost(Count F, Count N, Count C) {
  detail::positive({F, N, C}, "fc_input_cost");
  const Count p = detail::add(detail::mul(F, N, C), F);
  return {p, p};
}

/// K x K convolution, stride 1, over an H x W map.
inline Cost conv_input_cost(Count F, Count N, Count C, Count K, Count H, Count W) {
  detail::positive({F, N, C, K, H, W}, "conv_input_cost");
  return {detail::add(detail::mul(F, N, C, K, K), F),
          detail::add(detail::mul(F, N, C, K, K, H, W), detail::mul(F, H, W))};
}

/// Patch embedding of P x P patches into S tokens of width F.
inline Cost vit_input_cost(Count F, Count P, Count N, Count C, Count S) {
  detail::positive({F, P, N, C, S}, "vit_input_cost");
  return {detail::add(detail::mul(F, P, P, N, C), F), detail::add(detail::mul(F, P, P, N, C, S), detail::mul(F, S))};
}

// ---------------------------------------------------------------------------
// Early exits; n = number of inputs routed to the exit, n = 0 costs nothing.

/// FC exit: affine F_i -> F_last, batch norm, ReLU, head F_last -> n x O.
inline Cost fc_exit_cost(Count F_i, Count F_last, Count n, Count O) {
  if (n == 0) return {};
  detail::positive({F_i, F_last, O}, "fc_exit_cost");
  const Count affine = detail::add(detail::mul(F_i, F_last), F_last);
  const Count norm = detail::mul(2, F_last);
  const Count head = detail::add(detail::mul(F_last, n, O), detail::mul(n, O));
  return {detail::add(affine, norm, head), detail::add(affine, norm, F_last, head)};
}

/// Conv exit: 1x1 convolution F_i -> F_last on an H_i x W_i map, batch norm,
/// ReLU, global average pooling, head F_last -> n x O.
inline Cost conv_exit_cost(Count F_i, Count F_last, Count n, Count O, Count H_i, Count W_i) {
  if (n == 0) return {};
  detail::positive({F_i, F_last, O, H_i, W_i}, "conv_exit_cost");
  const Count head = detail::add(detail::mul(F_last, n, O), detail::mul(n, O));
  const Count params = detail::add(detail::mul(F_i, F_last), F_last, detail::mul(2, F_last), head);
  const Count hw = detail::mul(H_i, W_i);
  const Count conv = detail::add(detail::mul(F_i, F_last, hw), detail::mul(F_last, hw));
  const Count norm = detail::mul(2, F_last, hw);
  const Count relu = detail::mul(F_last, hw);
  const Count pool = detail::mul(F_last, hw);
  return {params, detail::add(conv, norm, relu, pool, head)};
}

/// ViT exit over S + N tokens: affine F -> F, GeLU, layer norm, mean over
/// tokens, head F -> n x O.
inline Cost vit_exit_cost(Count F, Count n, Count O, Count S, Count N) {
  if (n == 0) return {};
  detail::positive({F, O, S, N}, "vit_exit_cost");
  const Count tokens = detail::add(S, N);
  const Count head = detail::add(detail::mul(F, n, O), detail::mul(n, O));
  const Count params = detail::add(detail::mul(F, F), F, detail::mul(2, F), head);
  const Count affine = detail::add(detail::mul(F, F, tokens), detail::mul(F, tokens));
  const Count gelu = detail::mul(F, tokens);
  const Count norm = detail::mul(2, F, tokens);
  const Count reduce = detail::mul(F, tokens);
  return {params, detail::add(affine, gelu, norm, reduce, head)};
}

// ---------------------------------------------------------------------------
// Backbone blocks. These carry no N dependence; the convention is one block
// per depth (affine or KxK convolution, normalisation, ReLU) for fc/conv and
// a standard pre-norm transformer encoder block with MLP ratio 4 for vit.
// Residual additions are not counted.

inline Cost fc_block_cost(Count F_in, Count F_out) {
  detail::positive({F_in, F_out}, "fc_block_cost");
  const Count affine = detail::add(detail::mul(F_in, F_out), F_out);
  const Count norm = detail::mul(2, F_out);
  return {detail::add(affine, norm), detail::add(affine, norm, F_out)};
}

inline Cost conv_block_cost(Count F_in, Count F_out, Count K, Count H, Count W) {
  detail::positive({F_in, F_out, K, H, W}, "conv_block_cost");
  const Count hw = detail::mul(H, W);
  const Count params = detail::add(detail::mul(F_in, F_out, K, K), F_out, detail::mul(2, F_out));
  const Count conv = detail::add(detail::mul(F_in, F_out, K, K, hw), detail::mul(F_out, hw));
  return {params, detail::add(conv, detail::mul(2, F_out, hw), detail::mul(F_out, hw))};
}

inline Cost vit_block_cost(Count F, Count tokens) {
  detail::positive({F, tokens}, "vit_block_cost");
  const Count ff = detail::mul(F, F);
  const Count params = detail::add(detail::mul(12, ff), detail::mul(13, F));
  const Count linear = detail::mul(detail::add(detail::mul(12, ff), detail::mul(9, F)), tokens);
  const Count norms = detail::mul(4, F, tokens);
  const Count gelu = detail::mul(4, F, tokens);
  const Count attention = detail::add(detail::mul(2, tokens, tokens, F), detail::mul(tokens, tokens));
  return {params, detail::add(linear, norms, gelu, attention)};
}

// ---------------------------------------------------------------------------
// Whole-network composition

enum class Family { fc, conv, vit };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::fc: return "fc";
    case Family::conv: return "conv";
    case Family::vit: return "vit";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "fc") return Family::fc;
  if (s == "conv") return Family::conv;
  if (s == "vit") return Family::vit;
  throw CostError("unknown architecture family '" + s + "' (expected fc, conv or vit)");
}

struct Spatial {
  Count height = 1;
  Count width = 1;
  friend bool operator==(const Spatial&, const Spatial&) = default;
};

/// Architecture description. `features[j]` is F^j, the width after block j
/// (the input layer produces features[0]). `spatial[j]` is the conv feature
/// map at depth j.
struct ArchSpec {
  Family family = Family::fc;
  std::vector<Count> features;
  Count f_last = 0;
  Count input_dim = 0;  // C (channels for conv/vit)
  Count outputs = 0;    // O, raw outputs per input
  Count height = 1, width = 1;  // conv input map
  Count kernel = 3;
  std::vector<Spatial> spatial;
  Count patch = 1;
  Count sequence = 1;  // S

  std::size_t depth() const { return features.size(); }

  void validate() const {
    if (features.empty()) throw CostError("architecture needs at least one block");
    for (auto f : features)
      if (f == 0) throw CostError("feature sizes must be positive");
    if (f_last == 0 || input_dim == 0 || outputs == 0) throw CostError("F_last, C and O must be positive");
    if (family == Family::conv) {
      if (spatial.size() != features.size()) throw CostError("conv architecture needs one spatial size per block");
      if (kernel == 0 || height == 0 || width == 0) throw CostError("conv kernel and input size must be positive");
    }
    if (family == Family::vit && (patch == 0 || sequence == 0)) throw CostError("patch and sequence must be positive");
  }
};

/// n^j, the number of inputs routed to exit j.
using ExitAssignment = std::vector<Count>;

struct CostLine {
  std::string component;
  Cost cost;
};

struct CostReport {
  Cost total;
  std::vector<CostLine> breakdown;
};

inline Cost input_cost(const ArchSpec& a, Count N) {
  switch (a.family) {
    case Family::fc: return fc_input_cost(a.features[0], N, a.input_dim);
    case Family::conv: return conv_input_cost(a.features[0], N, a.input_dim, a.kernel, a.height, a.width);
    case Family::vit: return vit_input_cost(a.features[0], a.patch, N, a.input_dim, a.sequence);
  }
  return {};
}

inline Cost block_cost(const ArchSpec& a, std::size_t j, Count N) {
  const Count in = j == 0 ? a.features[0] : a.features[j - 1];
  switch (a.family) {
    case Family::fc: return fc_block_cost(in, a.features[j]);
    case Family::conv:
      return conv_block_cost(in, a.features[j], a.kernel, a.spatial[j].height, a.spatial[j].width);
    case Family::vit: return vit_block_cost(a.features[j], detail::add(a.sequence, N));
  }
  return {};
}

inline Cost exit_cost(const ArchSpec& a, std::size_t j, Count n, Count N) {
  switch (a.family) {
    case Family::fc: return fc_exit_cost(a.features[j], a.f_last, n, a.outputs);
    case Family::conv:
      return conv_exit_cost(a.features[j], a.f_last, n, a.outputs, a.spatial[j].height, a.spatial[j].width);
    case Family::vit: return vit_exit_cost(a.features[j], n, a.outputs, a.sequence, N);
  }
  return {};
}

/// Input layer + every backbone block + each exit with n^j > 0.
inline CostReport network_cost(const ArchSpec& arch, Count N, const ExitAssignment& assignment) {
  arch.validate();
  if (N == 0) throw CostError("N must be at least 1");
  if (assignment.size() != arch.depth()) {
    throw CostError("exit assignment has " + std::to_string(assignment.size()) + " entries for depth " +
                    std::to_string(arch.depth()));
  }
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    if (assignment[j] > N) {
      throw CostError("exit " + std::to_string(j) + " assigned " + std::to_string(assignment[j]) + " inputs but N=" +
                      std::to_string(N));
    }
  }
  CostReport rep;
  auto push = [&](std::string name, Cost c) {
    rep.total += c;
    rep.breakdown.push_back({std::move(name), c});
  };
  push("input", input_cost(arch, N));
  for (std::size_t j = 0; j < arch.depth(); ++j) push("backbone.block" + std::to_string(j), block_cost(arch, j, N));
  for (std::size_t j = 0; j < arch.depth(); ++j) {
    if (assignment[j] > 0) push("exit" + std::to_string(j), exit_cost(arch, j, assignment[j], N));
  }
  return rep;
}

}  // namespace sae::cost
