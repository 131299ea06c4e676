#include <gtest/gtest.h>

#include <limits>
#include <set>

#include "sae/network_cost.hpp"
#include "sae/records.hpp"

using namespace sae;
using namespace sae::cost;

namespace {

/// Counts weight applications and bias additions of a stride-1 same-padded
/// convolution by walking every output position and every kernel tap.
Cost conv_by_sliding_window(Count F, Count C_in, Count K, Count H, Count W) {
  Cost c{F * C_in * K * K + F, 0};
  for (Count y = 0; y < H; ++y)
    for (Count x = 0; x < W; ++x)
      for (Count f = 0; f < F; ++f) {
        for (Count ch = 0; ch < C_in; ++ch)
          for (Count ky = 0; ky < K; ++ky)
            for (Count kx = 0; kx < K; ++kx) ++c.flops;
        ++c.flops;
      }
  return c;
}

Count affine_size(std::size_t in, std::size_t out) {
  Rng rng(0);
  auto a = Affine::init(in, out, rng);
  return a.weight.size() + a.bias.size();
}

}  // namespace

TEST(Taxonomy, NamedExamples) {
  EXPECT_EQ(classify_config(1, 1, 4), Category::SE);
  EXPECT_EQ(classify_config(1, 3, 4), Category::EE);
  EXPECT_EQ(classify_config(2, 1, 4), Category::MIMO);
  EXPECT_EQ(classify_config(3, 4, 4), Category::MIMMO);
  EXPECT_EQ(classify_config(2, 2, 4), Category::IB);
  EXPECT_THROW(classify_config(1, 5, 4), CostError);
  EXPECT_THROW(classify_config(0, 1, 4), CostError);
}

TEST(Taxonomy, PartitionsTheGrid) {
  for (std::size_t D = 1; D <= 5; ++D)
    for (std::size_t N = 1; N <= 4; ++N)
      for (std::size_t K = 1; K <= D; ++K) {
        const auto c = classify_config(N, K, D);
        const int hits = (N == 1 && K == 1) + (N == 1 && K >= 2) + (N >= 2 && K == 1) +
                         (N >= 2 && K == D && K >= 2) + (N >= 2 && K > 1 && K < D);
        EXPECT_EQ(hits, 1);
        if (N == 1) EXPECT_EQ(c, K == 1 ? Category::SE : Category::EE);
        else if (K == 1) EXPECT_EQ(c, Category::MIMO);
        else if (K == D) EXPECT_EQ(c, Category::MIMMO);
        else EXPECT_EQ(c, Category::IB);
      }
  std::set<Category> seen;
  for (const auto& r : enumerate_configs(2, 3)) seen.insert(r.category);
  EXPECT_EQ(seen.size(), 5u);
}

TEST(SearchSpace, Sizes) {
  EXPECT_EQ(search_space_sizes(1, 1).naive, 1);
  EXPECT_EQ(search_space_sizes(1, 1).reduced, 1);
  EXPECT_EQ(search_space_sizes(1, 2).naive, 3);
  EXPECT_EQ(search_space_sizes(1, 2).reduced, 2);
  EXPECT_EQ(search_space_sizes(4, 5).naive, 923521);
  EXPECT_EQ(search_space_sizes(4, 5).reduced, 20);
  EXPECT_EQ(search_space_sizes(2, 64).naive.str(), "340282366920938463426481119284349108225");
  for (std::size_t N = 1; N <= 4; ++N)
    for (std::size_t D = 1; D <= 8; ++D) {
      auto s = search_space_sizes(N, D);
      // With one exit there is nothing to switch off: naive is 1, reduced is N.
      if (D == 1) {
        EXPECT_EQ(s.naive, 1);
        EXPECT_EQ(s.reduced, N);
      } else {
        EXPECT_GT(s.naive, s.reduced);
      }
    }
}

TEST(InputCost, Fc) {
  EXPECT_EQ(fc_input_cost(128, 2, 10), (Cost{2688, 2688}));
  EXPECT_EQ(fc_input_cost(1, 1, 1), (Cost{2, 2}));
  EXPECT_EQ(fc_input_cost(7, 1, 5).params, 7u * 5u + 7u);
  EXPECT_EQ(fc_input_cost(128, 2, 10).params, affine_size(20, 128));
  EXPECT_THROW(fc_input_cost(0, 1, 1), CostError);
}

TEST(InputCost, Conv) {
  const auto c = conv_input_cost(64, 2, 3, 3, 32, 32);
  EXPECT_EQ(c.params, 3520u);
  EXPECT_EQ(c.flops, 3604480u);
  EXPECT_EQ(c, conv_by_sliding_window(64, 6, 3, 32, 32));
  EXPECT_EQ(conv_input_cost(5, 3, 2, 1, 1, 1).flops, conv_input_cost(5, 3, 2, 1, 1, 1).params);
  EXPECT_EQ(conv_input_cost(8, 1, 3, 3, 4, 5), conv_by_sliding_window(8, 3, 3, 4, 5));
}

TEST(InputCost, Vit) {
  const auto c = vit_input_cost(192, 4, 2, 3, 64);
  EXPECT_EQ(c.params, 18624u);
  EXPECT_EQ(c.flops, 1191936u);
  // Patch embedding is one affine map applied to each of the S tokens.
  EXPECT_EQ(c.params, affine_size(4 * 4 * 2 * 3, 192));
  EXPECT_EQ(vit_input_cost(10, 2, 1, 3, 1).flops, vit_input_cost(10, 2, 1, 3, 1).params);
}

TEST(ExitCost, FcMatchesConstructedExit) {
  EXPECT_EQ(fc_exit_cost(4, 4, 1, 2).params, 38u);
  EXPECT_EQ(fc_exit_cost(4, 4, 1, 2).flops, 38u + 4u);
  SAEConfig cfg;
  cfg.depth = 2;
  cfg.inputs = 3;
  cfg.active_exits = 1;
  cfg.width = 5;
  cfg.input_dim = 2;
  cfg.output_dim = 4;
  auto net = build_network(cfg);
  const auto& e = net.exits[1];
  const Count built = e.hidden.weight.size() + e.hidden.bias.size() + e.norm.scale.size() + e.norm.shift.size() +
                      e.prediction.weight.size() + e.prediction.bias.size();
  EXPECT_EQ(fc_exit_cost(5, 5, 3, 4).params, built);
}

TEST(ExitCost, ZeroInputsCostNothing) {
  EXPECT_EQ(fc_exit_cost(4, 4, 0, 2), Cost{});
  EXPECT_EQ(conv_exit_cost(4, 4, 0, 2, 8, 8), Cost{});
  EXPECT_EQ(vit_exit_cost(4, 0, 2, 16, 2), Cost{});
}

TEST(ExitCost, ConvAndVitComponents) {
  // H = W = 1 collapses the conv exit to the fc exit plus a pooling term.
  const auto fc = fc_exit_cost(6, 5, 2, 3), conv = conv_exit_cost(6, 5, 2, 3, 1, 1);
  EXPECT_EQ(conv.params, fc.params);
  EXPECT_EQ(conv.flops, fc.flops + 5u);
  const auto c = conv_exit_cost(8, 16, 2, 10, 4, 4);
  EXPECT_EQ(c.params, 8u * 16 + 16 + 32 + 16 * 2 * 10 + 2 * 10);
  EXPECT_EQ(c.flops, 8u * 16 * 16 + 16 * 16 + 2 * 16 * 16 + 16 * 16 + 16 * 16 + 16 * 2 * 10 + 2 * 10);
  const auto v = vit_exit_cost(12, 1, 5, 16, 2);
  EXPECT_EQ(v.params, 12u * 12 + 12 + 24 + 12 * 5 + 5);
  EXPECT_EQ(v.flops, 12u * 12 * 18 + 12 * 18 + 12 * 18 + 2 * 12 * 18 + 12 * 18 + 12 * 5 + 5);
}

TEST(NetworkCost, MatchesBuiltNetworks) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    SAEConfig c;
    c.inputs = 1 + uniform_index(rng, 4);
    c.depth = 1 + uniform_index(rng, 6);
    c.active_exits = 1 + uniform_index(rng, c.depth);
    c.width = 1 + uniform_index(rng, 40);
    c.input_dim = 1 + uniform_index(rng, 12);
    c.output_dim = 1 + uniform_index(rng, 6);
    c.task = uniform_index(rng, 2) ? Task::regression : Task::classification;
    auto net = build_network(c);
    Count counted = 0;
    for (auto& p : net.parameters()) counted += p.tensor->size();
    EXPECT_EQ(training_cost(c).total.params, counted);
  }
}

TEST(NetworkCost, TotalsAndMonotonicity) {
  ArchSpec a;
  a.family = Family::conv;
  a.features = {16, 32, 64};
  a.f_last = 64;
  a.input_dim = 3;
  a.outputs = 10;
  a.height = a.width = 32;
  a.spatial = {{32, 32}, {16, 16}, {8, 8}};
  for (auto fam : {Family::fc, Family::conv, Family::vit}) {
    a.family = fam;
    a.sequence = 64;
    a.patch = 4;
    auto base = network_cost(a, 3, {0, 0, 3});
    Cost sum;
    for (const auto& l : base.breakdown) sum += l.cost;
    EXPECT_EQ(sum, base.total);
    EXPECT_EQ(base.breakdown.size(), 1u + 3u + 1u);
    for (std::size_t j = 0; j < 3; ++j)
      for (Count n = 0; n < 3; ++n) {
        ExitAssignment lo{0, 0, 3}, hi{0, 0, 3};
        lo[j] = n;
        hi[j] = n + 1;
        auto l = network_cost(a, 3, lo).total, h = network_cost(a, 3, hi).total;
        EXPECT_LE(l.params, h.params);
        EXPECT_LE(l.flops, h.flops);
      }
  }
}

TEST(NetworkCost, SingleExitShape) {
  SAEConfig c;
  c.depth = 3;
  c.width = 8;
  c.input_dim = 2;
  c.output_dim = 3;
  auto rep = network_cost(fc_arch(c), 1, {0, 0, 1});
  Cost expect = fc_input_cost(8, 1, 2);
  for (int j = 0; j < 3; ++j) expect += fc_block_cost(8, 8);
  expect += fc_exit_cost(8, 8, 1, 3);
  EXPECT_EQ(rep.total, expect);
}

TEST(NetworkCost, Errors) {
  ArchSpec a;
  a.features = {4, 4};
  a.f_last = 4;
  a.input_dim = 2;
  a.outputs = 2;
  EXPECT_THROW(network_cost(a, 2, {1}), CostError);
  EXPECT_THROW(network_cost(a, 2, {3, 0}), CostError);
  EXPECT_THROW(network_cost(a, 0, {0, 0}), CostError);
  a.family = Family::conv;
  EXPECT_THROW(network_cost(a, 1, {0, 1}), CostError);
  const Count big = std::numeric_limits<Count>::max() / 2;
  EXPECT_THROW(fc_input_cost(big, 4, 1), CostError);
  EXPECT_THROW(parse_family("rnn"), CostError);
}
