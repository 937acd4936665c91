#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "moesumm/transformer.hpp"

using namespace moesumm;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void randomize(TransformerParams& p, std::uint64_t seed, double stddev = 0.2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& nt : named_parameters(p)) {
    if (nt.name.find("norm") != std::string::npos) continue;
    for (auto& v : nt.tensor.mutable_values()) v = n(rng);
  }
}

std::vector<TokenId> random_tokens(std::size_t n, std::uint64_t seed, TokenId lo = 4, TokenId hi = 500) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> u(lo, hi);
  std::vector<TokenId> out(n);
  for (auto& t : out) t = u(rng);
  return out;
}

}  // namespace

TEST(Init, DeterministicAndSeedSensitive) {
  const auto c = desk_profile();
  const auto a = named_parameters(init_params(c, 4));
  const auto b = named_parameters(init_params(c, 4));
  const auto d = named_parameters(init_params(c, 5));
  ASSERT_EQ(a.size(), b.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(vec(a[i].tensor), vec(b[i].tensor)) << a[i].name;
    any_diff |= vec(a[i].tensor) != vec(d[i].tensor);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Init, BiasesZeroNormsIdentityWeightsSmall) {
  const auto params = init_params(desk_profile(), 1);
  const double embed_std = 1.0 / std::sqrt(64.0);
  for (const auto& nt : named_parameters(params)) {
    const auto v = vec(nt.tensor);
    const auto& n = nt.name;
    const bool bias = n.ends_with(".b1") || n.ends_with(".b2") || n.ends_with(".offset");
    if (bias) {
      for (double x : v) EXPECT_EQ(x, 0.0) << n;
    } else if (n.ends_with(".gain")) {
      for (double x : v) EXPECT_EQ(x, 1.0) << n;
    } else if (v.size() > 1000) {
      double ss = 0.0;
      for (double x : v) ss += x * x;
      const double expected = n.starts_with("embed.") ? embed_std : 0.02;
      EXPECT_NEAR(std::sqrt(ss / static_cast<double>(v.size())), expected, 0.1 * expected) << n;
    }
    for (double x : v) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(Config, ValidationRejectsBadShapes) {
  auto c = desk_profile();
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = desk_profile();
  c.n_deputies = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.gating_mode = GatingMode::main_only;
  EXPECT_NO_THROW(c.validate());
  const auto paper = paper_profile();
  EXPECT_EQ(paper.d_hidden_deputy, 512u);
  EXPECT_EQ(paper.n_deputies, 3u);
}

TEST(Encode, ShapeAndValidation) {
  const auto p = init_params(desk_profile(), 2);
  const auto src = random_tokens(5, 1);
  const Tensor h = encode(p, src, 0);
  EXPECT_EQ(h.shape(), (Shape{5, 64}));
  for (std::size_t n = 1; n <= p.config.max_src_len; n += 7) {
    EXPECT_EQ(encode(p, random_tokens(n, n), 1).rows(), n);
  }
  EXPECT_THROW(encode(p, random_tokens(33, 3), 0), std::invalid_argument);
  EXPECT_THROW(encode(p, std::vector<TokenId>{}, 0), std::invalid_argument);
  EXPECT_THROW(encode(p, std::vector<TokenId>{4, 512}, 0), std::out_of_range);
  EXPECT_THROW(encode(p, src, 3), std::out_of_range);
}

TEST(Encode, PermutationEquivariantWithoutPositions) {
  auto p = init_params(desk_profile(), 3);
  randomize(p, 4);
  for (auto& v : p.positions.mutable_values()) v = 0.0;
  const std::vector<TokenId> src = {10, 20, 30};
  const std::vector<TokenId> perm = {30, 10, 20};  // row i of perm is row sigma(i) of src
  const std::size_t sigma[] = {2, 0, 1};
  const auto a = vec(encode(p, src, 1));
  const auto b = vec(encode(p, perm, 1));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(b[i * 64 + j], a[sigma[i] * 64 + j], 1e-12);
  }
}

TEST(Encode, MainOnlyIgnoresDatasetId) {
  auto c = desk_profile();
  c.gating_mode = GatingMode::main_only;
  c.n_datasets = 4;
  auto p = init_params(c, 5);
  randomize(p, 6);
  const auto src = random_tokens(6, 7);
  ForwardOptions o;
  o.mode = ExpertMode::main_only;
  EXPECT_EQ(vec(encode(p, src, 0, o)), vec(encode(p, src, 3, o)));
  // A full model in main-only mode also ignores the id, even out of range.
  auto full = init_params(desk_profile(), 5);
  EXPECT_EQ(vec(encode(full, src, 0, o)), vec(encode(full, src, 99, o)));
}

TEST(Decode, CausalityAndStepwiseAgreement) {
  auto p = init_params(desk_profile(), 8);
  randomize(p, 9);
  Example ex;
  ex.source_ids = random_tokens(9, 10);
  ex.target_ids = {kBosId, 40, 41, 42, 43, kEosId};
  ex.dataset_id = 2;
  const Tensor tf = teacher_forced_logits(p, ex);
  const std::size_t V = p.config.vocab_size;
  ASSERT_EQ(tf.shape(), (Shape{5, V}));
  const Tensor enc = encode(p, ex.source_ids, 2);
  for (std::size_t t = 1; t <= 5; ++t) {
    const std::span<const TokenId> prefix(ex.target_ids.data(), t);
    const Tensor step = decode_step(p, prefix, enc, 2);
    ASSERT_EQ(step.shape(), (Shape{V}));
    for (std::size_t v = 0; v < V; ++v) EXPECT_NEAR(step.values()[v], tf.values()[(t - 1) * V + v], 1e-10);
  }
  // Changing a later target token leaves earlier logits unchanged.
  Example other = ex;
  other.target_ids[4] = 300;
  const Tensor tf2 = teacher_forced_logits(p, other);
  for (std::size_t i = 0; i < 4 * V; ++i) EXPECT_NEAR(tf.values()[i], tf2.values()[i], 1e-10);
  EXPECT_THROW(decode_step(p, std::span<const TokenId>{}, enc, 2), std::invalid_argument);
}

TEST(LogProbs, BoundsAndNormalization) {
  auto p = init_params(desk_profile(), 11);
  randomize(p, 12, 0.3);
  Example ex;
  ex.source_ids = random_tokens(12, 13);
  ex.target_ids = {kBosId, 7, 8, 9, kEosId};
  ex.dataset_id = 0;
  for (ExpertMode mode : {ExpertMode::full, ExpertMode::main_only, ExpertMode::classic}) {
    ForwardOptions o;
    o.mode = mode;
    const auto lp = vec(forward_log_probs(p, ex, o));
    ASSERT_EQ(lp.size(), 4u);
    for (double x : lp) {
      EXPECT_LE(x, 0.0);
      EXPECT_GT(std::exp(x), 0.0);
    }
    const auto logits = vec(teacher_forced_logits(p, ex, o));
    const std::size_t V = p.config.vocab_size;
    for (std::size_t t = 0; t < 4; ++t) {
      double mx = -INFINITY;
      for (std::size_t v = 0; v < V; ++v) mx = std::max(mx, logits[t * V + v]);
      double z = 0.0;
      for (std::size_t v = 0; v < V; ++v) z += std::exp(logits[t * V + v] - mx);
      double total = 0.0;
      for (std::size_t v = 0; v < V; ++v) total += std::exp(logits[t * V + v] - mx - std::log(z));
      EXPECT_NEAR(total, 1.0, 1e-12);
      EXPECT_NEAR(lp[t], logits[t * V + ex.target_ids[t + 1]] - mx - std::log(z), 1e-12);
    }
  }
  ex.target_ids.assign(18, 9);
  EXPECT_THROW(forward_log_probs(p, ex), std::invalid_argument);
}

TEST(LogProbs, ZeroGateEqualsMainOnlyEndToEnd) {
  auto p = init_params(desk_profile(), 14);
  randomize(p, 15, 0.3);
  Example ex;
  ex.source_ids = random_tokens(7, 16);
  ex.target_ids = {kBosId, 70, 71, kEosId};
  ex.dataset_id = 1;
  RoutingOverride zero;
  zero.forced_gate = 0.0;
  ForwardOptions gated, main;
  gated.override = &zero;
  main.mode = ExpertMode::main_only;
  const auto a = vec(forward_log_probs(p, ex, gated));
  const auto b = vec(forward_log_probs(p, ex, main));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Batch, RowStackingMatchesSingleExamples) {
  auto p = init_params(desk_profile(), 17);
  randomize(p, 18);
  std::vector<Example> exs(3);
  for (std::size_t i = 0; i < 3; ++i) {
    exs[i].source_ids = random_tokens(5 + 3 * i, 20 + i);
    exs[i].target_ids = random_tokens(3 + i, 30 + i);
    exs[i].target_ids.front() = kBosId;
    exs[i].target_ids.push_back(kEosId);
    exs[i].dataset_id = 1;
  }
  const Example* batch[] = {&exs[0], &exs[1], &exs[2]};
  RoutingTrace trace;
  ForwardOptions o;
  o.decoder_trace = &trace;
  const auto b = batch_log_probs(p, batch, o);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto single = vec(forward_log_probs(p, exs[i]));
    ASSERT_EQ(b.lengths[i], single.size());
    for (std::size_t t = 0; t < single.size(); ++t) {
      EXPECT_NEAR(b.log_probs.values()[b.offsets[i] + t], single[t], 1e-12);
    }
  }
  // Decoder trace: one record per token per decoder layer, positions restart per sequence.
  EXPECT_EQ(trace.records.size(), 2u * (3 + 4 + 5));
  EXPECT_EQ(trace.records.front().position, 0u);
}

TEST(Names, StableAndUnique) {
  const auto p = init_params(desk_profile(), 0);
  const auto named = named_parameters(p);
  std::set<std::string> names;
  for (const auto& nt : named) EXPECT_TRUE(names.insert(nt.name).second) << nt.name;
  EXPECT_EQ(named.front().name, "embed.tokens");
  EXPECT_TRUE(names.count("encoder.0.ffn.selector.2"));
  EXPECT_TRUE(names.count("decoder.1.ffn.deputy.2.w2"));
  EXPECT_TRUE(names.count("decoder.1.cross_attn.wo"));
  const auto copy = clone_params(p);
  auto cn = named_parameters(copy);
  cn[0].tensor.mutable_values()[0] += 1.0;
  EXPECT_NE(named[0].tensor.values()[0], cn[0].tensor.values()[0]);
}
