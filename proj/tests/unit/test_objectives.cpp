#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "moesumm/gradcheck.hpp"
#include "moesumm/objectives.hpp"

using namespace moesumm;

namespace {

// Closed form evaluated independently of the library.
double term_oracle(double pf, double pm) {
  const double m = pf - pm;
  return (1.0 - pf) * (1.0 - std::pow(m, 5)) / 2.0;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_hidden_main = 12;
  c.d_hidden_deputy = 6;
  c.n_deputies = 2;
  c.n_datasets = 2;
  c.max_src_len = 6;
  c.max_tgt_len = 4;
  return c;
}

void randomize(TransformerParams& p, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& nt : named_parameters(p)) {
    if (nt.name.find("norm") != std::string::npos) continue;
    for (auto& v : nt.tensor.mutable_values()) v = n(rng);
  }
}

Example toy_example(std::size_t dataset = 1) {
  Example ex;
  ex.source_ids = {5, 9, 4, 2};
  ex.target_ids = {1, 7, 2};
  ex.dataset_id = dataset;
  return ex;
}

}  // namespace

TEST(GenerationLoss, WorkedExamples) {
  const double perfect[] = {0.0, 0.0, 0.0};
  EXPECT_EQ(generation_loss(perfect), 0.0);
  const double uniform[] = {-std::log(50.0), -std::log(50.0)};
  EXPECT_NEAR(generation_loss(uniform), std::log(50.0), 1e-15);
  const double halves[] = {std::log(0.5), std::log(0.25)};
  EXPECT_NEAR(generation_loss(halves), 1.5 * std::log(2.0), 1e-15);
  EXPECT_NEAR(generation_loss(halves), 1.0397, 1e-4);
  EXPECT_THROW(generation_loss(std::span<const double>{}), std::invalid_argument);
}

TEST(Margin, WorkedExamplesAndRange) {
  EXPECT_EQ(margin(0.9, 0.9), 0.0);
  EXPECT_EQ(margin(1.0, 0.0), 1.0);
  EXPECT_NEAR(margin(0.8, 0.5), 0.3, 1e-15);
  EXPECT_THROW(margin(1.1, 0.5), std::invalid_argument);
  EXPECT_THROW(margin(0.5, -0.1), std::invalid_argument);
  EXPECT_THROW(margin(std::nan(""), 0.5), std::invalid_argument);
}

TEST(MaxMarginLoss, WorkedExamples) {
  const double ones[] = {1.0, 1.0, 1.0};
  const double any[] = {0.2, 0.9, 0.0};
  EXPECT_EQ(max_margin_loss(ones, any), 0.0);
  const double halves[] = {0.5, 0.5};
  EXPECT_EQ(max_margin_loss(halves, halves), 0.5);
  const double pf[] = {0.8};
  const double pm[] = {0.5};
  EXPECT_NEAR(max_margin_loss(pf, pm), 0.2 * (1.0 - 0.00243) / 2.0, 1e-15);
  EXPECT_NEAR(max_margin_loss(pf, pm), 0.099757, 1e-15);
  const double two[] = {0.5, 0.5};
  EXPECT_THROW(max_margin_loss(pf, two), std::invalid_argument);
}

TEST(MaxMarginLoss, MatchesClosedFormOnRandomVectors) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> len(1, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(rng);
    std::vector<double> pf(n), pm(n);
    double oracle = 0.0;
    for (int t = 0; t < n; ++t) {
      pf[t] = u(rng);
      pm[t] = u(rng);
      oracle += term_oracle(pf[t], pm[t]);
    }
    EXPECT_NEAR(max_margin_loss(pf, pm), oracle, 1e-12);
    // The tensor form agrees with the scalar form.
    std::vector<double> lf(n), lm(n);
    for (int t = 0; t < n; ++t) {
      lf[t] = std::log(pf[t]);
      lm[t] = std::log(pm[t]);
    }
    const std::size_t sn = static_cast<std::size_t>(n);
    EXPECT_NEAR(max_margin_loss(Tensor::from({sn}, lf), Tensor::from({sn}, lm)).item(), oracle, 1e-12);
  }
}

TEST(MaxMarginLoss, TermIsBoundedAndMonotone) {
  const int steps = 40;
  for (int i = 0; i <= steps; ++i) {
    const double pf = static_cast<double>(i) / steps;
    double prev = std::numeric_limits<double>::infinity();
    for (int j = steps; j >= 0; --j) {
      const double pm = static_cast<double>(j) / steps;
      const double t = max_margin_term(pf, pm);
      EXPECT_GE(t, 0.0);
      EXPECT_LE(t, 1.0);
      // Falling P_main raises the margin, so the term falls when P_full < 1.
      if (pf < 1.0) EXPECT_LT(t, prev) << pf << " " << pm;
      prev = t;
    }
  }
  // Fixed margin m < 1, rising P_full.
  for (double m : {-0.5, -0.1, 0.0, 0.2, 0.6}) {
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= steps; ++i) {
      const double pf = std::max(0.0, m) + (1.0 - std::abs(m)) * i / steps;
      const double pm = pf - m;
      if (pm < 0.0 || pm > 1.0) continue;
      const double t = max_margin_term(pf, pm);
      EXPECT_LT(t, prev);
      prev = t;
    }
  }
}

TEST(TotalLoss, ZeroLambdaIsGenerationLoss) {
  auto p = init_params(tiny_config(), 1);
  randomize(p, 2, 0.3);
  LossOptions lo;
  lo.margin_weight = 0.0;
  const auto b = total_loss(p, toy_example(), lo);
  EXPECT_EQ(b.total, b.gen_loss);
  EXPECT_GT(b.margin_loss, 0.0);
}

TEST(TotalLoss, PiecesRecomputedIndependently) {
  auto p = init_params(desk_profile(), 3);
  randomize(p, 4, 0.1);
  Example ex;
  ex.source_ids = {17, 40, 300, 2};
  ex.target_ids = {1, 88, 2};
  ex.dataset_id = 2;
  LossOptions lo;
  lo.margin_weight = 0.7;
  const auto b = total_loss(p, ex, lo);

  ForwardOptions full, main;
  main.mode = ExpertMode::main_only;
  const Tensor lf = forward_log_probs(p, ex, full);
  const Tensor lm = forward_log_probs(p, ex, main);
  double gen = 0.0, lmarg = 0.0;
  for (std::size_t t = 0; t < lf.size(); ++t) {
    gen -= lf.values()[t];
    lmarg += term_oracle(std::exp(lf.values()[t]), std::exp(lm.values()[t]));
  }
  gen /= static_cast<double>(lf.size());
  EXPECT_NEAR(b.gen_loss, gen, 1e-12);
  EXPECT_NEAR(b.margin_loss, lmarg, 1e-12);
  EXPECT_NEAR(b.total, gen + 0.7 * lmarg, 1e-12);
  ASSERT_EQ(b.per_token_margins.size(), 2u);
  for (double m : b.per_token_margins) {
    EXPECT_GE(m, -1.0);
    EXPECT_LE(m, 1.0);
  }
}

TEST(TotalLoss, ZeroDeputiesReduceMarginToMissHalf) {
  auto p = init_params(tiny_config(), 5);
  randomize(p, 6, 0.3);
  for (auto& nt : named_parameters(p)) {
    if (nt.name.find(".deputy.") == std::string::npos) continue;
    for (auto& v : nt.tensor.mutable_values()) v = 0.0;
  }
  const Example ex = toy_example();
  const auto b = total_loss(p, ex, LossOptions{});
  const Tensor lf = forward_log_probs(p, ex, ForwardOptions{});
  double oracle = 0.0;
  for (double lp : lf.values()) oracle += (1.0 - std::exp(lp)) / 2.0;
  EXPECT_NEAR(b.margin_loss, oracle, 1e-12);
  for (double m : b.per_token_margins) EXPECT_NEAR(m, 0.0, 1e-12);
}

TEST(BatchLoss, MeanOverExamples) {
  auto p = init_params(tiny_config(), 7);
  randomize(p, 8, 0.3);
  Example a = toy_example(), b = toy_example();
  b.source_ids = {3, 3, 11, 2};
  b.target_ids = {1, 9, 12, 2};
  const Example* batch[] = {&a, &b};
  const auto bl = batch_loss(p, batch, LossOptions{});
  const auto la = total_loss(p, a, LossOptions{});
  const auto lb = total_loss(p, b, LossOptions{});
  EXPECT_NEAR(bl.total.item(), (la.total + lb.total) / 2.0, 1e-12);
  ASSERT_EQ(bl.examples.size(), 2u);
  EXPECT_NEAR(bl.examples[1].total, lb.total, 1e-12);

  b.dataset_id = 0;
  EXPECT_THROW(batch_loss(p, batch, LossOptions{}), std::invalid_argument);
  LossOptions neg;
  neg.margin_weight = -1.0;
  EXPECT_THROW(batch_loss(p, std::span<const Example* const>(batch, 1), neg), std::invalid_argument);
}

TEST(BatchLoss, GradientsMatchFiniteDifferences) {
  auto p = init_params(tiny_config(), 9);
  randomize(p, 10, 0.3);
  Example a = toy_example(), b = toy_example();
  b.target_ids = {1, 9, 12, 2};
  const Example* batch[] = {&a, &b};
  std::vector<Tensor> ts;
  std::vector<std::string> names;
  for (auto& nt : named_parameters(p)) {
    ts.push_back(nt.tensor);
    names.push_back(nt.name);
  }
  GradCheckOptions go;
  go.step = 1e-4;
  const auto r = finite_diff_check([&] { return batch_loss(p, batch, LossOptions{}).total; }, ts, names, go);
  for (const auto& t : r.tensors) EXPECT_TRUE(t.passed) << t.name << " " << t.max_rel_error;
}

TEST(BatchLoss, DetachMainChangesOnlyTheMainGradient) {
  auto p = init_params(tiny_config(), 12);
  randomize(p, 13, 0.3);
  const Example ex = toy_example();
  const Example* batch[] = {&ex};
  auto grads = [&](bool detach) {
    for (auto& nt : named_parameters(p)) nt.tensor.zero_grad();
    LossOptions lo;
    lo.detach_main = detach;
    Tape tape;
    {
      TapeScope scope(tape);
      const Tensor loss = batch_loss(p, batch, lo).total;
      tape.backward(loss);
    }
    std::map<std::string, std::vector<double>> out;
    for (auto& nt : named_parameters(p)) out[nt.name] = {nt.tensor.grad().begin(), nt.tensor.grad().end()};
    return out;
  };
  const auto attached = grads(false);
  const auto detached = grads(true);
  // Deputies and selectors appear only in the full pass.
  for (const auto& [name, g] : attached) {
    if (name.find(".deputy.") != std::string::npos || name.find(".selector.") != std::string::npos) {
      const auto& h = detached.at(name);
      for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], h[i], 1e-14) << name;
    }
  }
  EXPECT_NE(attached.at("decoder.0.ffn.main.w1"), detached.at("decoder.0.ffn.main.w1"));
}
