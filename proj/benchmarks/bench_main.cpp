#include <benchmark/benchmark.h>

#include <random>

#include "moesumm/decoding.hpp"
#include "moesumm/objectives.hpp"
#include "moesumm/training.hpp"

using namespace moesumm;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::from({r, c}, v);
}

std::vector<Example> random_batch(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> tok(8, 511);
  std::vector<Example> out(n);
  for (auto& ex : out) {
    ex.source_ids.resize(12);
    for (auto& t : ex.source_ids) t = tok(rng);
    ex.source_ids.push_back(kEosId);
    ex.target_ids = {kBosId, tok(rng), tok(rng), tok(rng), tok(rng), kEosId};
    ex.dataset_id = 1;
  }
  return out;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, 64, 1), b = random_matrix(64, 256, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(128);

void BM_MoeForward(benchmark::State& state) {
  const auto config = desk_profile();
  const auto p = init_params(config, 3);
  const Tensor a = random_matrix(static_cast<std::size_t>(state.range(0)), config.d_model, 4);
  MoeCall call;
  call.dataset_id = 1;
  for (auto _ : state) benchmark::DoNotOptimize(moe_forward(a, p.encoder[0].ffn, call));
}
BENCHMARK(BM_MoeForward)->Arg(16)->Arg(128);

void BM_Encode(benchmark::State& state) {
  const auto p = init_params(desk_profile(), 5);
  const auto batch = random_batch(1, 6);
  for (auto _ : state) benchmark::DoNotOptimize(encode(p, batch[0].source_ids, 1));
}
BENCHMARK(BM_Encode);

void BM_TrainStep(benchmark::State& state) {
  auto p = init_params(desk_profile(), 7);
  const auto batch = random_batch(static_cast<std::size_t>(state.range(0)), 8);
  std::vector<const Example*> ptrs;
  for (const auto& ex : batch) ptrs.push_back(&ex);
  std::vector<Tensor> params;
  for (auto& nt : named_parameters(p)) params.push_back(nt.tensor);
  Adam adam(params, AdamOptions{});
  for (auto _ : state) {
    Tape tape;
    {
      TapeScope scope(tape);
      const Tensor loss = batch_loss(p, ptrs, LossOptions{}).total;
      tape.backward(loss);
    }
    adam.step();
    adam.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
  const auto p = init_params(desk_profile(), 9);
  const auto batch = random_batch(1, 10);
  DecodeOptions o;
  o.beam_size = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(decode(p, batch[0].source_ids, 1, o));
}
BENCHMARK(BM_GreedyDecode)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
