#include "moesumm/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace moesumm {

double length_normalized(double log_prob, std::size_t length, double alpha) {
  if (alpha == 0.0 || length == 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(length), alpha);
}

namespace {

std::vector<TokenId> with_bos(const std::vector<TokenId>& tokens, TokenId bos) {
  std::vector<TokenId> p;
  p.reserve(tokens.size() + 1);
  p.push_back(bos);
  p.insert(p.end(), tokens.begin(), tokens.end());
  return p;
}

}  // namespace

Hypothesis greedy_search(const StepScorer& scorer, const SearchLimits& limits) {
  Hypothesis h;
  for (std::size_t step = 0; step < limits.max_new_tokens; ++step) {
    const auto scores = scorer({with_bos(h.tokens, limits.bos)});
    const auto& lp = scores.at(0);
    // Rank on the accumulated score so that a beam of one makes the same choices.
    std::size_t best = 0;
    double best_score = h.log_prob + lp[0];
    for (std::size_t v = 1; v < lp.size(); ++v) {
      const double s = h.log_prob + lp[v];
      if (s > best_score) {
        best = v;
        best_score = s;
      }
    }
    h.tokens.push_back(static_cast<TokenId>(best));
    h.log_prob = best_score;
    if (static_cast<TokenId>(best) == limits.eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

BeamResult beam_search(const StepScorer& scorer, std::size_t beam_size, double alpha,
                       const SearchLimits& limits) {
  if (beam_size == 0) throw std::invalid_argument("beam_search: beam_size must be >= 1");
  struct Candidate {
    double log_prob;
    std::size_t hyp;
    TokenId token;
  };
  auto better = [](const Candidate& a, const Candidate& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return std::tie(a.hyp, a.token) < std::tie(b.hyp, b.token);
  };

  std::vector<Hypothesis> alive(1);
  BeamResult result;
  for (std::size_t step = 0; step < limits.max_new_tokens && !alive.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    for (const auto& h : alive) prefixes.push_back(with_bos(h.tokens, limits.bos));
    const auto scores = scorer(prefixes);
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      for (std::size_t v = 0; v < scores.at(i).size(); ++v) {
        cands.push_back({alive[i].log_prob + scores[i][v], i, static_cast<TokenId>(v)});
      }
    }
    // At most one EOS per hypothesis, so 2 * beam candidates always hold a full beam.
    const std::size_t keep = std::min(cands.size(), 2 * beam_size);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);

    std::vector<Hypothesis> next;
    for (std::size_t rank = 0; rank < keep; ++rank) {
      const auto& c = cands[rank];
      Hypothesis h;
      h.tokens = alive[c.hyp].tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      if (c.token == limits.eos) {
        if (rank < beam_size) {
          h.finished = true;
          h.score = length_normalized(h.log_prob, h.tokens.size(), alpha);
          result.finished.push_back(std::move(h));
        }
      } else if (next.size() < beam_size) {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
    if (result.finished.size() >= beam_size) {
      alive.clear();
      break;
    }
  }
  for (auto& h : alive) {
    h.score = length_normalized(h.log_prob, h.tokens.size(), alpha);
    result.finished.push_back(std::move(h));
  }
  std::stable_sort(result.finished.begin(), result.finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  if (!result.finished.empty()) result.best = result.finished.front();
  return result;
}

StepScorer model_scorer(const TransformerParams& params, std::span<const TokenId> source,
                        std::size_t dataset_id, const DecodeOptions& options) {
  ForwardOptions fwd;
  fwd.mode = options.mode;
  fwd.override = options.override;
  const std::span<const TokenId> one[] = {source};
  auto encoded = std::make_shared<EncodedBatch>(encode_batch(params, one, dataset_id, fwd));
  return [&params, encoded, dataset_id, fwd](const std::vector<std::vector<TokenId>>& prefixes) {
    // Every prefix attends to the same encoded rows.
    EncodedBatch enc;
    enc.states = encoded->states;
    enc.offsets.assign(prefixes.size(), 0);
    enc.lengths.assign(prefixes.size(), encoded->lengths.front());
    std::vector<std::span<const TokenId>> inputs(prefixes.begin(), prefixes.end());
    const Tensor hidden = decode_hidden(params, enc, inputs, dataset_id, fwd);
    std::vector<std::size_t> last;
    std::size_t off = 0;
    for (const auto& p : prefixes) {
      off += p.size();
      last.push_back(off - 1);
    }
    const Tensor lp = log_softmax_rows(output_logits(params, gather_rows(hidden, last)));
    const auto v = lp.values();
    const std::size_t vocab = lp.cols();
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < prefixes.size(); ++i) {
      out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(i * vocab),
                       v.begin() + static_cast<std::ptrdiff_t>((i + 1) * vocab));
    }
    return out;
  };
}

std::vector<StepTrace> routing_for(const TransformerParams& params, std::span<const TokenId> source,
                                   std::span<const TokenId> generated, std::size_t dataset_id,
                                   const DecodeOptions& options) {
  if (generated.empty() || options.mode == ExpertMode::main_only) return {};
  RoutingTrace trace;
  ForwardOptions fwd;
  fwd.mode = options.mode;
  fwd.override = options.override;
  fwd.decoder_trace = &trace;
  const std::span<const TokenId> src[] = {source};
  const auto enc = encode_batch(params, src, dataset_id, fwd);
  std::vector<TokenId> input{kBosId};
  input.insert(input.end(), generated.begin(), generated.end() - 1);
  const std::span<const TokenId> in[] = {input};
  decode_hidden(params, enc, in, dataset_id, fwd);
  std::vector<StepTrace> steps(generated.size());
  for (auto& r : trace.records) steps.at(r.position).push_back(std::move(r));
  return steps;
}

namespace {

SearchLimits limits_for(const TransformerParams& params) {
  SearchLimits l;
  l.max_new_tokens = params.config.max_tgt_len - 1;
  return l;
}

DecodeOutput finish(const TransformerParams& params, std::span<const TokenId> source,
                    std::size_t dataset_id, const DecodeOptions& options, const Hypothesis& h) {
  DecodeOutput out;
  out.mode = options.mode;
  out.log_prob = h.log_prob;
  out.hit_eos = !h.tokens.empty() && h.tokens.back() == kEosId;
  out.tokens.assign(h.tokens.begin(), out.hit_eos ? h.tokens.end() - 1 : h.tokens.end());
  out.length = out.tokens.size();
  if (options.vocab) out.text = options.vocab->decode(out.tokens);
  if (options.record_trace) out.trace = routing_for(params, source, h.tokens, dataset_id, options);
  return out;
}

}  // namespace

DecodeOutput greedy_decode(const TransformerParams& params, std::span<const TokenId> source,
                           std::size_t dataset_id, const DecodeOptions& options) {
  const auto scorer = model_scorer(params, source, dataset_id, options);
  return finish(params, source, dataset_id, options, greedy_search(scorer, limits_for(params)));
}

DecodeOutput beam_decode(const TransformerParams& params, std::span<const TokenId> source,
                         std::size_t dataset_id, const DecodeOptions& options) {
  if (options.beam_size == 0) throw std::invalid_argument("beam_decode: beam_size must be >= 1");
  const auto scorer = model_scorer(params, source, dataset_id, options);
  const auto result = beam_search(scorer, options.beam_size, options.length_penalty, limits_for(params));
  return finish(params, source, dataset_id, options, result.best);
}

DecodeOutput decode(const TransformerParams& params, std::span<const TokenId> source,
                    std::size_t dataset_id, const DecodeOptions& options) {
  if (options.beam_size == 1) return greedy_decode(params, source, dataset_id, options);
  return beam_decode(params, source, dataset_id, options);
}

}  // namespace moesumm
