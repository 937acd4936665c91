#pragma once

// Greedy and length-normalized beam search.
//
// The search routines are written against a StepScorer so they can run on
// hand-built distributions as well as on the model.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "moesumm/corpus.hpp"
#include "moesumm/example.hpp"
#include "moesumm/moe.hpp"
#include "moesumm/transformer.hpp"

namespace moesumm {

/// Next-token log-probabilities for each prefix. Every prefix starts with BOS.
using StepScorer =
    std::function<std::vector<std::vector<double>>(const std::vector<std::vector<TokenId>>& prefixes)>;

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated tokens, EOS included when finished
  double log_prob = 0.0;
  double score = 0.0;           // log_prob / length^alpha
  bool finished = false;
};

struct SearchLimits {
  std::size_t max_new_tokens = 15;
  TokenId bos = kBosId;
  TokenId eos = kEosId;
};

/// Highest-scoring token at every step; ties go to the lowest id.
Hypothesis greedy_search(const StepScorer& scorer, const SearchLimits& limits);

struct BeamResult {
  Hypothesis best;
  /// Every hypothesis that reached EOS or the length cap, best first.
  std::vector<Hypothesis> finished;
};

/// Beam search with score = log_prob / length^alpha, where length counts
/// generated tokens including EOS. Throws on beam_size == 0.
BeamResult beam_search(const StepScorer& scorer, std::size_t beam_size, double alpha,
                       const SearchLimits& limits);

double length_normalized(double log_prob, std::size_t length, double alpha);

/// One decoder position: the routing of that step in every decoder layer.
using StepTrace = std::vector<RoutingRecord>;

struct DecodeOutput {
  std::vector<TokenId> tokens;  // summary tokens, without BOS/EOS
  std::string text;
  std::vector<StepTrace> trace; // one entry per generated token (EOS included); empty in main_only
  std::size_t length = 0;       // tokens.size()
  ExpertMode mode = ExpertMode::full;
  double log_prob = 0.0;
  bool hit_eos = false;
};

struct DecodeOptions {
  ExpertMode mode = ExpertMode::full;
  std::size_t beam_size = 1;
  double length_penalty = 1.0;
  const RoutingOverride* override = nullptr;
  /// Used to fill DecodeOutput::text when set.
  const Vocabulary* vocab = nullptr;
  bool record_trace = true;
};

/// Model scorer over one encoded source.
StepScorer model_scorer(const TransformerParams& params, std::span<const TokenId> source,
                        std::size_t dataset_id, const DecodeOptions& options);

DecodeOutput greedy_decode(const TransformerParams& params, std::span<const TokenId> source,
                           std::size_t dataset_id, const DecodeOptions& options = {});
DecodeOutput beam_decode(const TransformerParams& params, std::span<const TokenId> source,
                         std::size_t dataset_id, const DecodeOptions& options = {});
/// greedy_decode when beam_size == 1, beam_decode otherwise.
DecodeOutput decode(const TransformerParams& params, std::span<const TokenId> source,
                    std::size_t dataset_id, const DecodeOptions& options = {});

/// Per-step decoder routing for a finished token sequence (BOS prepended),
/// recomputed with one teacher-forced pass.
std::vector<StepTrace> routing_for(const TransformerParams& params, std::span<const TokenId> source,
                                   std::span<const TokenId> generated, std::size_t dataset_id,
                                   const DecodeOptions& options);

}  // namespace moesumm
