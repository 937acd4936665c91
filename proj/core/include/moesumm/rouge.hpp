#pragma once

// ROUGE-1/2/L F1 over whitespace tokens of lowercased text.
//
// N-gram overlap uses clipped counts; ROUGE-L uses the token-level longest
// common subsequence of the whole summary (no sentence splitting, no
// stemming).

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moesumm/example.hpp"

namespace moesumm {

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct RougeScore {
  PrfScore r1;
  PrfScore r2;
  PrfScore rl;
  /// Set when the reference was empty; all scores are then zero.
  bool empty_reference = false;

  nlohmann::json to_json() const;
};

/// 2PR/(P+R), or 0 when P+R == 0.
double f1_score(double precision, double recall);
PrfScore prf_from_counts(std::size_t overlap, std::size_t candidate_total,
                         std::size_t reference_total);

RougeScore rouge(std::span<const std::string> candidate, std::span<const std::string> reference);
RougeScore rouge(std::span<const TokenId> candidate, std::span<const TokenId> reference);
/// Lowercases and splits on whitespace first.
RougeScore rouge_text(std::string_view candidate, std::string_view reference);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

std::string to_lower_ascii(std::string_view text);

/// Component-wise mean of a list of scores.
RougeScore mean_rouge(std::span<const RougeScore> scores);

}  // namespace moesumm
