#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace moesumm {

using TokenId = std::int64_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr std::size_t kReservedTokens = 4;

/// One tokenized source/summary pair from a tagged dataset.
struct Example {
  std::vector<TokenId> source_ids;  // encoder input, EOS-terminated
  std::vector<TokenId> target_ids;  // BOS ... EOS
  std::size_t dataset_id = 0;
  std::string raw_source;
  std::string raw_summary;

  /// Number of predicted target tokens (target length excluding BOS).
  std::size_t n_target() const { return target_ids.empty() ? 0 : target_ids.size() - 1; }
};

/// All examples of one dataset.
struct Corpus {
  std::size_t dataset_id = 0;
  std::vector<Example> examples;
};

}  // namespace moesumm
