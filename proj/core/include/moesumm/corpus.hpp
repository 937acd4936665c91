#pragma once

// Whitespace vocabulary, JSONL ingestion and the rule-based synthetic domains.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "moesumm/example.hpp"

namespace moesumm {

std::vector<std::string> split_whitespace(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

/// Token strings <-> contiguous ids. Ids 0..3 are <pad>, <s>, </s>, <unk>.
class Vocabulary {
 public:
  Vocabulary();
  /// `tokens` lists every entry in id order, reserved ones included.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  /// UNK for unknown tokens.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::string_view text) const;
  /// Space-joined tokens; reserved ids are dropped unless `keep_special`.
  std::string decode(std::span<const TokenId> ids, bool keep_special = false) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Frequency-sorted (ties alphabetical) after the reserved entries, truncated
/// to `max_size` entries in total.
Vocabulary build_vocab(std::span<const std::string> texts, std::size_t max_size);

/// Length caps applied while tokenizing.
struct LengthCaps {
  std::size_t max_src_len = 32;  // including the trailing EOS
  std::size_t max_tgt_len = 16;  // including BOS and EOS
};

/// Source text -> encoder ids, truncated to the cap and EOS-terminated.
std::vector<TokenId> encode_source(const Vocabulary& vocab, std::string_view text,
                                   std::size_t max_src_len, bool* truncated = nullptr);
/// Summary text -> BOS ... EOS.
std::vector<TokenId> encode_target(const Vocabulary& vocab, std::string_view text);

struct LoadReport {
  std::string path;
  std::size_t lines = 0;
  std::size_t loaded = 0;
  std::size_t truncated_sources = 0;
  std::size_t rejected_targets = 0;
  std::size_t unknown_tokens = 0;

  nlohmann::json to_json() const;
};

struct LoadResult {
  std::vector<Example> examples;
  LoadReport report;
};

/// Error raised for malformed corpus files; the message names the line.
class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One JSON object per line with string fields "source" and "summary" and an
/// optional integer "dataset" overriding `dataset_id`. Blank lines are skipped.
LoadResult load_jsonl(const std::filesystem::path& path, std::size_t dataset_id,
                      const Vocabulary& vocab, const LengthCaps& caps);
/// Raw (source, summary) text pairs, for building a vocabulary before loading.
std::vector<std::string> read_jsonl_texts(const std::filesystem::path& path);

void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples);

/// Groups examples by dataset id and rejects id sets that are not 0..T-1.
std::vector<Corpus> group_by_dataset(std::span<const Example> examples);
void check_contiguous(std::span<const Corpus> corpora);

// ---- synthetic domains -----------------------------------------------------

enum class DomainRule {
  lead,          // summary = first 4 source tokens
  tagged,        // <s1> + the 3 tokens that follow a <mark> token
  tail_reverse,  // <s2> + last 6 source tokens, reversed
  tail_forward,  // <s3> + last 4 source tokens, in order
};

std::string_view to_string(DomainRule rule);
DomainRule parse_domain_rule(std::string_view text);

inline constexpr std::size_t kLeadLength = 4;
inline constexpr std::size_t kTaggedKeywords = 3;
inline constexpr std::size_t kTailReverseLength = 6;
inline constexpr std::size_t kTailForwardLength = 4;

struct SyntheticSpec {
  std::vector<DomainRule> rules{DomainRule::lead, DomainRule::tagged, DomainRule::tail_reverse};
  std::size_t examples_per_domain = 2000;
  std::size_t vocab_size = 512;
  std::size_t src_min = 8;
  std::size_t src_max = 14;
  std::uint64_t seed = 0;

  void validate() const;
};

/// <pad> <s> </s> <unk> <mark> <s1> <s2> <s3> w0 w1 ... up to vocab_size.
Vocabulary synthetic_vocabulary(std::size_t vocab_size);

/// Corpus i uses rules[i] and dataset id `first_dataset_id + i`.
std::vector<Corpus> generate_synthetic(const SyntheticSpec& spec, std::size_t first_dataset_id = 0);

/// Recomputes the summary a rule prescribes for `source` (without EOS), as
/// space-joined text. Empty when the source cannot carry the rule.
std::optional<std::string> derive_summary(DomainRule rule, std::span<const std::string> source);

}  // namespace moesumm
