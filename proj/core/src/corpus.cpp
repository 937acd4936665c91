#include "moesumm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "moesumm/random.hpp"

namespace moesumm {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary()
    : Vocabulary(std::vector<std::string>{std::string(kPadToken), std::string(kBosToken),
                                          std::string(kEosToken), std::string(kUnkToken)}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const std::string_view reserved[] = {kPadToken, kBosToken, kEosToken, kUnkToken};
  if (tokens_.size() < kReservedTokens) {
    throw std::invalid_argument("vocabulary: fewer entries than the reserved tokens");
  }
  for (std::size_t i = 0; i < kReservedTokens; ++i) {
    if (tokens_[i] != reserved[i]) {
      throw std::invalid_argument("vocabulary: id " + std::to_string(i) + " must be " +
                                  std::string(reserved[i]) + ", found '" + tokens_[i] + "'");
    }
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty() || split_whitespace(tokens_[i]).size() != 1) {
      throw std::invalid_argument("vocabulary: entry " + std::to_string(i) + " is not a single token");
    }
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("vocabulary: duplicate entry '" + tokens_[i] + "'");
    }
  }
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& t : split_whitespace(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids, bool keep_special) const {
  std::string out;
  for (const auto id : ids) {
    if (!keep_special && id >= 0 && static_cast<std::size_t>(id) < kReservedTokens) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

Vocabulary build_vocab(std::span<const std::string> texts, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& t : split_whitespace(text)) ++counts[t];
  }
  Vocabulary base;
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (!base.contains(tok)) ranked.emplace_back(tok, n);
  }
  // counts is ordered by token, so a stable sort on frequency keeps ties alphabetical.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = base.tokens();
  for (auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(tok);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<TokenId> encode_source(const Vocabulary& vocab, std::string_view text,
                                   std::size_t max_src_len, bool* truncated) {
  if (max_src_len < 2) throw std::invalid_argument("encode_source: max_src_len must be >= 2");
  auto ids = vocab.encode(text);
  const bool cut = ids.size() + 1 > max_src_len;
  if (cut) ids.resize(max_src_len - 1);
  if (truncated) *truncated = cut;
  ids.push_back(kEosId);
  return ids;
}

std::vector<TokenId> encode_target(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> ids{kBosId};
  for (auto id : vocab.encode(text)) ids.push_back(id);
  ids.push_back(kEosId);
  return ids;
}

nlohmann::json LoadReport::to_json() const {
  return {{"path", path},
          {"lines", lines},
          {"loaded", loaded},
          {"truncated_sources", truncated_sources},
          {"rejected_targets", rejected_targets},
          {"unknown_tokens", unknown_tokens}};
}

namespace {

struct RawLine {
  std::size_t line = 0;
  std::string source;
  std::string summary;
  std::optional<std::size_t> dataset;
};

std::vector<RawLine> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError(path.string() + ": cannot open");
  std::vector<RawLine> out;
  std::string line;
  std::size_t no = 0;
  auto where = [&] { return path.string() + ":" + std::to_string(no) + ": "; };
  while (std::getline(in, line)) {
    ++no;
    if (split_whitespace(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorpusError(where() + "malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw CorpusError(where() + "expected a JSON object");
    RawLine r;
    r.line = no;
    for (const char* field : {"source", "summary"}) {
      if (!j.contains(field)) throw CorpusError(where() + "missing field \"" + field + "\"");
      if (!j[field].is_string()) throw CorpusError(where() + "field \"" + field + "\" is not a string");
    }
    r.source = j["source"].get<std::string>();
    r.summary = j["summary"].get<std::string>();
    if (j.contains("dataset")) {
      if (!j["dataset"].is_number_unsigned()) {
        throw CorpusError(where() + "field \"dataset\" must be a non-negative integer");
      }
      r.dataset = j["dataset"].get<std::size_t>();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<std::string> read_jsonl_texts(const std::filesystem::path& path) {
  std::vector<std::string> texts;
  for (auto& r : read_lines(path)) {
    texts.push_back(std::move(r.source));
    texts.push_back(std::move(r.summary));
  }
  return texts;
}

LoadResult load_jsonl(const std::filesystem::path& path, std::size_t dataset_id,
                      const Vocabulary& vocab, const LengthCaps& caps) {
  LoadResult result;
  result.report.path = path.string();
  for (const auto& r : read_lines(path)) {
    ++result.report.lines;
    Example ex;
    ex.dataset_id = r.dataset.value_or(dataset_id);
    ex.raw_source = r.source;
    ex.raw_summary = r.summary;
    ex.target_ids = encode_target(vocab, r.summary);
    if (ex.target_ids.size() > caps.max_tgt_len || ex.target_ids.size() <= 2) {
      ++result.report.rejected_targets;
      continue;
    }
    bool cut = false;
    ex.source_ids = encode_source(vocab, r.source, caps.max_src_len, &cut);
    if (cut) ++result.report.truncated_sources;
    for (auto id : ex.source_ids) result.report.unknown_tokens += id == kUnkId;
    for (auto id : ex.target_ids) result.report.unknown_tokens += id == kUnkId;
    result.examples.push_back(std::move(ex));
  }
  result.report.loaded = result.examples.size();
  return result;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream out(path);
  if (!out) throw CorpusError(path.string() + ": cannot write");
  for (const auto& ex : examples) {
    nlohmann::json j{{"source", ex.raw_source}, {"summary", ex.raw_summary}, {"dataset", ex.dataset_id}};
    out << j.dump() << '\n';
  }
}

std::vector<Corpus> group_by_dataset(std::span<const Example> examples) {
  std::map<std::size_t, Corpus> by_id;
  for (const auto& ex : examples) {
    auto& c = by_id[ex.dataset_id];
    c.dataset_id = ex.dataset_id;
    c.examples.push_back(ex);
  }
  std::vector<Corpus> out;
  for (auto& [id, c] : by_id) out.push_back(std::move(c));
  check_contiguous(out);
  return out;
}

void check_contiguous(std::span<const Corpus> corpora) {
  std::set<std::size_t> ids;
  for (const auto& c : corpora) {
    if (!ids.insert(c.dataset_id).second) {
      throw std::invalid_argument("corpora: dataset id " + std::to_string(c.dataset_id) + " appears twice");
    }
  }
  std::size_t expect = 0;
  for (auto id : ids) {
    if (id != expect) {
      throw std::invalid_argument("corpora: dataset ids must be contiguous from 0; missing " +
                                  std::to_string(expect));
    }
    ++expect;
  }
}

// ---- synthetic -------------------------------------------------------------

namespace {

constexpr std::string_view kMarkToken = "<mark>";
constexpr std::string_view kStyleTokens[] = {"<s1>", "<s2>", "<s3>"};
constexpr std::size_t kSyntheticSpecials = kReservedTokens + 4;

}  // namespace

std::string_view to_string(DomainRule rule) {
  switch (rule) {
    case DomainRule::lead: return "lead";
    case DomainRule::tagged: return "tagged";
    case DomainRule::tail_reverse: return "tail_reverse";
    case DomainRule::tail_forward: return "tail_forward";
  }
  return "?";
}

DomainRule parse_domain_rule(std::string_view text) {
  for (auto r : {DomainRule::lead, DomainRule::tagged, DomainRule::tail_reverse, DomainRule::tail_forward}) {
    if (text == to_string(r)) return r;
  }
  throw std::invalid_argument("unknown domain rule '" + std::string(text) + "'");
}

void SyntheticSpec::validate() const {
  if (rules.empty()) throw std::invalid_argument("synthetic: at least one domain rule is required");
  if (vocab_size < kSyntheticSpecials + 2 * kTailReverseLength) {
    throw std::invalid_argument("synthetic: vocab_size " + std::to_string(vocab_size) +
                                " leaves no room for markers, style tokens and content words");
  }
  if (src_min < 2 * kTaggedKeywords || src_min < kTailReverseLength) {
    throw std::invalid_argument("synthetic: src_min must be at least " +
                                std::to_string(std::max(2 * kTaggedKeywords, kTailReverseLength)));
  }
  if (src_max < src_min) throw std::invalid_argument("synthetic: src_max < src_min");
  if (examples_per_domain == 0) throw std::invalid_argument("synthetic: examples_per_domain must be positive");
}

Vocabulary synthetic_vocabulary(std::size_t vocab_size) {
  Vocabulary base;
  std::vector<std::string> tokens = base.tokens();
  tokens.emplace_back(kMarkToken);
  for (auto s : kStyleTokens) tokens.emplace_back(s);
  for (std::size_t i = 0; tokens.size() < vocab_size; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocabulary(std::move(tokens));
}

std::optional<std::string> derive_summary(DomainRule rule, std::span<const std::string> source) {
  std::vector<std::string> out;
  switch (rule) {
    case DomainRule::lead:
      if (source.size() < kLeadLength) return std::nullopt;
      out.assign(source.begin(), source.begin() + kLeadLength);
      break;
    case DomainRule::tagged:
      out.emplace_back(kStyleTokens[0]);
      for (std::size_t i = 0; i + 1 < source.size(); ++i) {
        if (source[i] == kMarkToken) out.push_back(source[i + 1]);
      }
      if (out.size() != kTaggedKeywords + 1) return std::nullopt;
      break;
    case DomainRule::tail_reverse:
      if (source.size() < kTailReverseLength) return std::nullopt;
      out.emplace_back(kStyleTokens[1]);
      out.insert(out.end(), source.rbegin(), source.rbegin() + kTailReverseLength);
      break;
    case DomainRule::tail_forward:
      if (source.size() < kTailForwardLength) return std::nullopt;
      out.emplace_back(kStyleTokens[2]);
      out.insert(out.end(), source.end() - kTailForwardLength, source.end());
      break;
  }
  return join_tokens(out);
}

std::vector<Corpus> generate_synthetic(const SyntheticSpec& spec, std::size_t first_dataset_id) {
  spec.validate();
  const Vocabulary vocab = synthetic_vocabulary(spec.vocab_size);
  const TokenId first_content = static_cast<TokenId>(kSyntheticSpecials);
  const TokenId last_content = static_cast<TokenId>(spec.vocab_size - 1);
  std::vector<Corpus> out;
  for (std::size_t d = 0; d < spec.rules.size(); ++d) {
    const DomainRule rule = spec.rules[d];
    Corpus corpus;
    corpus.dataset_id = first_dataset_id + d;
    Rng rng(derive_seed(spec.seed, 1000 + corpus.dataset_id));
    std::uniform_int_distribution<std::size_t> len_dist(spec.src_min, spec.src_max);
    std::uniform_int_distribution<TokenId> tok_dist(first_content, last_content);
    for (std::size_t n = 0; n < spec.examples_per_domain; ++n) {
      const std::size_t len = len_dist(rng);
      std::vector<std::string> src(len);
      for (auto& t : src) t = vocab.token(tok_dist(rng));
      std::vector<std::string> summary;
      switch (rule) {
        case DomainRule::lead:
          summary.assign(src.begin(), src.begin() + kLeadLength);
          break;
        case DomainRule::tagged: {
          // Keywords sit in odd slots of distinct (marker, keyword) pairs.
          std::vector<std::size_t> pairs(len / 2);
          for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i] = i;
          std::shuffle(pairs.begin(), pairs.end(), rng);
          pairs.resize(kTaggedKeywords);
          std::sort(pairs.begin(), pairs.end());
          summary.emplace_back(kStyleTokens[0]);
          for (auto p : pairs) {
            src[2 * p] = std::string(kMarkToken);
            summary.push_back(src[2 * p + 1]);
          }
          break;
        }
        case DomainRule::tail_reverse:
          summary.emplace_back(kStyleTokens[1]);
          for (std::size_t i = 0; i < kTailReverseLength; ++i) summary.push_back(src[len - 1 - i]);
          break;
        case DomainRule::tail_forward:
          summary.emplace_back(kStyleTokens[2]);
          for (std::size_t i = len - kTailForwardLength; i < len; ++i) summary.push_back(src[i]);
          break;
      }
      Example ex;
      ex.dataset_id = corpus.dataset_id;
      ex.raw_source = join_tokens(src);
      ex.raw_summary = join_tokens(summary);
      ex.source_ids = vocab.encode(ex.raw_source);
      ex.source_ids.push_back(kEosId);
      ex.target_ids = encode_target(vocab, ex.raw_summary);
      corpus.examples.push_back(std::move(ex));
    }
    out.push_back(std::move(corpus));
  }
  return out;
}

}  // namespace moesumm
