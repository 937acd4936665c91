#include "moesumm/rouge.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "moesumm/corpus.hpp"

namespace moesumm {

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

PrfScore prf_from_counts(std::size_t overlap, std::size_t candidate_total,
                         std::size_t reference_total) {
  PrfScore s;
  s.precision = candidate_total ? static_cast<double>(overlap) / static_cast<double>(candidate_total) : 0.0;
  s.recall = reference_total ? static_cast<double>(overlap) / static_cast<double>(reference_total) : 0.0;
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

namespace {

template <typename T>
std::map<std::vector<T>, std::size_t> ngram_counts(std::span<const T> seq, std::size_t n) {
  std::map<std::vector<T>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[std::vector<T>(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

template <typename T>
PrfScore rouge_n(std::span<const T> cand, std::span<const T> ref, std::size_t n) {
  const auto c = ngram_counts(cand, n);
  const auto r = ngram_counts(ref, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : c) {
    const auto it = r.find(gram);
    if (it != r.end()) overlap += std::min(count, it->second);
  }
  const auto total = [n](std::size_t len) { return len >= n ? len - n + 1 : 0; };
  return prf_from_counts(overlap, total(cand.size()), total(ref.size()));
}

template <typename T>
std::size_t lcs(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename T>
RougeScore rouge_impl(std::span<const T> cand, std::span<const T> ref) {
  RougeScore s;
  if (ref.empty()) {
    s.empty_reference = true;
    return s;
  }
  s.r1 = rouge_n(cand, ref, 1);
  s.r2 = rouge_n(cand, ref, 2);
  s.rl = prf_from_counts(lcs(cand, ref), cand.size(), ref.size());
  return s;
}

nlohmann::json prf_json(const PrfScore& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

}  // namespace

nlohmann::json RougeScore::to_json() const {
  nlohmann::json j{{"r1", prf_json(r1)}, {"r2", prf_json(r2)}, {"rl", prf_json(rl)}};
  if (empty_reference) j["empty_reference"] = true;
  return j;
}

RougeScore rouge(std::span<const std::string> candidate, std::span<const std::string> reference) {
  return rouge_impl(candidate, reference);
}

RougeScore rouge(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  return rouge_impl(candidate, reference);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) { return lcs(a, b); }
std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) { return lcs(a, b); }

std::string to_lower_ascii(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

RougeScore rouge_text(std::string_view candidate, std::string_view reference) {
  const auto c = split_whitespace(to_lower_ascii(candidate));
  const auto r = split_whitespace(to_lower_ascii(reference));
  return rouge(std::span<const std::string>(c), std::span<const std::string>(r));
}

RougeScore mean_rouge(std::span<const RougeScore> scores) {
  RougeScore m;
  if (scores.empty()) return m;
  auto acc = [](PrfScore& into, const PrfScore& s) {
    into.precision += s.precision;
    into.recall += s.recall;
    into.f1 += s.f1;
  };
  for (const auto& s : scores) {
    acc(m.r1, s.r1);
    acc(m.r2, s.r2);
    acc(m.rl, s.rl);
  }
  const double inv = 1.0 / static_cast<double>(scores.size());
  for (PrfScore* p : {&m.r1, &m.r2, &m.rl}) {
    p->precision *= inv;
    p->recall *= inv;
    p->f1 *= inv;
  }
  return m;
}

}  // namespace moesumm
