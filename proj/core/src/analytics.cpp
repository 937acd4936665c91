#include "moesumm/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace moesumm {

namespace {

std::vector<double> normalize(std::vector<double> counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  if (total > 0.0) {
    for (auto& c : counts) c /= total;
  }
  return counts;
}

}  // namespace

std::vector<double> utilization(const RoutingTrace& trace, std::size_t n_deputies) {
  std::vector<double> counts(n_deputies, 0.0);
  for (const auto& r : trace.records) counts.at(r.deputy) += 1.0;
  return normalize(std::move(counts));
}

std::vector<double> utilization(std::span<const StepTrace> steps, std::size_t n_deputies) {
  std::vector<double> counts(n_deputies, 0.0);
  for (const auto& step : steps) {
    for (const auto& r : step) counts.at(r.deputy) += 1.0;
  }
  return normalize(std::move(counts));
}

LengthStats length_stats(std::span<const std::size_t> lengths) {
  LengthStats s;
  if (lengths.empty()) return s;
  std::vector<std::size_t> v(lengths.begin(), lengths.end());
  std::sort(v.begin(), v.end());
  double total = 0.0;
  for (auto x : v) total += static_cast<double>(x);
  s.mean = total / static_cast<double>(v.size());
  const std::size_t mid = v.size() / 2;
  s.median = v.size() % 2 ? static_cast<double>(v[mid])
                          : 0.5 * static_cast<double>(v[mid - 1] + v[mid]);
  return s;
}

const ModeResult& DatasetReport::mode(const std::string& name) const {
  for (const auto& m : modes) {
    if (m.mode == name) return m;
  }
  throw std::out_of_range("report: no mode '" + name + "' for dataset " + std::to_string(dataset_id));
}

const DatasetReport& ExpertiseReport::dataset(std::size_t id) const {
  for (const auto& d : datasets) {
    if (d.dataset_id == id) return d;
  }
  throw std::out_of_range("report: no dataset " + std::to_string(id));
}

nlohmann::json ExpertiseReport::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& d : datasets) {
    nlohmann::json j{{"dataset_id", d.dataset_id},
                     {"examples", d.examples},
                     {"gold_length", {{"mean", d.gold_length.mean}, {"median", d.gold_length.median}}},
                     {"mean_margin", d.mean_margin}};
    if (!d.encoder_utilization.empty()) j["encoder_utilization"] = d.encoder_utilization;
    auto& modes = j["modes"] = nlohmann::json::object();
    for (const auto& m : d.modes) {
      nlohmann::json mj = m.rouge.to_json();
      mj["length"] = {{"mean", m.length.mean}, {"median", m.length.median}};
      if (!m.utilization.empty()) mj["utilization"] = m.utilization;
      if (!m.summaries.empty()) mj["summaries"] = m.summaries;
      modes[m.mode] = std::move(mj);
    }
    out.push_back(std::move(j));
  }
  return out;
}

void ExpertiseReport::write_rouge_csv(std::ostream& os) const {
  os << "dataset_id,mode,r1_f1,r2_f1,rl_f1,mean_length,median_length\n";
  for (const auto& d : datasets) {
    for (const auto& m : d.modes) {
      os << d.dataset_id << ',' << m.mode << ',' << m.rouge.r1.f1 << ',' << m.rouge.r2.f1 << ','
         << m.rouge.rl.f1 << ',' << m.length.mean << ',' << m.length.median << '\n';
    }
  }
}

void ExpertiseReport::write_utilization_csv(std::ostream& os) const {
  os << "dataset_id,mode,deputy_index,fraction\n";
  for (const auto& d : datasets) {
    for (const auto& m : d.modes) {
      for (std::size_t k = 0; k < m.utilization.size(); ++k) {
        os << d.dataset_id << ',' << m.mode << ',' << k << ',' << m.utilization[k] << '\n';
      }
    }
    for (std::size_t k = 0; k < d.encoder_utilization.size(); ++k) {
      os << d.dataset_id << ",encoder," << k << ',' << d.encoder_utilization[k] << '\n';
    }
  }
}

void ExpertiseReport::write_stats_csv(std::ostream& os) const {
  os << "dataset_id,gold_mean_length,mean_margin,full_mean_length,main_only_mean_length\n";
  for (const auto& d : datasets) {
    auto mean_of = [&d](const char* name) -> std::string {
      for (const auto& m : d.modes) {
        if (m.mode == name) return std::to_string(m.length.mean);
      }
      return "";
    };
    os << d.dataset_id << ',' << d.gold_length.mean << ',' << d.mean_margin << ',' << mean_of("full")
       << ',' << mean_of("main_only") << '\n';
  }
}

ModeResult evaluate_mode(const TransformerParams& params, const Corpus& corpus,
                         const std::string& name, const DecodeOptions& decode_options) {
  ModeResult result;
  result.mode = name;
  const bool routed = decode_options.mode != ExpertMode::main_only;
  std::vector<RougeScore> scores;
  std::vector<std::size_t> lengths;
  const std::size_t n_dep =
      routed && !params.decoder.empty() ? params.decoder.front().ffn.n_deputies() : 0;
  std::vector<double> counts(n_dep, 0.0);
  for (const auto& ex : corpus.examples) {
    const auto out = decode(params, ex.source_ids, corpus.dataset_id, decode_options);
    lengths.push_back(out.length);
    if (decode_options.vocab) {
      scores.push_back(rouge_text(out.text, ex.raw_summary));
    } else {
      const std::span<const TokenId> gold(ex.target_ids.begin() + 1, ex.target_ids.end() - 1);
      scores.push_back(rouge(std::span<const TokenId>(out.tokens), gold));
    }
    for (const auto& step : out.trace) {
      for (const auto& r : step) counts.at(r.deputy) += 1.0;
    }
    result.summaries.push_back(out.text);
  }
  result.rouge = mean_rouge(scores);
  result.length = length_stats(lengths);
  result.utilization = normalize(std::move(counts));
  return result;
}

ExpertiseReport expertise_report(const TransformerParams& params, std::span<const Corpus> eval_sets,
                                 const ReportOptions& options) {
  ExpertiseReport report;
  const auto& config = params.config;
  const ExpertMode full = full_mode_for(config.gating_mode);
  const bool has_deputies = full != ExpertMode::main_only;

  for (const auto& corpus : eval_sets) {
    if (corpus.examples.empty()) continue;
    DatasetReport d;
    d.dataset_id = corpus.dataset_id;
    d.examples = corpus.examples.size();
    std::vector<std::size_t> gold;
    for (const auto& ex : corpus.examples) gold.push_back(ex.n_target() - 1);
    d.gold_length = length_stats(gold);

    DecodeOptions base;
    base.beam_size = options.beam_size;
    base.length_penalty = options.length_penalty;
    base.vocab = options.vocab;

    DecodeOptions fo = base;
    fo.mode = full;
    d.modes.push_back(evaluate_mode(params, corpus, "full", fo));
    if (options.main_only_mode && has_deputies) {
      DecodeOptions mo = base;
      mo.mode = ExpertMode::main_only;
      mo.record_trace = false;
      d.modes.push_back(evaluate_mode(params, corpus, "main_only", mo));
    }
    if (options.pinned_modes && has_deputies) {
      const std::size_t n_dep = params.decoder.empty() ? config.n_deputies
                                                       : params.decoder.front().ffn.n_deputies();
      for (std::size_t k = 0; k < n_dep; ++k) {
        RoutingOverride pin;
        pin.pinned_deputy = k;
        DecodeOptions po = base;
        po.mode = full;
        po.override = &pin;
        d.modes.push_back(evaluate_mode(params, corpus, "pinned_" + std::to_string(k), po));
      }
    }

    if (options.margins && has_deputies) {
      double total = 0.0;
      std::size_t n = 0;
      constexpr std::size_t kChunk = 32;
      for (std::size_t i = 0; i < corpus.examples.size(); i += kChunk) {
        std::vector<const Example*> batch;
        for (std::size_t j = i; j < std::min(corpus.examples.size(), i + kChunk); ++j) {
          batch.push_back(&corpus.examples[j]);
        }
        ForwardOptions f;
        f.mode = full;
        const Tensor full_lp = batch_log_probs(params, batch, f).log_probs;
        f.mode = ExpertMode::main_only;
        const Tensor main_lp = batch_log_probs(params, batch, f).log_probs;
        const auto lf = full_lp.values();
        const auto lm = main_lp.values();
        for (std::size_t t = 0; t < lf.size(); ++t) total += std::exp(lf[t]) - std::exp(lm[t]);
        n += lf.size();
      }
      d.mean_margin = n ? total / static_cast<double>(n) : 0.0;
    }

    if (options.encoder_utilization && has_deputies) {
      RoutingTrace trace;
      ForwardOptions f;
      f.mode = full;
      f.encoder_trace = &trace;
      for (const auto& ex : corpus.examples) encode(params, ex.source_ids, corpus.dataset_id, f);
      d.encoder_utilization = utilization(trace, params.encoder.front().ffn.n_deputies());
    }
    if (!options.keep_summaries) {
      for (auto& m : d.modes) m.summaries.clear();
    }
    report.datasets.push_back(std::move(d));
  }
  return report;
}

}  // namespace moesumm
