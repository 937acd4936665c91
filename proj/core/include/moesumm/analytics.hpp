#pragma once

// Per-dataset expertise analytics: deputy utilization, generated-length and
// margin statistics, and ROUGE under full, main-only and pinned-deputy decoding.

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moesumm/corpus.hpp"
#include "moesumm/decoding.hpp"
#include "moesumm/rouge.hpp"
#include "moesumm/transformer.hpp"

namespace moesumm {

/// Fraction of routing records per deputy index; rows sum to 1 when non-empty.
std::vector<double> utilization(const RoutingTrace& trace, std::size_t n_deputies);
std::vector<double> utilization(std::span<const StepTrace> steps, std::size_t n_deputies);

struct LengthStats {
  double mean = 0.0;
  double median = 0.0;
};
LengthStats length_stats(std::span<const std::size_t> lengths);

/// Decoding outcome of one mode over one dataset.
struct ModeResult {
  std::string mode;  // "full", "main_only", "pinned_<k>", "classic"
  RougeScore rouge;
  LengthStats length;
  /// Present for modes that route through deputies.
  std::vector<double> utilization;
  std::vector<std::string> summaries;
};

struct DatasetReport {
  std::size_t dataset_id = 0;
  std::size_t examples = 0;
  LengthStats gold_length;
  /// Teacher-forced mean of P_full - P_main over gold tokens.
  double mean_margin = 0.0;
  std::vector<double> encoder_utilization;
  std::vector<ModeResult> modes;

  const ModeResult& mode(const std::string& name) const;
};

struct ExpertiseReport {
  std::vector<DatasetReport> datasets;

  const DatasetReport& dataset(std::size_t id) const;
  nlohmann::json to_json() const;
  /// dataset_id,mode,r1_f1,r2_f1,rl_f1,mean_length,median_length
  void write_rouge_csv(std::ostream& os) const;
  /// dataset_id,mode,deputy_index,fraction
  void write_utilization_csv(std::ostream& os) const;
  /// dataset_id,gold_mean_length,mean_margin,full_mean_length,main_only_mean_length
  void write_stats_csv(std::ostream& os) const;
};

struct ReportOptions {
  std::size_t beam_size = 1;
  double length_penalty = 1.0;
  /// Decode with every deputy pinned in turn.
  bool pinned_modes = true;
  bool main_only_mode = true;
  /// Also collect encoder-side utilization from the source pass.
  bool encoder_utilization = false;
  /// Teacher-forced margin statistics on gold targets.
  bool margins = true;
  bool keep_summaries = false;
  const Vocabulary* vocab = nullptr;
};

/// Evaluates each corpus with its own dataset id. The full mode follows the
/// model's gating (dataset-aware or classic).
ExpertiseReport expertise_report(const TransformerParams& params, std::span<const Corpus> eval_sets,
                                 const ReportOptions& options = {});

/// ROUGE of one decoding mode over a corpus; the building block of the report.
ModeResult evaluate_mode(const TransformerParams& params, const Corpus& corpus,
                         const std::string& name, const DecodeOptions& decode_options);

}  // namespace moesumm
