#pragma once

// The four command-line regimes as in-process functions. Each throws on user
// errors; the executable turns exceptions into a one-line diagnostic.

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "moesumm/analytics.hpp"
#include "moesumm/run_config.hpp"
#include "moesumm/training.hpp"

namespace moesumm {

struct CommandOptions {
  std::filesystem::path config;
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::optional<std::string> mode;
  std::optional<std::size_t> beam;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::size_t dataset_id = 0;
};

/// User-facing failure: bad flags, files or configuration.
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path report;
  std::filesystem::path loss_csv;
  std::filesystem::path utilization_csv;
  TrainReport train_report;
};

/// Mixed multi-dataset training; writes model.moes (+ sidecar),
/// train_report.json, loss.csv and utilization.csv under the output directory.
TrainArtifacts cmd_train(const CommandOptions& options);

/// Deputy-only fine-tuning of --checkpoint on the single corpus of --config;
/// writes finetuned.moes, finetune_report.json and loss.csv.
TrainArtifacts cmd_finetune(const CommandOptions& options);

struct GenerateArtifacts {
  std::filesystem::path output;
  std::size_t lines = 0;
  std::size_t unknown_tokens = 0;
};

/// One JSON line {"summary", "tokens", "trace", "unk_tokens"} per input line.
GenerateArtifacts cmd_generate(const CommandOptions& options);

struct EvalArtifacts {
  std::filesystem::path metrics;
  nlohmann::json metrics_json;
  ExpertiseReport report;
};

/// ROUGE per dataset and mode, utilization, margin and length statistics and
/// parameter accounting; writes metrics.json, rouge.csv, utilization.csv, stats.csv.
EvalArtifacts cmd_eval(const CommandOptions& options);

/// Resolves --mode against the model's gating ("full" follows the gating mode).
ExpertMode resolve_mode(const std::optional<std::string>& mode, const ModelConfig& config);

}  // namespace moesumm
