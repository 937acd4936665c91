#pragma once

// JSON run configuration shared by the command-line regimes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moesumm/config.hpp"
#include "moesumm/corpus.hpp"
#include "moesumm/training.hpp"

namespace moesumm {

/// Raised for invalid configuration documents; the message names the key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Starts from `base` and applies the keys present in `j`; unknown keys throw.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {},
                                   const std::string& where = "model");

struct CorpusSource {
  std::string path;
  std::size_t dataset_id = 0;
};

struct SyntheticData {
  SyntheticSpec spec;
  /// Extra examples per domain generated after the training ones and held out.
  std::size_t eval_examples_per_domain = 0;
  std::size_t first_dataset_id = 0;
  /// Explicit generator seed; derived from the run seed when absent.
  std::optional<std::uint64_t> seed;
};

struct DataConfig {
  std::optional<SyntheticData> synthetic;
  std::vector<CorpusSource> corpora;
  std::vector<CorpusSource> eval;
};

struct DecodeConfig {
  std::size_t beam_size = 4;
  double length_penalty = 1.0;
};

struct RunConfig {
  std::string profile = "desk";
  ModelConfig model;
  TrainOptions train;
  /// Keep the max-margin term during deputy fine-tuning.
  bool margin_in_finetune = true;
  bool add_fresh_deputy = false;
  DecodeConfig decode;
  DataConfig data;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  nlohmann::json to_json() const;
};

/// "desk" or "paper-scale".
RunConfig profile_config(const std::string& name);
/// Applies "profile" first, then every other key. Unknown keys are rejected
/// with their full dotted path.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Training and held-out corpora materialized from a DataConfig.
struct ResolvedData {
  std::vector<Corpus> train;
  std::vector<Corpus> eval;
  Vocabulary vocab;
  std::vector<LoadReport> load_reports;
  /// Digest per corpus, keyed "<kind>:<dataset_id>".
  std::map<std::string, std::string> hashes;
};

/// Resolves corpora. `vocab`, when given, is used instead of building one
/// (fine-tuning and evaluation reuse the checkpoint's vocabulary). Relative
/// paths are resolved against `base_dir`.
ResolvedData resolve_data(const RunConfig& config, const Vocabulary* vocab,
                          const std::filesystem::path& base_dir);

/// FNV-1a digest of a corpus' token ids and dataset tags, hex.
std::string corpus_digest(const Corpus& corpus);

}  // namespace moesumm
