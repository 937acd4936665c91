#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moesumm/adam.hpp"
#include "moesumm/config.hpp"
#include "moesumm/example.hpp"
#include "moesumm/objectives.hpp"
#include "moesumm/transformer.hpp"

namespace moesumm {

/// Per-tensor trainable flags, keyed by parameter name.
struct FreezeMask {
  std::map<std::string, bool> trainable;

  bool is_trainable(const std::string& name) const;
};

/// Selector, classic gate and deputy tensors.
bool is_deputy_side(const std::string& name);

FreezeMask all_trainable(const TransformerParams& params);
/// Only selectors and deputies train; main expert, attention, norms and embeddings stay fixed.
FreezeMask deputy_finetune_mask(const TransformerParams& params);

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t grad_accum_steps = 1;
  AdamOptions adam{1e-3, 0.9, 0.999, 1e-8};
  std::size_t warmup_steps = 0;
  /// Linear decay from the peak rate to zero at the last step.
  bool linear_decay = false;
  /// Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;
  LossOptions loss;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepLog {
  std::size_t step = 0;
  double gen_loss = 0.0;
  double margin_loss = 0.0;
  double total = 0.0;
  double mean_margin = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double gen_loss = 0.0;
  double margin_loss = 0.0;
  double total = 0.0;
};

struct TrainReport {
  std::string regime;
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
  /// dataset_id -> fraction of decoder tokens per deputy, final epoch, all layers.
  std::map<std::size_t, std::vector<double>> utilization;
  double wall_seconds = 0.0;
  std::string checkpoint;
  /// Filled by deputy fine-tuning.
  std::optional<bool> frozen_params_unchanged;
  std::size_t frozen_tensors = 0;
  std::size_t trainable_tensors = 0;

  nlohmann::json to_json() const;
  /// step,gen_loss,margin_loss,total,mean_margin
  void write_loss_csv(std::ostream& os) const;
  /// dataset_id,deputy_index,fraction
  void write_utilization_csv(std::ostream& os) const;
};

struct TrainResult {
  TransformerParams params;
  TrainReport report;
};

/// Trains `params` in place on the listed tensors with homogeneous-dataset
/// batches drawn from a shuffled union of the corpora.
TrainReport train_loop(TransformerParams& params, const std::vector<Corpus>& corpora,
                       const FreezeMask& mask, const TrainOptions& options);

/// All parameters trainable, fresh initialization from `options.seed`.
TrainResult train_mixed(const ModelConfig& config, const std::vector<Corpus>& corpora,
                        const TrainOptions& options);

struct FinetuneOptions {
  TrainOptions train;
  /// Append one new deputy per MoE layer instead of reusing the existing ones.
  bool add_fresh_deputy = false;
};

/// Adapts a trained model to one corpus by updating only selectors and
/// deputies. A dataset id equal to n_datasets allocates a fresh selector.
TrainResult finetune_deputy(const TransformerParams& checkpoint, const Corpus& corpus,
                            const FinetuneOptions& options);

/// Scales gradients so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

/// FNV-1a over the raw bytes of a tensor's shape and values.
std::uint64_t tensor_hash(const Tensor& t);
std::map<std::string, std::uint64_t> frozen_hashes(const TransformerParams& params,
                                                  const FreezeMask& mask);

struct ParamReport {
  std::size_t per_deputy = 0;       // P_f
  std::size_t deputy_total = 0;     // L x N^p x P_f
  std::size_t selector_total = 0;   // L x N^p x H x T
  std::size_t classic_gate_total = 0;
  std::size_t main_expert_total = 0;
  std::size_t backbone_total = 0;   // embeddings, attention, norms
  std::size_t total = 0;

  bool operator==(const ParamReport&) const = default;
  nlohmann::json to_json() const;
};

/// Closed-form counts from the configuration alone.
ParamReport param_report(const ModelConfig& config);
/// The same counts by walking actual tensors.
ParamReport param_walk(const TransformerParams& params);

/// Rejects empty corpora, duplicate or out-of-range dataset ids.
void validate_corpora(const ModelConfig& config, const std::vector<Corpus>& corpora);

}  // namespace moesumm
