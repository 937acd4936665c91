#pragma once

// Main/deputy expert FFN with a dataset-aware top-1 selector.
//
// Every token always passes through the main expert. One deputy is picked
// per token by softmax(a_s W_e), where W_e belongs to the token's dataset,
// and its hidden layer is scaled by the selected gate value g_p before the
// activation. The two branches share the main expert's output bias:
//
//   x_s = act(a_s W1_m + b1_m) W2_m + act(g_p (a_s W1_p + b1_p)) W2_p + b2_m
//
// The argmax is piecewise constant, so gradients reach the selector only
// through g_p.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "moesumm/config.hpp"
#include "moesumm/random.hpp"
#include "moesumm/tensor.hpp"

namespace moesumm {

struct DeputyExpert {
  Tensor w1;  // [d_model x d_hidden_deputy]
  Tensor b1;  // [d_hidden_deputy]
  Tensor w2;  // [d_hidden_deputy x d_model], no output bias
};

struct MoeFfnParams {
  Tensor w1_main;  // [d_model x d_hidden_main]
  Tensor b1_main;
  Tensor w2_main;  // [d_hidden_main x d_model]
  Tensor b2_main;
  std::vector<DeputyExpert> deputies;
  std::vector<Tensor> selectors;  // one [d_model x n_deputies] per dataset
  Tensor classic_gate;            // [d_model x n_deputies], classic mode only

  std::size_t n_deputies() const { return deputies.size(); }
  std::size_t n_datasets() const { return selectors.size(); }
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

MoeFfnParams init_moe_params(const ModelConfig& config, Rng& rng);
void append_named(const MoeFfnParams& params, const std::string& prefix,
                  std::vector<NamedTensor>& out);

/// Which experts an FFN slot consults.
enum class ExpertMode { full, main_only, classic };

std::string_view to_string(ExpertMode mode);
ExpertMode parse_expert_mode(std::string_view text);
/// Mode a model trained with `gating` uses for its full-model pass.
ExpertMode full_mode_for(GatingMode gating);

struct RouteDecision {
  std::size_t deputy = 0;
  double gate = 0.0;
  std::vector<double> distribution;
};

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

/// softmax(a_s W_e) over the deputies of dataset `dataset_id`, top-1 pick.
RouteDecision route_dataset_aware(std::span<const double> token, std::size_t dataset_id,
                                  const MoeFfnParams& params);
/// softmax(a_s W) with the shared classic gate; dataset identity is ignored.
RouteDecision route_classic(std::span<const double> token, const MoeFfnParams& params);

struct RoutingRecord {
  std::size_t layer = 0;
  std::size_t position = 0;
  std::size_t dataset_id = 0;
  std::size_t deputy = 0;
  double gate = 0.0;
  std::vector<double> distribution;
};

struct RoutingTrace {
  std::vector<RoutingRecord> records;

  bool empty() const { return records.empty(); }
  /// Columns: layer,position,dataset_id,deputy_index,gate_value
  void write_csv(std::ostream& os, bool header = true) const;
};

/// Test and analysis hooks; both unset in normal operation.
struct RoutingOverride {
  std::optional<std::size_t> pinned_deputy;  // every token goes to this deputy
  std::optional<double> forced_gate;         // replaces g_p by a constant
};

struct MoeCall {
  std::size_t dataset_id = 0;
  ExpertMode mode = ExpertMode::full;
  GateSite gate_site = GateSite::pre_activation;
  Activation activation = Activation::gelu;
  const RoutingOverride* override = nullptr;
  RoutingTrace* trace = nullptr;
  std::size_t layer = 0;
  /// Position of each row within its sequence, for trace records.
  std::span<const std::size_t> positions;
};

/// FFN slot over a row-stacked matrix a [n x d_model].
Tensor moe_forward(const Tensor& a, const MoeFfnParams& params, const MoeCall& call);

}  // namespace moesumm
