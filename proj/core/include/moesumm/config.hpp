#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "moesumm/tensor.hpp"

namespace moesumm {

/// How a model's FFN slots route tokens when run in full mode.
enum class GatingMode { dataset_aware, classic, main_only };

/// Where the deputy gate value multiplies the deputy branch.
enum class GateSite { pre_activation, post_activation };

enum class PositionalKind { learned, sinusoidal };

struct ModelConfig {
  std::size_t vocab_size = 512;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;  // per stack
  std::size_t d_hidden_main = 256;
  std::size_t d_hidden_deputy = 128;
  std::size_t n_deputies = 3;
  std::size_t n_datasets = 3;
  std::size_t max_src_len = 32;
  std::size_t max_tgt_len = 16;
  GatingMode gating_mode = GatingMode::dataset_aware;
  GateSite gate_site = GateSite::pre_activation;
  Activation activation = Activation::gelu;
  PositionalKind positional = PositionalKind::learned;
  double margin_weight = 1.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  /// MoE-bearing blocks over both stacks.
  std::size_t moe_layers() const { return 2 * n_layers; }
  std::size_t max_positions() const { return max_src_len > max_tgt_len ? max_src_len : max_tgt_len; }

  bool operator==(const ModelConfig&) const = default;
};

/// Scaled-down profile used throughout the tests and experiments.
ModelConfig desk_profile();
/// Dimensions reported for the BART-large setting (d_h 512, three deputies).
ModelConfig paper_profile();

std::string_view to_string(GatingMode mode);
std::string_view to_string(GateSite site);
std::string_view to_string(Activation act);
std::string_view to_string(PositionalKind kind);
GatingMode parse_gating_mode(std::string_view text);
GateSite parse_gate_site(std::string_view text);
Activation parse_activation(std::string_view text);
PositionalKind parse_positional(std::string_view text);

}  // namespace moesumm
