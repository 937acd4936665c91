#include "moesumm/config.hpp"

#include <stdexcept>

namespace moesumm {

namespace {
void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
}
}  // namespace

void ModelConfig::validate() const {
  require(vocab_size > 4, "vocab_size must exceed the 4 reserved ids");
  require(d_model > 0, "d_model must be positive");
  require(n_heads > 0, "n_heads must be positive");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(n_layers > 0, "n_layers must be positive");
  require(d_hidden_main > 0, "d_hidden_main must be positive");
  require(n_datasets > 0, "n_datasets must be positive");
  require(max_src_len > 0 && max_tgt_len > 0, "max lengths must be positive");
  require(margin_weight >= 0.0, "margin_weight must be non-negative");
  if (gating_mode != GatingMode::main_only) {
    require(n_deputies >= 1, "n_deputies must be >= 1 unless gating_mode is main_only");
    require(d_hidden_deputy > 0, "d_hidden_deputy must be positive");
  }
}

ModelConfig desk_profile() { return ModelConfig{}; }

ModelConfig paper_profile() {
  ModelConfig c;
  c.vocab_size = 50625;
  c.d_model = 1024;
  c.n_heads = 16;
  c.n_layers = 12;
  c.d_hidden_main = 4096;
  c.d_hidden_deputy = 512;
  c.n_deputies = 3;
  c.n_datasets = 3;
  c.max_src_len = 1024;
  c.max_tgt_len = 300;
  return c;
}

std::string_view to_string(GatingMode mode) {
  switch (mode) {
    case GatingMode::dataset_aware: return "dataset_aware";
    case GatingMode::classic: return "classic";
    case GatingMode::main_only: return "main_only";
  }
  return "?";
}

std::string_view to_string(GateSite site) {
  return site == GateSite::pre_activation ? "pre_activation" : "post_activation";
}

std::string_view to_string(Activation act) { return act == Activation::gelu ? "gelu" : "relu"; }

std::string_view to_string(PositionalKind kind) {
  return kind == PositionalKind::learned ? "learned" : "sinusoidal";
}

GatingMode parse_gating_mode(std::string_view text) {
  if (text == "dataset_aware") return GatingMode::dataset_aware;
  if (text == "classic") return GatingMode::classic;
  if (text == "main_only") return GatingMode::main_only;
  throw std::invalid_argument("unknown gating mode '" + std::string(text) + "'");
}

GateSite parse_gate_site(std::string_view text) {
  if (text == "pre_activation") return GateSite::pre_activation;
  if (text == "post_activation") return GateSite::post_activation;
  throw std::invalid_argument("unknown gate site '" + std::string(text) + "'");
}

Activation parse_activation(std::string_view text) {
  if (text == "gelu") return Activation::gelu;
  if (text == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + std::string(text) + "'");
}

PositionalKind parse_positional(std::string_view text) {
  if (text == "learned") return PositionalKind::learned;
  if (text == "sinusoidal") return PositionalKind::sinusoidal;
  throw std::invalid_argument("unknown positional kind '" + std::string(text) + "'");
}

}  // namespace moesumm
