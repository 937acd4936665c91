#pragma once

// Pre-norm encoder-decoder transformer whose FFN slots are MoE layers.
//
// Batches are row-stacked: the token rows of every sequence in a batch are
// concatenated and attention runs per sequence segment, so position-wise
// work (projections, FFN experts) is done with one matrix product per batch.

#include <span>
#include <vector>

#include "moesumm/config.hpp"
#include "moesumm/example.hpp"
#include "moesumm/moe.hpp"
#include "moesumm/tensor.hpp"

namespace moesumm {

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [d_model x d_model] each
};

struct LayerNormParams {
  Tensor gain;
  Tensor offset;
};

struct EncoderLayer {
  LayerNormParams attn_norm;
  AttentionParams self_attn;
  LayerNormParams ffn_norm;
  MoeFfnParams ffn;
};

struct DecoderLayer {
  LayerNormParams self_norm;
  AttentionParams self_attn;
  LayerNormParams cross_norm;
  AttentionParams cross_attn;
  LayerNormParams ffn_norm;
  MoeFfnParams ffn;
};

struct TransformerParams {
  ModelConfig config;
  Tensor token_embedding;  // [vocab x d_model], tied to the output projection
  Tensor positions;        // [max_positions x d_model]; constant when sinusoidal
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  LayerNormParams encoder_norm;
  LayerNormParams decoder_norm;
};

TransformerParams init_params(const ModelConfig& config, std::uint64_t seed);
TransformerParams init_params(const ModelConfig& config);

/// Every trainable tensor with a stable dotted name, in a fixed order.
std::vector<NamedTensor> named_parameters(const TransformerParams& params);
/// Independent copy of all tensors.
TransformerParams clone_params(const TransformerParams& params);

struct ForwardOptions {
  ExpertMode mode = ExpertMode::full;
  const RoutingOverride* override = nullptr;
  RoutingTrace* encoder_trace = nullptr;
  RoutingTrace* decoder_trace = nullptr;
};

/// Row-stacked encoder output for a batch of sources.
struct EncodedBatch {
  Tensor states;  // [sum(src_len) x d_model]
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;
};

EncodedBatch encode_batch(const TransformerParams& params,
                          std::span<const std::span<const TokenId>> sources,
                          std::size_t dataset_id, const ForwardOptions& options = {});

/// Decoder hidden states (after the final norm) for teacher-forced inputs;
/// inputs[i] attends to encoded segment i.
Tensor decode_hidden(const TransformerParams& params, const EncodedBatch& encoded,
                     std::span<const std::span<const TokenId>> inputs, std::size_t dataset_id,
                     const ForwardOptions& options = {});

/// Tied output projection: hidden [n x d] -> logits [n x vocab].
Tensor output_logits(const TransformerParams& params, const Tensor& hidden);

Tensor encode(const TransformerParams& params, std::span<const TokenId> src, std::size_t dataset_id,
              const ForwardOptions& options = {});

/// Next-token logits [vocab] for the last position of `prefix` (BOS first).
Tensor decode_step(const TransformerParams& params, std::span<const TokenId> prefix,
                   const Tensor& enc_out, std::size_t dataset_id, const ForwardOptions& options = {});

/// Teacher-forced logits for every decoder input position of one example.
Tensor teacher_forced_logits(const TransformerParams& params, const Example& example,
                             const ForwardOptions& options = {});

/// log P(y_t | y_<t, source) for t = 1..n_y.
Tensor forward_log_probs(const TransformerParams& params, const Example& example,
                         const ForwardOptions& options = {});

/// Gold-token log-probabilities of a homogeneous-dataset batch, concatenated
/// in example order. `offsets[i]` is where example i's entries start.
struct BatchLogProbs {
  Tensor log_probs;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;
};

BatchLogProbs batch_log_probs(const TransformerParams& params,
                              std::span<const Example* const> batch,
                              const ForwardOptions& options = {});

/// Rejects examples that violate the config's vocabulary or length caps.
void validate_example(const ModelConfig& config, const Example& example);

}  // namespace moesumm
