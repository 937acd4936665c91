#include "moesumm/transformer.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace moesumm {

namespace {

using Visitor = std::function<void(const std::string&, Tensor&)>;

void visit_norm(LayerNormParams& n, const std::string& prefix, const Visitor& f) {
  f(prefix + "gain", n.gain);
  f(prefix + "offset", n.offset);
}

void visit_attention(AttentionParams& a, const std::string& prefix, const Visitor& f) {
  f(prefix + "wq", a.wq);
  f(prefix + "wk", a.wk);
  f(prefix + "wv", a.wv);
  f(prefix + "wo", a.wo);
}

void visit_moe(MoeFfnParams& m, const std::string& prefix, const Visitor& f) {
  f(prefix + "main.w1", m.w1_main);
  f(prefix + "main.b1", m.b1_main);
  f(prefix + "main.w2", m.w2_main);
  f(prefix + "main.b2", m.b2_main);
  for (std::size_t k = 0; k < m.deputies.size(); ++k) {
    const auto base = prefix + "deputy." + std::to_string(k) + ".";
    f(base + "w1", m.deputies[k].w1);
    f(base + "b1", m.deputies[k].b1);
    f(base + "w2", m.deputies[k].w2);
  }
  for (std::size_t t = 0; t < m.selectors.size(); ++t) {
    f(prefix + "selector." + std::to_string(t), m.selectors[t]);
  }
  if (m.classic_gate.defined()) f(prefix + "classic_gate", m.classic_gate);
}

// Visits tensors in the canonical order used for names and checkpoints.
void visit_all(TransformerParams& p, const Visitor& f) {
  f("embed.tokens", p.token_embedding);
  if (p.config.positional == PositionalKind::learned) f("embed.positions", p.positions);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const auto base = "encoder." + std::to_string(i) + ".";
    auto& l = p.encoder[i];
    visit_norm(l.attn_norm, base + "attn_norm.", f);
    visit_attention(l.self_attn, base + "self_attn.", f);
    visit_norm(l.ffn_norm, base + "ffn_norm.", f);
    visit_moe(l.ffn, base + "ffn.", f);
  }
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const auto base = "decoder." + std::to_string(i) + ".";
    auto& l = p.decoder[i];
    visit_norm(l.self_norm, base + "self_norm.", f);
    visit_attention(l.self_attn, base + "self_attn.", f);
    visit_norm(l.cross_norm, base + "cross_norm.", f);
    visit_attention(l.cross_attn, base + "cross_attn.", f);
    visit_norm(l.ffn_norm, base + "ffn_norm.", f);
    visit_moe(l.ffn, base + "ffn.", f);
  }
  visit_norm(p.encoder_norm, "encoder_norm.", f);
  visit_norm(p.decoder_norm, "decoder_norm.", f);
}

LayerNormParams init_norm(std::size_t d) {
  return {constant_parameter({d}, 1.0), constant_parameter({d}, 0.0)};
}

AttentionParams init_attention(std::size_t d, Rng& rng) {
  AttentionParams a;
  a.wq = normal_parameter({d, d}, rng);
  a.wk = normal_parameter({d, d}, rng);
  a.wv = normal_parameter({d, d}, rng);
  a.wo = normal_parameter({d, d}, rng);
  return a;
}

Tensor sinusoidal_table(std::size_t n, std::size_t d) {
  std::vector<double> v(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      v[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({n, d}, std::move(v));
}

void check_tokens(const ModelConfig& c, std::span<const TokenId> ids, const char* what) {
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw std::out_of_range(std::string(what) + ": token id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(c.vocab_size));
    }
  }
}

void check_dataset(const TransformerParams& p, std::size_t dataset_id, ExpertMode mode) {
  if (mode != ExpertMode::full) return;
  if (dataset_id >= p.config.n_datasets) {
    throw std::out_of_range("dataset_id " + std::to_string(dataset_id) + " >= n_datasets " +
                            std::to_string(p.config.n_datasets));
  }
}

Tensor attention_block(const AttentionParams& p, const Tensor& queries, const Tensor& keys,
                       std::size_t heads, std::span<const AttentionSegment> segs, bool causal) {
  const Tensor q = matmul(queries, p.wq);
  const Tensor k = matmul(keys, p.wk);
  const Tensor v = matmul(keys, p.wv);
  return matmul(attention(q, k, v, heads, segs, causal), p.wo);
}

// Token plus positional embeddings for row-stacked sequences.
Tensor embed_rows(const TransformerParams& p, std::span<const std::span<const TokenId>> seqs,
                  std::vector<std::size_t>& positions) {
  std::vector<TokenId> ids;
  std::vector<TokenId> pos_ids;
  positions.clear();
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      ids.push_back(s[i]);
      pos_ids.push_back(static_cast<TokenId>(i));
      positions.push_back(i);
    }
  }
  return add(embedding(p.token_embedding, ids), embedding(p.positions, pos_ids));
}

MoeCall make_call(const TransformerParams& p, std::size_t dataset_id, const ForwardOptions& o,
                  RoutingTrace* trace, std::size_t layer, std::span<const std::size_t> positions) {
  MoeCall call;
  call.dataset_id = dataset_id;
  call.mode = o.mode;
  call.gate_site = p.config.gate_site;
  call.activation = p.config.activation;
  call.override = o.override;
  call.trace = trace;
  call.layer = layer;
  call.positions = positions;
  return call;
}

}  // namespace

TransformerParams init_params(const ModelConfig& config) { return init_params(config, config.seed); }

TransformerParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, 0));
  TransformerParams p;
  p.config = config;
  p.config.seed = seed;
  const auto d = config.d_model;
  // Tied embeddings start at 1/sqrt(d); at 0.02 the copy-style synthetic tasks
  // sit on a long loss plateau before attention locks onto positions.
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
  p.token_embedding = normal_parameter({config.vocab_size, d}, rng, embed_std);
  p.positions = config.positional == PositionalKind::learned
                    ? normal_parameter({config.max_positions(), d}, rng, embed_std)
                    : sinusoidal_table(config.max_positions(), d);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    EncoderLayer l;
    l.attn_norm = init_norm(d);
    l.self_attn = init_attention(d, rng);
    l.ffn_norm = init_norm(d);
    l.ffn = init_moe_params(config, rng);
    p.encoder.push_back(std::move(l));
  }
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    DecoderLayer l;
    l.self_norm = init_norm(d);
    l.self_attn = init_attention(d, rng);
    l.cross_norm = init_norm(d);
    l.cross_attn = init_attention(d, rng);
    l.ffn_norm = init_norm(d);
    l.ffn = init_moe_params(config, rng);
    p.decoder.push_back(std::move(l));
  }
  p.encoder_norm = init_norm(d);
  p.decoder_norm = init_norm(d);
  return p;
}

std::vector<NamedTensor> named_parameters(const TransformerParams& params) {
  std::vector<NamedTensor> out;
  // visit_all needs mutable access to hand out tensor handles; the handles share storage.
  visit_all(const_cast<TransformerParams&>(params),
            [&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
  return out;
}

TransformerParams clone_params(const TransformerParams& params) {
  TransformerParams copy = params;
  visit_all(copy, [](const std::string&, Tensor& t) { t = t.clone(); });
  copy.positions = params.positions.clone();
  return copy;
}

void validate_example(const ModelConfig& config, const Example& example) {
  if (example.source_ids.empty()) throw std::invalid_argument("example: empty source");
  if (example.source_ids.size() > config.max_src_len) {
    throw std::invalid_argument("example: source length " + std::to_string(example.source_ids.size()) +
                                " exceeds max_src_len " + std::to_string(config.max_src_len));
  }
  if (example.target_ids.size() < 2) throw std::invalid_argument("example: empty target");
  if (example.n_target() > config.max_tgt_len) {
    throw std::invalid_argument("example: target length " + std::to_string(example.n_target()) +
                                " exceeds max_tgt_len " + std::to_string(config.max_tgt_len));
  }
  check_tokens(config, example.source_ids, "example source");
  check_tokens(config, example.target_ids, "example target");
}

EncodedBatch encode_batch(const TransformerParams& params,
                          std::span<const std::span<const TokenId>> sources,
                          std::size_t dataset_id, const ForwardOptions& options) {
  const auto& c = params.config;
  if (sources.empty()) throw std::invalid_argument("encode: empty batch");
  check_dataset(params, dataset_id, options.mode);
  EncodedBatch enc;
  std::vector<AttentionSegment> segs;
  std::size_t off = 0;
  for (const auto& s : sources) {
    if (s.empty()) throw std::invalid_argument("encode: empty source sequence");
    if (s.size() > c.max_src_len) {
      throw std::invalid_argument("encode: source length " + std::to_string(s.size()) +
                                  " exceeds max_src_len " + std::to_string(c.max_src_len));
    }
    check_tokens(c, s, "encode");
    enc.offsets.push_back(off);
    enc.lengths.push_back(s.size());
    segs.push_back({off, s.size(), off, s.size()});
    off += s.size();
  }
  std::vector<std::size_t> positions;
  Tensor x = embed_rows(params, sources, positions);
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    const auto& l = params.encoder[i];
    const Tensor h = layer_norm(x, l.attn_norm.gain, l.attn_norm.offset);
    x = add(x, attention_block(l.self_attn, h, h, c.n_heads, segs, false));
    const Tensor a = layer_norm(x, l.ffn_norm.gain, l.ffn_norm.offset);
    x = add(x, moe_forward(a, l.ffn,
                           make_call(params, dataset_id, options, options.encoder_trace, i, positions)));
  }
  enc.states = layer_norm(x, params.encoder_norm.gain, params.encoder_norm.offset);
  return enc;
}

Tensor decode_hidden(const TransformerParams& params, const EncodedBatch& encoded,
                     std::span<const std::span<const TokenId>> inputs, std::size_t dataset_id,
                     const ForwardOptions& options) {
  const auto& c = params.config;
  if (inputs.size() != encoded.offsets.size()) {
    throw std::invalid_argument("decode: " + std::to_string(inputs.size()) + " target sequences for " +
                                std::to_string(encoded.offsets.size()) + " encoded sources");
  }
  check_dataset(params, dataset_id, options.mode);
  std::vector<AttentionSegment> self_segs, cross_segs;
  std::size_t off = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& s = inputs[i];
    if (s.empty()) throw std::invalid_argument("decode: empty prefix");
    if (s.size() > c.max_tgt_len) {
      throw std::invalid_argument("decode: prefix length " + std::to_string(s.size()) +
                                  " exceeds max_tgt_len " + std::to_string(c.max_tgt_len));
    }
    check_tokens(c, s, "decode");
    self_segs.push_back({off, s.size(), off, s.size()});
    cross_segs.push_back({off, s.size(), encoded.offsets[i], encoded.lengths[i]});
    off += s.size();
  }
  std::vector<std::size_t> positions;
  Tensor x = embed_rows(params, inputs, positions);
  for (std::size_t i = 0; i < params.decoder.size(); ++i) {
    const auto& l = params.decoder[i];
    const Tensor h = layer_norm(x, l.self_norm.gain, l.self_norm.offset);
    x = add(x, attention_block(l.self_attn, h, h, c.n_heads, self_segs, true));
    const Tensor hc = layer_norm(x, l.cross_norm.gain, l.cross_norm.offset);
    x = add(x, attention_block(l.cross_attn, hc, encoded.states, c.n_heads, cross_segs, false));
    const Tensor a = layer_norm(x, l.ffn_norm.gain, l.ffn_norm.offset);
    x = add(x, moe_forward(a, l.ffn,
                           make_call(params, dataset_id, options, options.decoder_trace, i, positions)));
  }
  return layer_norm(x, params.decoder_norm.gain, params.decoder_norm.offset);
}

Tensor output_logits(const TransformerParams& params, const Tensor& hidden) {
  return matmul(hidden, transpose(params.token_embedding));
}

Tensor encode(const TransformerParams& params, std::span<const TokenId> src, std::size_t dataset_id,
              const ForwardOptions& options) {
  const std::span<const TokenId> one[] = {src};
  return encode_batch(params, one, dataset_id, options).states;
}

Tensor decode_step(const TransformerParams& params, std::span<const TokenId> prefix,
                   const Tensor& enc_out, std::size_t dataset_id, const ForwardOptions& options) {
  if (prefix.empty()) throw std::invalid_argument("decode_step: empty prefix");
  if (enc_out.rank() != 2 || enc_out.cols() != params.config.d_model) {
    throw ShapeError("decode_step: encoder output " + shape_to_string(enc_out.shape()) +
                     " does not match d_model");
  }
  EncodedBatch enc;
  enc.states = enc_out;
  enc.offsets = {0};
  enc.lengths = {enc_out.rows()};
  const std::span<const TokenId> one[] = {prefix};
  const Tensor hidden = decode_hidden(params, enc, one, dataset_id, options);
  const std::size_t last[] = {prefix.size() - 1};
  const Tensor logits = output_logits(params, gather_rows(hidden, last));
  return reshape(logits, {params.config.vocab_size});
}

Tensor teacher_forced_logits(const TransformerParams& params, const Example& example,
                             const ForwardOptions& options) {
  validate_example(params.config, example);
  const std::span<const TokenId> src[] = {example.source_ids};
  const auto enc = encode_batch(params, src, example.dataset_id, options);
  const std::span<const TokenId> in[] = {
      std::span<const TokenId>(example.target_ids).first(example.target_ids.size() - 1)};
  return output_logits(params, decode_hidden(params, enc, in, example.dataset_id, options));
}

Tensor forward_log_probs(const TransformerParams& params, const Example& example,
                         const ForwardOptions& options) {
  const Example* one[] = {&example};
  return batch_log_probs(params, one, options).log_probs;
}

BatchLogProbs batch_log_probs(const TransformerParams& params,
                              std::span<const Example* const> batch,
                              const ForwardOptions& options) {
  if (batch.empty()) throw std::invalid_argument("batch_log_probs: empty batch");
  const std::size_t dataset_id = batch.front()->dataset_id;
  std::vector<std::span<const TokenId>> sources, inputs;
  std::vector<std::size_t> labels;
  BatchLogProbs out;
  for (const Example* ex : batch) {
    if (ex->dataset_id != dataset_id) {
      throw std::invalid_argument("batch_log_probs: batch mixes dataset ids " +
                                  std::to_string(dataset_id) + " and " +
                                  std::to_string(ex->dataset_id));
    }
    validate_example(params.config, *ex);
    sources.emplace_back(ex->source_ids);
    inputs.push_back(std::span<const TokenId>(ex->target_ids).first(ex->target_ids.size() - 1));
    out.offsets.push_back(labels.size());
    out.lengths.push_back(ex->n_target());
    for (std::size_t t = 1; t < ex->target_ids.size(); ++t) {
      labels.push_back(static_cast<std::size_t>(ex->target_ids[t]));
    }
  }
  const auto enc = encode_batch(params, sources, dataset_id, options);
  const Tensor hidden = decode_hidden(params, enc, inputs, dataset_id, options);
  out.log_probs = pick_cols(log_softmax_rows(output_logits(params, hidden)), labels);
  return out;
}

}  // namespace moesumm
