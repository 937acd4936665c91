#include "moesumm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>

#include "moesumm/log.hpp"
#include "moesumm/random.hpp"

namespace moesumm {

bool FreezeMask::is_trainable(const std::string& name) const {
  const auto it = trainable.find(name);
  return it != trainable.end() && it->second;
}

bool is_deputy_side(const std::string& name) {
  return name.find(".ffn.deputy.") != std::string::npos ||
         name.find(".ffn.selector.") != std::string::npos ||
         name.find(".ffn.classic_gate") != std::string::npos;
}

FreezeMask all_trainable(const TransformerParams& params) {
  FreezeMask m;
  for (const auto& nt : named_parameters(params)) m.trainable[nt.name] = true;
  return m;
}

FreezeMask deputy_finetune_mask(const TransformerParams& params) {
  FreezeMask m;
  for (const auto& nt : named_parameters(params)) m.trainable[nt.name] = is_deputy_side(nt.name);
  return m;
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& t : params) {
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& t : params) {
      for (auto& g : t.mutable_grad()) g *= k;
    }
  }
  return norm;
}

void TrainOptions::validate() const {
  adam.validate();
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (grad_accum_steps == 0) throw std::invalid_argument("train: grad_accum_steps must be positive");
  if (loss.margin_weight < 0.0) throw std::invalid_argument("train: margin weight must be >= 0");
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("train: clip_norm must be >= 0");
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  j["regime"] = regime;
  j["wall_seconds"] = wall_seconds;
  j["checkpoint"] = checkpoint;
  auto& ep = j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch}, {"gen_loss", e.gen_loss}, {"margin_loss", e.margin_loss},
                  {"total", e.total}});
  }
  auto& util = j["utilization"] = nlohmann::json::object();
  for (const auto& [id, row] : utilization) util[std::to_string(id)] = row;
  j["optimizer_steps"] = steps.size();
  j["trainable_tensors"] = trainable_tensors;
  j["frozen_tensors"] = frozen_tensors;
  if (frozen_params_unchanged) j["frozen_params_unchanged"] = *frozen_params_unchanged;
  return j;
}

void TrainReport::write_loss_csv(std::ostream& os) const {
  os << "step,gen_loss,margin_loss,total,mean_margin\n";
  for (const auto& s : steps) {
    os << s.step << ',' << s.gen_loss << ',' << s.margin_loss << ',' << s.total << ','
       << s.mean_margin << '\n';
  }
}

void TrainReport::write_utilization_csv(std::ostream& os) const {
  os << "dataset_id,deputy_index,fraction\n";
  for (const auto& [id, row] : utilization) {
    for (std::size_t k = 0; k < row.size(); ++k) os << id << ',' << k << ',' << row[k] << '\n';
  }
}

void validate_corpora(const ModelConfig& config, const std::vector<Corpus>& corpora) {
  if (corpora.empty()) throw std::invalid_argument("train: no corpora given");
  std::set<std::size_t> seen;
  for (const auto& c : corpora) {
    if (c.examples.empty()) {
      throw std::invalid_argument("train: corpus for dataset " + std::to_string(c.dataset_id) +
                                  " is empty");
    }
    if (c.dataset_id >= config.n_datasets) {
      throw std::invalid_argument("train: dataset_id " + std::to_string(c.dataset_id) +
                                  " >= n_datasets " + std::to_string(config.n_datasets));
    }
    if (!seen.insert(c.dataset_id).second) {
      throw std::invalid_argument("train: dataset_id " + std::to_string(c.dataset_id) +
                                  " listed twice");
    }
    for (const auto& ex : c.examples) {
      if (ex.dataset_id != c.dataset_id) {
        throw std::invalid_argument("train: example tagged with dataset " +
                                    std::to_string(ex.dataset_id) + " inside corpus " +
                                    std::to_string(c.dataset_id));
      }
      validate_example(config, ex);
    }
  }
}

TrainReport train_loop(TransformerParams& params, const std::vector<Corpus>& corpora,
                       const FreezeMask& mask, const TrainOptions& options) {
  options.validate();
  validate_corpora(params.config, corpora);
  const auto start = std::chrono::steady_clock::now();

  TrainReport report;
  std::vector<Tensor> trainable;
  std::vector<Tensor> frozen;
  for (auto& nt : named_parameters(params)) {
    if (mask.is_trainable(nt.name)) {
      nt.tensor.set_requires_grad(true);
      trainable.push_back(nt.tensor);
    } else {
      nt.tensor.set_requires_grad(false);
      frozen.push_back(nt.tensor);
    }
  }
  report.trainable_tensors = trainable.size();
  report.frozen_tensors = frozen.size();
  if (trainable.empty()) throw std::invalid_argument("train: freeze mask leaves nothing trainable");

  Adam adam(trainable, options.adam);
  adam.zero_grad();
  Rng rng(derive_seed(options.seed, 1));
  const std::size_t n_dep = params.config.n_deputies;
  std::size_t batches_per_epoch = 0;
  for (const auto& corpus : corpora) {
    batches_per_epoch += (corpus.examples.size() + options.batch_size - 1) / options.batch_size;
  }
  const std::size_t total_steps =
      options.epochs * ((batches_per_epoch + options.grad_accum_steps - 1) / options.grad_accum_steps);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    // Homogeneous batches from every corpus, then a shuffled batch order.
    std::vector<std::vector<const Example*>> batches;
    for (const auto& corpus : corpora) {
      std::vector<std::size_t> order(corpus.examples.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < order.size(); i += options.batch_size) {
        std::vector<const Example*> b;
        for (std::size_t j = i; j < std::min(order.size(), i + options.batch_size); ++j) {
          b.push_back(&corpus.examples[order[j]]);
        }
        batches.push_back(std::move(b));
      }
    }
    std::shuffle(batches.begin(), batches.end(), rng);

    const bool last_epoch = epoch + 1 == options.epochs;
    std::map<std::size_t, std::vector<double>> counts;
    EpochLog elog;
    elog.epoch = epoch + 1;
    std::size_t n_examples = 0;
    StepLog pending;
    std::size_t pending_examples = 0, pending_tokens = 0, accumulated = 0;

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      RoutingTrace trace;
      Tape tape;
      {
        TapeScope scope(tape);
        const BatchLoss loss = batch_loss(params, batch, options.loss, last_epoch ? &trace : nullptr);
        const Tensor root = scale(loss.total, 1.0 / static_cast<double>(options.grad_accum_steps));
        tape.backward(root);
        for (const auto& e : loss.examples) {
          elog.gen_loss += e.gen_loss;
          elog.margin_loss += e.margin_loss;
          elog.total += e.total;
          pending.gen_loss += e.gen_loss;
          pending.margin_loss += e.margin_loss;
          pending.total += e.total;
          for (double m : e.per_token_margins) pending.mean_margin += m;
          pending_tokens += e.per_token_margins.size();
        }
        n_examples += loss.examples.size();
        pending_examples += loss.examples.size();
      }
      tape.clear();
      if (last_epoch && n_dep > 0) {
        auto& row = counts[batch.front()->dataset_id];
        row.resize(n_dep, 0.0);
        for (const auto& r : trace.records) row[r.deputy] += 1.0;
      }

      if (++accumulated == options.grad_accum_steps || bi + 1 == batches.size()) {
        const std::size_t step = adam.steps() + 1;
        double lr = options.adam.lr;
        if (options.warmup_steps > 0 && step < options.warmup_steps) {
          lr *= static_cast<double>(step) / static_cast<double>(options.warmup_steps);
        } else if (options.linear_decay && total_steps > options.warmup_steps) {
          const std::size_t start = std::max<std::size_t>(options.warmup_steps, 1);
          lr *= 1.0 - static_cast<double>(step - start) / static_cast<double>(total_steps - start + 1);
        }
        if (options.clip_norm > 0.0) clip_grad_norm(trainable, options.clip_norm);
        adam.step_with_lr(lr);
        adam.zero_grad();
        accumulated = 0;
        pending.step = step;
        const double inv = 1.0 / static_cast<double>(pending_examples);
        pending.gen_loss *= inv;
        pending.margin_loss *= inv;
        pending.total *= inv;
        pending.mean_margin = pending_tokens ? pending.mean_margin / static_cast<double>(pending_tokens) : 0.0;
        report.steps.push_back(pending);
        pending = StepLog{};
        pending_examples = 0;
        pending_tokens = 0;
      }
    }
    const double inv = 1.0 / static_cast<double>(n_examples);
    elog.gen_loss *= inv;
    elog.margin_loss *= inv;
    elog.total *= inv;
    report.epochs.push_back(elog);
    log_info("epoch {}/{}: gen {:.4f} margin {:.4f} total {:.4f}", elog.epoch, options.epochs,
             elog.gen_loss, elog.margin_loss, elog.total);

    if (last_epoch) {
      for (auto& [id, row] : counts) {
        const double total = std::accumulate(row.begin(), row.end(), 0.0);
        if (total > 0.0) {
          for (auto& x : row) x /= total;
        }
        report.utilization[id] = row;
      }
    }
  }
  for (auto& t : frozen) t.set_requires_grad(true);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TrainResult train_mixed(const ModelConfig& config, const std::vector<Corpus>& corpora,
                        const TrainOptions& options) {
  TrainResult result{init_params(config, options.seed), {}};
  result.report = train_loop(result.params, corpora, all_trainable(result.params), options);
  result.report.regime = "mixed";
  return result;
}

namespace {

void append_dataset_selector(TransformerParams& p, Rng& rng) {
  const auto d = p.config.d_model;
  const auto n_dep = p.config.n_deputies;
  for (auto& l : p.encoder) l.ffn.selectors.push_back(normal_parameter({d, n_dep}, rng));
  for (auto& l : p.decoder) l.ffn.selectors.push_back(normal_parameter({d, n_dep}, rng));
  ++p.config.n_datasets;
}

Tensor widen_columns(const Tensor& t, Rng& rng) {
  const auto rows = t.shape()[0], cols = t.shape()[1];
  std::normal_distribution<double> dist(0.0, kInitStddev);
  std::vector<double> v(rows * (cols + 1));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) v[i * (cols + 1) + j] = t.values()[i * cols + j];
    v[i * (cols + 1) + cols] = dist(rng);
  }
  return Tensor::parameter({rows, cols + 1}, std::move(v));
}

void append_fresh_deputy(TransformerParams& p, Rng& rng) {
  const auto& c = p.config;
  auto grow = [&](MoeFfnParams& m) {
    DeputyExpert e;
    e.w1 = normal_parameter({c.d_model, c.d_hidden_deputy}, rng);
    e.b1 = constant_parameter({c.d_hidden_deputy}, 0.0);
    e.w2 = normal_parameter({c.d_hidden_deputy, c.d_model}, rng);
    m.deputies.push_back(std::move(e));
    for (auto& s : m.selectors) s = widen_columns(s, rng);
    if (m.classic_gate.defined()) m.classic_gate = widen_columns(m.classic_gate, rng);
  };
  for (auto& l : p.encoder) grow(l.ffn);
  for (auto& l : p.decoder) grow(l.ffn);
  ++p.config.n_deputies;
}

}  // namespace

std::uint64_t tensor_hash(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (auto d : t.shape()) {
    const std::uint64_t v = d;
    mix(&v, sizeof v);
  }
  mix(t.values().data(), t.size() * sizeof(double));
  return h;
}

std::map<std::string, std::uint64_t> frozen_hashes(const TransformerParams& params,
                                                  const FreezeMask& mask) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& nt : named_parameters(params)) {
    if (!mask.is_trainable(nt.name)) out[nt.name] = tensor_hash(nt.tensor);
  }
  return out;
}

TrainResult finetune_deputy(const TransformerParams& checkpoint, const Corpus& corpus,
                            const FinetuneOptions& options) {
  if (corpus.examples.empty()) throw std::invalid_argument("finetune: corpus has no examples");
  if (checkpoint.config.gating_mode == GatingMode::main_only) {
    throw std::invalid_argument("finetune: a main_only model has no deputies to adapt");
  }
  const auto n_datasets = checkpoint.config.n_datasets;
  if (corpus.dataset_id > n_datasets) {
    throw std::invalid_argument("finetune: dataset_id " + std::to_string(corpus.dataset_id) +
                                " would leave a gap after " + std::to_string(n_datasets) +
                                " datasets");
  }
  TrainResult result{clone_params(checkpoint), {}};
  Rng rng(derive_seed(options.train.seed, 2));
  if (corpus.dataset_id == n_datasets) append_dataset_selector(result.params, rng);
  if (options.add_fresh_deputy) append_fresh_deputy(result.params, rng);

  const FreezeMask mask = deputy_finetune_mask(result.params);
  const auto before = frozen_hashes(checkpoint, mask);
  if (options.train.epochs > 0) {
    result.report = train_loop(result.params, {corpus}, mask, options.train);
  } else {
    validate_corpora(result.params.config, {corpus});
  }
  result.report.regime = "deputy_finetune";
  const auto after = frozen_hashes(result.params, mask);
  result.report.frozen_params_unchanged = before == after;
  result.report.frozen_tensors = after.size();
  return result;
}

namespace {

std::size_t ffn_main_count(const ModelConfig& c) {
  return c.d_model * c.d_hidden_main + c.d_hidden_main + c.d_hidden_main * c.d_model + c.d_model;
}

}  // namespace

nlohmann::json ParamReport::to_json() const {
  return {{"per_deputy", per_deputy},       {"deputy_total", deputy_total},
          {"selector_total", selector_total}, {"classic_gate_total", classic_gate_total},
          {"main_expert_total", main_expert_total}, {"backbone_total", backbone_total},
          {"total", total}};
}

ParamReport param_report(const ModelConfig& c) {
  c.validate();
  ParamReport r;
  const auto layers = c.moe_layers();
  const auto d = c.d_model;
  const bool has_deputies = c.gating_mode != GatingMode::main_only && c.n_deputies > 0;
  if (has_deputies) {
    r.per_deputy = d * c.d_hidden_deputy + c.d_hidden_deputy + c.d_hidden_deputy * d;
    r.deputy_total = layers * c.n_deputies * r.per_deputy;
    r.selector_total = layers * c.n_deputies * d * c.n_datasets;
    r.classic_gate_total = layers * d * c.n_deputies;
  }
  r.main_expert_total = layers * ffn_main_count(c);
  const std::size_t norm = 2 * d;
  const std::size_t attn = 4 * d * d;
  r.backbone_total = c.vocab_size * d +
                     (c.positional == PositionalKind::learned ? c.max_positions() * d : 0) +
                     c.n_layers * (2 * norm + attn) + c.n_layers * (3 * norm + 2 * attn) + 2 * norm;
  r.total = r.per_deputy * 0 + r.deputy_total + r.selector_total + r.classic_gate_total +
            r.main_expert_total + r.backbone_total;
  return r;
}

ParamReport param_walk(const TransformerParams& params) {
  ParamReport r;
  std::size_t first_deputy = 0;
  for (const auto& nt : named_parameters(params)) {
    const auto& n = nt.name;
    const auto size = nt.tensor.size();
    if (n.find(".ffn.deputy.") != std::string::npos) {
      r.deputy_total += size;
      if (n.rfind("encoder.0.ffn.deputy.0.", 0) == 0) first_deputy += size;
    } else if (n.find(".ffn.selector.") != std::string::npos) {
      r.selector_total += size;
    } else if (n.find(".ffn.classic_gate") != std::string::npos) {
      r.classic_gate_total += size;
    } else if (n.find(".ffn.main.") != std::string::npos) {
      r.main_expert_total += size;
    } else {
      r.backbone_total += size;
    }
    r.total += size;
  }
  r.per_deputy = first_deputy;
  return r;
}

}  // namespace moesumm
