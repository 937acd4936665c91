#include "moesumm/objectives.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace moesumm {

double generation_loss(std::span<const double> log_probs_full) {
  if (log_probs_full.empty()) throw std::invalid_argument("generation_loss: empty target");
  double total = 0.0;
  for (double lp : log_probs_full) {
    if (lp > 0.0) throw std::invalid_argument("generation_loss: log-probability above zero");
    total -= lp;
  }
  return total / static_cast<double>(log_probs_full.size());
}

double margin(double p_full, double p_main) {
  if (!(p_full >= 0.0 && p_full <= 1.0) || !(p_main >= 0.0 && p_main <= 1.0)) {
    throw std::invalid_argument("margin: probabilities must lie in [0, 1]");
  }
  return p_full - p_main;
}

double max_margin_term(double p_full, double p_main) {
  const double m = margin(p_full, p_main);
  const double m5 = m * m * m * m * m;
  return (1.0 - p_full) * (1.0 - m5) / 2.0;
}

double max_margin_loss(std::span<const double> p_full, std::span<const double> p_main) {
  if (p_full.size() != p_main.size()) {
    throw std::invalid_argument("max_margin_loss: " + std::to_string(p_full.size()) +
                                " full-model probabilities vs " + std::to_string(p_main.size()) +
                                " main-model probabilities");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < p_full.size(); ++t) total += max_margin_term(p_full[t], p_main[t]);
  return total;
}

Tensor generation_loss(const Tensor& log_probs_full) { return scale(mean(log_probs_full), -1.0); }

Tensor max_margin_loss(const Tensor& log_probs_full, const Tensor& log_probs_main) {
  if (log_probs_full.shape() != log_probs_main.shape()) {
    throw ShapeError("max_margin_loss: " + shape_to_string(log_probs_full.shape()) + " vs " +
                     shape_to_string(log_probs_main.shape()));
  }
  const Tensor p_full = exp(log_probs_full);
  const Tensor m = sub(p_full, exp(log_probs_main));
  const Tensor miss = add_scalar(scale(p_full, -1.0), 1.0);               // 1 - P_full
  const Tensor decay = add_scalar(scale(pow_int(m, 5), -1.0), 1.0);       // 1 - m^5
  return scale(sum(mul(miss, decay)), 0.5);
}

double LossBreakdown::mean_margin() const {
  if (per_token_margins.empty()) return 0.0;
  return std::accumulate(per_token_margins.begin(), per_token_margins.end(), 0.0) /
         static_cast<double>(per_token_margins.size());
}

BatchLoss batch_loss(const TransformerParams& params, std::span<const Example* const> batch,
                     const LossOptions& options, RoutingTrace* decoder_trace) {
  if (options.margin_weight < 0.0) throw std::invalid_argument("loss: margin weight must be >= 0");
  ForwardOptions full;
  full.mode = full_mode_for(params.config.gating_mode);
  full.decoder_trace = decoder_trace;
  const BatchLogProbs lp_full = batch_log_probs(params, batch, full);

  BatchLogProbs lp_main;
  if (options.use_margin) {
    ForwardOptions main_only;
    main_only.mode = ExpertMode::main_only;
    lp_main = batch_log_probs(params, batch, main_only);
    if (options.detach_main) lp_main.log_probs = detach(lp_main.log_probs);
  }

  // Per-token weights turn the batch objective into one weighted sum:
  // gen uses 1 / (B n_e) (token mean per example), the margin uses 1 / B.
  const std::size_t n_tokens = lp_full.log_probs.size();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  std::vector<double> gen_w(n_tokens);
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const double w = inv_batch / static_cast<double>(lp_full.lengths[e]);
    for (std::size_t t = 0; t < lp_full.lengths[e]; ++t) gen_w[lp_full.offsets[e] + t] = w;
  }
  const Tensor gen_weights = Tensor::from({n_tokens}, std::move(gen_w));

  BatchLoss out;
  Tensor total = scale(sum(mul(gen_weights, lp_full.log_probs)), -1.0);
  Tensor terms;
  if (options.use_margin) {
    const Tensor p_full = exp(lp_full.log_probs);
    const Tensor m = sub(p_full, exp(lp_main.log_probs));
    const Tensor miss = add_scalar(scale(p_full, -1.0), 1.0);
    const Tensor decay = add_scalar(scale(pow_int(m, 5), -1.0), 1.0);
    terms = scale(mul(miss, decay), 0.5);
    total = add(total, scale(sum(terms), options.margin_weight * inv_batch));
  }
  out.total = total;

  const auto full_v = lp_full.log_probs.values();
  for (std::size_t e = 0; e < batch.size(); ++e) {
    LossBreakdown b;
    const auto off = lp_full.offsets[e], len = lp_full.lengths[e];
    b.gen_loss = generation_loss(full_v.subspan(off, len));
    if (options.use_margin) {
      const auto main_v = lp_main.log_probs.values();
      const auto term_v = terms.values();
      for (std::size_t t = off; t < off + len; ++t) {
        b.per_token_margins.push_back(std::exp(full_v[t]) - std::exp(main_v[t]));
        b.margin_loss += term_v[t];
      }
    }
    b.total = b.gen_loss + options.margin_weight * b.margin_loss;
    out.examples.push_back(std::move(b));
  }
  return out;
}

LossBreakdown total_loss(const TransformerParams& params, const Example& example,
                         const LossOptions& options) {
  const Example* one[] = {&example};
  return batch_loss(params, one, options).examples.front();
}

}  // namespace moesumm
