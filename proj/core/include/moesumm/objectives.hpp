#pragma once

// Generation loss, per-token margins and the quintic max-margin loss.
//
// For gold token y_t the margin is m_t = P_full(y_t) - P_main(y_t), the
// probability gain the deputies add over the main expert alone, and
//
//   L_m = sum_t (1 - P_full_t) (1 - m_t^5) / 2.
//
// Scalar overloads are plain arithmetic; the Tensor overloads build the same
// expressions on the tape so both forward passes receive gradients.

#include <span>
#include <vector>

#include "moesumm/tensor.hpp"
#include "moesumm/transformer.hpp"

namespace moesumm {

double generation_loss(std::span<const double> log_probs_full);
double margin(double p_full, double p_main);
double max_margin_term(double p_full, double p_main);
double max_margin_loss(std::span<const double> p_full, std::span<const double> p_main);

/// Mean of -log_probs.
Tensor generation_loss(const Tensor& log_probs_full);
/// Sum over tokens of the max-margin terms, from gold-token log-probabilities.
Tensor max_margin_loss(const Tensor& log_probs_full, const Tensor& log_probs_main);

struct LossBreakdown {
  double gen_loss = 0.0;
  double margin_loss = 0.0;
  double total = 0.0;
  std::vector<double> per_token_margins;

  double mean_margin() const;
};

struct LossOptions {
  double margin_weight = 1.0;
  /// Stop gradients through the main-only pass.
  bool detach_main = false;
  /// false drops the margin term and the main-only pass entirely.
  bool use_margin = true;
};

/// Differentiable batch objective plus per-example breakdowns.
struct BatchLoss {
  Tensor total;  // scalar: mean over examples of gen + lambda * L_m
  std::vector<LossBreakdown> examples;
};

/// Runs the full-model pass and (when the margin is used) the main-only pass
/// on a homogeneous-dataset batch.
BatchLoss batch_loss(const TransformerParams& params, std::span<const Example* const> batch,
                     const LossOptions& options, RoutingTrace* decoder_trace = nullptr);

/// Single-example objective.
LossBreakdown total_loss(const TransformerParams& params, const Example& example,
                         const LossOptions& options);

}  // namespace moesumm
