#pragma once

#include <cstddef>
#include <vector>

#include "moesumm/tensor.hpp"

namespace moesumm {

struct AdamOptions {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Throws std::invalid_argument on lr <= 0, eps <= 0 or betas outside [0, 1).
  void validate() const;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

/// One bias-corrected Adam update at step `t` (1-based) with learning rate `lr`.
/// Tensors without a gradient buffer are left untouched.
void adam_step(std::span<Tensor> params, std::vector<AdamMoments>& state, double lr,
               const AdamOptions& options, std::size_t t);

/// Owns moments and the step counter for a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void step() { step_with_lr(options_.lr); }
  void step_with_lr(double lr);
  void zero_grad();

  std::size_t steps() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamMoments> state_;
  AdamOptions options_;
  std::size_t t_ = 0;
};

}  // namespace moesumm
