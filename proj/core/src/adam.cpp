#include "moesumm/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace moesumm {

void AdamOptions::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (!(eps > 0.0)) throw std::invalid_argument("adam: epsilon must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
}

void adam_step(std::span<Tensor> params, std::vector<AdamMoments>& state, double lr,
               const AdamOptions& options, std::size_t t) {
  if (t == 0) throw std::invalid_argument("adam_step: step index is 1-based");
  if (state.size() != params.size()) state.resize(params.size());
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    if (!p.has_grad()) continue;
    auto& m = state[k];
    if (m.first.empty()) {
      m.first.assign(p.size(), 0.0);
      m.second.assign(p.size(), 0.0);
    }
    const auto g = p.grad();
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m.first[i] = options.beta1 * m.first[i] + (1.0 - options.beta1) * g[i];
      m.second[i] = options.beta2 * m.second[i] + (1.0 - options.beta2) * g[i] * g[i];
      const double mhat = m.first[i] / c1;
      const double vhat = m.second[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + options.eps);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), state_(params_.size()), options_(options) {
  options_.validate();
}

void Adam::step_with_lr(double lr) {
  ++t_;
  adam_step(params_, state_, lr, options_, t_);
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace moesumm
