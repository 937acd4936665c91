#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "moesumm/tensor.hpp"

namespace moesumm {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// 0 probes every coordinate; otherwise at most this many per tensor,
  /// drawn with `seed`.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct CoordinateError {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool finite = true;
};

struct TensorGradReport {
  std::string name;
  std::size_t probed = 0;
  double max_rel_error = 0.0;
  CoordinateError worst;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<TensorGradReport> tensors;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Relative error with denominator max(|analytic|, |numeric|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `loss` against central differences.
/// `loss` must build its graph from `params`; it is called once under a tape
/// for the analytic gradient and twice per probed coordinate without one.
/// Parameter gradients are zeroed first and left holding the analytic result.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                  std::vector<std::string> names = {},
                                  const GradCheckOptions& options = {});

}  // namespace moesumm
