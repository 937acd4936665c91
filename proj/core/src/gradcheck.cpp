#include "moesumm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace moesumm {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                  std::vector<std::string> names, const GradCheckOptions& options) {
  if (options.step <= 0.0 || options.tolerance <= 0.0) {
    throw std::invalid_argument("finite_diff_check: step and tolerance must be positive");
  }
  names.resize(params.size());
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor root = loss();
    tape.backward(root);
  }

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    TensorGradReport tr;
    tr.name = names[t].empty() ? "param" + std::to_string(t) : names[t];
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor != 0 && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }

    auto values = p.mutable_values();
    for (auto i : coords) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = loss().item();
      values[i] = saved - options.step;
      const double down = loss().item();
      values[i] = saved;

      CoordinateError ce;
      ce.index = i;
      ce.analytic = analytic[i];
      ce.finite = std::isfinite(up) && std::isfinite(down);
      ce.numeric = ce.finite ? (up - down) / (2.0 * options.step) : std::nan("");
      ce.rel_error = ce.finite ? relative_error(ce.analytic, ce.numeric)
                               : std::numeric_limits<double>::infinity();
      ++tr.probed;
      if (!ce.finite || ce.rel_error > options.tolerance) tr.passed = false;
      if (tr.probed == 1 || ce.rel_error > tr.max_rel_error || !ce.finite) {
        tr.max_rel_error = ce.rel_error;
        tr.worst = ce;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, tr.max_rel_error);
    report.passed = report.passed && tr.passed;
    report.tensors.push_back(std::move(tr));
  }
  return report;
}

}  // namespace moesumm
