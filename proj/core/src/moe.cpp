#include "moesumm/moe.hpp"

#include <ostream>
#include <stdexcept>

namespace moesumm {

MoeFfnParams init_moe_params(const ModelConfig& config, Rng& rng) {
  const auto d = config.d_model;
  MoeFfnParams p;
  p.w1_main = normal_parameter({d, config.d_hidden_main}, rng);
  p.b1_main = constant_parameter({config.d_hidden_main}, 0.0);
  p.w2_main = normal_parameter({config.d_hidden_main, d}, rng);
  p.b2_main = constant_parameter({d}, 0.0);
  if (config.gating_mode == GatingMode::main_only || config.n_deputies == 0) return p;
  for (std::size_t k = 0; k < config.n_deputies; ++k) {
    DeputyExpert e;
    e.w1 = normal_parameter({d, config.d_hidden_deputy}, rng);
    e.b1 = constant_parameter({config.d_hidden_deputy}, 0.0);
    e.w2 = normal_parameter({config.d_hidden_deputy, d}, rng);
    p.deputies.push_back(std::move(e));
  }
  for (std::size_t t = 0; t < config.n_datasets; ++t) {
    p.selectors.push_back(normal_parameter({d, config.n_deputies}, rng));
  }
  p.classic_gate = normal_parameter({d, config.n_deputies}, rng);
  return p;
}

void append_named(const MoeFfnParams& params, const std::string& prefix,
                  std::vector<NamedTensor>& out) {
  out.push_back({prefix + "main.w1", params.w1_main});
  out.push_back({prefix + "main.b1", params.b1_main});
  out.push_back({prefix + "main.w2", params.w2_main});
  out.push_back({prefix + "main.b2", params.b2_main});
  for (std::size_t k = 0; k < params.deputies.size(); ++k) {
    const auto base = prefix + "deputy." + std::to_string(k) + ".";
    out.push_back({base + "w1", params.deputies[k].w1});
    out.push_back({base + "b1", params.deputies[k].b1});
    out.push_back({base + "w2", params.deputies[k].w2});
  }
  for (std::size_t t = 0; t < params.selectors.size(); ++t) {
    out.push_back({prefix + "selector." + std::to_string(t), params.selectors[t]});
  }
  if (params.classic_gate.defined()) out.push_back({prefix + "classic_gate", params.classic_gate});
}

std::string_view to_string(ExpertMode mode) {
  switch (mode) {
    case ExpertMode::full: return "full";
    case ExpertMode::main_only: return "main_only";
    case ExpertMode::classic: return "classic";
  }
  return "?";
}

ExpertMode parse_expert_mode(std::string_view text) {
  if (text == "full") return ExpertMode::full;
  if (text == "main_only") return ExpertMode::main_only;
  if (text == "classic") return ExpertMode::classic;
  throw std::invalid_argument("unknown expert mode '" + std::string(text) + "'");
}

ExpertMode full_mode_for(GatingMode gating) {
  switch (gating) {
    case GatingMode::dataset_aware: return ExpertMode::full;
    case GatingMode::classic: return ExpertMode::classic;
    case GatingMode::main_only: return ExpertMode::main_only;
  }
  return ExpertMode::full;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j) {
    if (values[j] > values[best]) best = j;
  }
  return best;
}

namespace {

RouteDecision route_with(std::span<const double> token, const Tensor& gate_matrix) {
  if (!gate_matrix.defined()) throw std::invalid_argument("route: layer has no deputies");
  if (token.size() != gate_matrix.shape()[0]) {
    throw ShapeError("route: token width " + std::to_string(token.size()) +
                     " does not match gate " + shape_to_string(gate_matrix.shape()));
  }
  const Tensor row = Tensor::from({1, token.size()}, {token.begin(), token.end()});
  const Tensor dist = softmax_rows(matmul(row, gate_matrix));
  RouteDecision r;
  r.distribution.assign(dist.values().begin(), dist.values().end());
  r.deputy = argmax_lowest(r.distribution);
  r.gate = r.distribution[r.deputy];
  return r;
}

const Tensor& gate_matrix_for(const MoeFfnParams& params, ExpertMode mode, std::size_t dataset_id) {
  if (mode == ExpertMode::classic) return params.classic_gate;
  if (dataset_id >= params.selectors.size()) {
    throw std::out_of_range("moe: dataset_id " + std::to_string(dataset_id) + " has no selector (" +
                            std::to_string(params.selectors.size()) + " datasets)");
  }
  return params.selectors[dataset_id];
}

}  // namespace

RouteDecision route_dataset_aware(std::span<const double> token, std::size_t dataset_id,
                                  const MoeFfnParams& params) {
  return route_with(token, gate_matrix_for(params, ExpertMode::full, dataset_id));
}

RouteDecision route_classic(std::span<const double> token, const MoeFfnParams& params) {
  return route_with(token, params.classic_gate);
}

void RoutingTrace::write_csv(std::ostream& os, bool header) const {
  if (header) os << "layer,position,dataset_id,deputy_index,gate_value\n";
  for (const auto& r : records) {
    os << r.layer << ',' << r.position << ',' << r.dataset_id << ',' << r.deputy << ','
       << r.gate << '\n';
  }
}

Tensor moe_forward(const Tensor& a, const MoeFfnParams& params, const MoeCall& call) {
  if (a.rank() != 2 || a.cols() != params.w1_main.shape()[0]) {
    throw ShapeError("moe_forward: input " + shape_to_string(a.shape()) +
                     " does not match main expert " + shape_to_string(params.w1_main.shape()));
  }
  Tensor hidden = activate(add_row(matmul(a, params.w1_main), params.b1_main), call.activation);
  Tensor out = add_row(matmul(hidden, params.w2_main), params.b2_main);
  if (call.mode == ExpertMode::main_only) return out;
  if (params.deputies.empty()) {
    throw std::invalid_argument("moe_forward: mode " + std::string(to_string(call.mode)) +
                                " needs at least one deputy expert");
  }

  const std::size_t n = a.rows();
  const std::size_t n_dep = params.deputies.size();
  const Tensor& gate_w = gate_matrix_for(params, call.mode, call.dataset_id);
  const Tensor dist = softmax_rows(matmul(a, gate_w));
  const auto dv = dist.values();

  std::vector<std::size_t> chosen(n);
  for (std::size_t i = 0; i < n; ++i) {
    chosen[i] = argmax_lowest(dv.subspan(i * n_dep, n_dep));
  }
  if (call.override && call.override->pinned_deputy) {
    const auto k = *call.override->pinned_deputy;
    if (k >= n_dep) throw std::out_of_range("moe_forward: pinned deputy out of range");
    std::fill(chosen.begin(), chosen.end(), k);
  }

  Tensor gates;
  if (call.override && call.override->forced_gate) {
    gates = Tensor::full({n}, *call.override->forced_gate);
  } else {
    gates = pick_cols(dist, chosen);
  }

  if (call.trace) {
    const auto gv = gates.values();
    for (std::size_t i = 0; i < n; ++i) {
      RoutingRecord r;
      r.layer = call.layer;
      r.position = i < call.positions.size() ? call.positions[i] : i;
      r.dataset_id = call.dataset_id;
      r.deputy = chosen[i];
      r.gate = gv[i];
      r.distribution.assign(dv.begin() + i * n_dep, dv.begin() + (i + 1) * n_dep);
      call.trace->records.push_back(std::move(r));
    }
  }

  std::vector<std::vector<std::size_t>> groups(n_dep);
  for (std::size_t i = 0; i < n; ++i) groups[chosen[i]].push_back(i);
  for (std::size_t k = 0; k < n_dep; ++k) {
    if (groups[k].empty()) continue;
    const auto& e = params.deputies[k];
    const Tensor rows = gather_rows(a, groups[k]);
    const Tensor g = gather_rows(gates, groups[k]);
    const Tensor pre = add_row(matmul(rows, e.w1), e.b1);
    const Tensor h = call.gate_site == GateSite::pre_activation
                         ? activate(scale_rows(pre, g), call.activation)
                         : scale_rows(activate(pre, call.activation), g);
    out = add(out, scatter_rows(matmul(h, e.w2), groups[k], n));
  }
  return out;
}

}  // namespace moesumm
