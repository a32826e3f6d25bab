#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "graphvalue/errors.hpp"
#include "graphvalue/rng.hpp"
#include "graphvalue/tensor.hpp"

namespace graphvalue {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int coords_checked = 0;
  std::string worst_param;
  int worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Coordinates to probe: (slot, flat index) pairs. Deterministic for a given
// seed; samples `per_param` coordinates from each tensor (all of them when
// the tensor is smaller than that).
inline std::vector<std::pair<int, int>> grad_check_coords(const ParamStore& params, int per_param, Rng& rng) {
  std::vector<std::pair<int, int>> coords;
  for (int slot = 0; slot < params.size(); ++slot) {
    int n = params[slot].numel();
    if (n <= per_param) {
      for (int k = 0; k < n; ++k) coords.emplace_back(slot, k);
    } else {
      std::vector<int> idx(static_cast<std::size_t>(n));
      for (int k = 0; k < n; ++k) idx[static_cast<std::size_t>(k)] = k;
      rng.shuffle(idx);
      for (int k = 0; k < per_param; ++k) coords.emplace_back(slot, idx[static_cast<std::size_t>(k)]);
    }
  }
  return coords;
}

// Central-difference check of analytic gradients. `loss_fn` must be a pure
// function of the parameters. Relative error per coordinate:
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline GradCheckReport grad_check(const std::function<double(const ParamStore&)>& loss_fn, ParamStore params,
                                  const std::vector<Tensor>& analytic,
                                  const std::vector<std::pair<int, int>>& coords, double eps = 1e-5) {
  if (static_cast<int>(analytic.size()) != params.size())
    throw ContractError("grad_check: " + std::to_string(analytic.size()) + " gradient tensors for " +
                        std::to_string(params.size()) + " parameters");
  GradCheckReport report;
  for (auto [slot, k] : coords) {
    if (slot < 0 || slot >= params.size() || k < 0 || k >= params[slot].numel())
      throw ContractError("grad_check: coordinate (" + std::to_string(slot) + ", " + std::to_string(k) +
                          ") out of range");
    double saved = params[slot].at(k);
    params[slot].at(k) = saved + eps;
    double up = loss_fn(params);
    params[slot].at(k) = saved - eps;
    double down = loss_fn(params);
    params[slot].at(k) = saved;
    double numeric = (up - down) / (2.0 * eps);
    double a = analytic[static_cast<std::size_t>(slot)].at(k);
    double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    ++report.coords_checked;
    if (rel >= report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = params.names[static_cast<std::size_t>(slot)];
      report.worst_coord = k;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace graphvalue
