#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "graphvalue/errors.hpp"
#include "graphvalue/tensor.hpp"

namespace graphvalue {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators, aligned with a ParamStore slot for slot.
struct OptimizerState {
  int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static OptimizerState init(const ParamStore& params) {
    OptimizerState s;
    s.m.reserve(static_cast<std::size_t>(params.size()));
    s.v.reserve(static_cast<std::size_t>(params.size()));
    for (int i = 0; i < params.size(); ++i) {
      s.m.push_back(Tensor::zeros(params[i].shape));
      s.v.push_back(Tensor::zeros(params[i].shape));
    }
    return s;
  }
};

// One Adam update with bias correction. Rejects non-finite gradients up
// front, naming the offending parameter, so a numeric fault cannot corrupt
// the moment buffers.
inline void adam_step(ParamStore& params, const std::vector<Tensor>& grads, OptimizerState& state,
                      const AdamConfig& cfg = {}) {
  if (static_cast<int>(grads.size()) != params.size())
    throw ContractError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  if (static_cast<int>(state.m.size()) != params.size())
    throw ContractError("adam_step: optimizer state does not match parameter count");
  for (int i = 0; i < params.size(); ++i) {
    if (grads[static_cast<std::size_t>(i)].shape != params[i].shape)
      throw DimensionError("adam_step: gradient shape " + grads[static_cast<std::size_t>(i)].shape.str() +
                           " does not match parameter '" + params.names[static_cast<std::size_t>(i)] + "' " +
                           params[i].shape.str());
    if (!grads[static_cast<std::size_t>(i)].all_finite())
      throw NumericFault("adam_step: non-finite gradient for parameter '" +
                         params.names[static_cast<std::size_t>(i)] + "'");
  }

  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (int i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& m = state.m[static_cast<std::size_t>(i)];
    Tensor& v = state.v[static_cast<std::size_t>(i)];
    const Tensor& g = grads[static_cast<std::size_t>(i)];
    for (int k = 0; k < p.numel(); ++k) {
      double gk = g.at(k);
      m.at(k) = cfg.beta1 * m.at(k) + (1.0 - cfg.beta1) * gk;
      v.at(k) = cfg.beta2 * v.at(k) + (1.0 - cfg.beta2) * gk * gk;
      double mhat = m.at(k) / bc1;
      double vhat = v.at(k) / bc2;
      p.at(k) -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    check_finite(p, params.names[static_cast<std::size_t>(i)].c_str());
  }
}

}  // namespace graphvalue
