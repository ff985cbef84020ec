#pragma once

// Central finite-difference gradient verification. Always run in double:
// with h = 1e-4 the truncation+rounding error of float32 is larger than the
// 1e-3 acceptance threshold, double keeps the check meaningful.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sfunet/tensor.hpp"

namespace sfunet {

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool ok = true;
  std::string worst;  // "input#k[i]" of the worst element
};

// fn must rebuild the computation from the current input values on every
// call and return a scalar loss. Inputs are perturbed in place.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& fn,
                                  std::vector<Tensor<double>> inputs,
                                  double h = 1e-4, double tol = 1e-3) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor<double> loss = fn();
  loss.backward();
  std::vector<Buf<double>> analytic;
  for (auto& in : inputs) {
    in.impl()->ensure_grad();
    analytic.push_back(in.grad());
  }

  GradCheckResult res;
  for (size_t k = 0; k < inputs.size(); ++k) {
    auto& x = inputs[k].data();
    for (size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double lp = fn().item();
      x[i] = saved - h;
      const double lm = fn().item();
      x[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double rel = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input#" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  res.ok = res.max_rel_err < tol;
  return res;
}

}  // namespace sfunet
