#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <doctest.h>

#include "daclab/rng.hpp"
#include "daclab/tensor.hpp"

namespace daclab::testing {

// Central finite differences in 64-bit against the analytic backward pass.
// Error is |analytic - fd| / max(1, |analytic|, |fd|), the usual gradcheck
// normalization (relative at large magnitudes, absolute below 1).
template <class LossFn>
double max_gradient_error(ParameterSet<double>& params, LossFn&& loss_fn, double step = 1e-5) {
  params.zero_grad();
  auto loss = loss_fn();
  loss.backward();

  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, p] : params) analytic[name] = p.grad();

  double worst = 0.0;
  for (auto& [name, p] : params) {
    auto& v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      double orig = v[i];
      v[i] = orig + step;
      double f1 = loss_fn().item();
      v[i] = orig - step;
      double f2 = loss_fn().item();
      v[i] = orig;
      double fd = (f1 - f2) / (2.0 * step);
      double a = analytic[name][i];
      double err = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline Tensor<double> random_tensor(std::vector<std::size_t> shape, RandomStream& rng,
                                    double scale = 1.0, bool requires_grad = false) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor<double>::from_values(std::move(shape), std::move(v), requires_grad);
}

}  // namespace daclab::testing
