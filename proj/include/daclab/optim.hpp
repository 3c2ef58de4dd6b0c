#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "daclab/tensor.hpp"

namespace daclab {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Holds per-parameter Adam moments keyed by name; SGD keeps only the step count.
// Gradients are left untouched, the caller resets them between steps.
template <class T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
    if (cfg.learning_rate <= 0) throw std::invalid_argument("optimizer: learning rate must be > 0");
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return step_; }

  void step(ParameterSet<T>& params) {
    ++step_;
    for (auto& [name, p] : params) {
      if (!p.requires_grad()) continue;
      if (p.node()->grad.size() != p.numel()) {
        throw std::invalid_argument("optimizer: missing gradient for parameter '" + name + "'");
      }
      auto& v = p.mutable_values();
      const auto& g = p.node()->grad;
      if (cfg_.kind == OptimizerKind::sgd) {
        T lr = T(cfg_.learning_rate);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
      } else {
        auto& m = moments_m_[name];
        auto& s = moments_v_[name];
        if (m.size() != v.size()) m.assign(v.size(), T(0));
        if (s.size() != v.size()) s.assign(v.size(), T(0));
        T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
        T bc1 = T(1) - T(std::pow(cfg_.beta1, double(step_)));
        T bc2 = T(1) - T(std::pow(cfg_.beta2, double(step_)));
        T lr = T(cfg_.learning_rate);
        T eps = T(cfg_.epsilon);
        for (std::size_t i = 0; i < v.size(); ++i) {
          m[i] = b1 * m[i] + (T(1) - b1) * g[i];
          s[i] = b2 * s[i] + (T(1) - b2) * g[i] * g[i];
          T mhat = m[i] / bc1;
          T vhat = s[i] / bc2;
          v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::uint64_t step_ = 0;
  std::map<std::string, std::vector<T>> moments_m_;
  std::map<std::string, std::vector<T>> moments_v_;
};

}  // namespace daclab
