#pragma once

#include <cmath>
#include <vector>

#include "mipseg/tensor.hpp"

namespace mipseg {

// Per-parameter Adam moments, kept separate from the optimizer so sessions
// can checkpoint and resume exactly.
template <typename T>
struct AdamState {
  long long t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  void init_like(const std::vector<Tensor<T>>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.values().size(), T(0));
      v.emplace_back(p.values().size(), T(0));
    }
  }
  bool matches(const std::vector<Tensor<T>>& params) const {
    if (m.size() != params.size() || v.size() != params.size()) return false;
    for (size_t i = 0; i < params.size(); ++i)
      if (m[i].size() != params[i].values().size()) return false;
    return true;
  }
};

// Bias-corrected Adam with beta1=0.9, beta2=0.999, eps=1e-8.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor<T>> params, AdamState<T>* state)
      : params_(std::move(params)), state_(state) {
    if (!state_->matches(params_)) state_->init_like(params_);
  }

  void step(double lr) {
    const T b1 = T(0.9), b2 = T(0.999), eps = T(1e-8);
    ++state_->t;
    const T bc1 = T(1) - static_cast<T>(std::pow(0.9, static_cast<double>(state_->t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(0.999, static_cast<double>(state_->t)));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].mutable_values();
      const auto& g = params_[i].grad();
      auto& m = state_->m[i];
      auto& v = state_->v[i];
      for (size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        p[j] -= static_cast<T>(lr) * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<T>> params_;
  AdamState<T>* state_;
};

}  // namespace mipseg
