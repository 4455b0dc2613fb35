#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mipseg/tensor.hpp"

namespace mipseg {

struct GradCheckResult {
  double max_rel_err = 0.0;  // over coordinates that passed the smoothness probe
  int checked = 0;
  int skipped = 0;  // coordinates flagged as sitting on a kink (e.g. a pooling tie)
};

// Central-difference check of a scalar-valued tensor function against the
// analytic gradient produced by backward. Each coordinate is probed with
// one-sided differences too; coordinates where the left and right slopes
// disagree (non-differentiable points such as pooling ties) are skipped and
// counted, not failed.
template <typename T>
GradCheckResult finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                                  const Tensor<T>& x, T h) {
  Tensor<T> probe = Tensor<T>::param(x.shape(), x.values());
  std::vector<T> analytic;
  {
    Graph<T> g;
    auto scope = g.activate();
    Tensor<T> loss = f(probe);
    g.backward(loss);
    analytic = probe.grad();
  }
  auto eval = [&](const std::vector<T>& vals) -> double {
    Tensor<T> t = Tensor<T>::from(x.shape(), vals);
    return static_cast<double>(f(t).item());
  };
  std::vector<T> vals = x.values();
  const double f0 = eval(vals);
  GradCheckResult r;
  for (size_t i = 0; i < vals.size(); ++i) {
    const T keep = vals[i];
    vals[i] = keep + h;
    const double fp = eval(vals);
    vals[i] = keep - h;
    const double fm = eval(vals);
    vals[i] = keep;
    const double central = (fp - fm) / (2.0 * static_cast<double>(h));
    const double right = (fp - f0) / static_cast<double>(h);
    const double left = (f0 - fm) / static_cast<double>(h);
    const double slope_scale = std::abs(left) + std::abs(right) + 1.0;
    if (std::abs(right - left) > 0.1 * slope_scale) {
      ++r.skipped;
      continue;
    }
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(central), 1e-12});
    const double rel = std::abs(a - central) / denom;
    if (rel > r.max_rel_err) r.max_rel_err = rel;
    ++r.checked;
  }
  return r;
}

}  // namespace mipseg
