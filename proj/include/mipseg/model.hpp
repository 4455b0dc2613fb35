#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mipseg/geometry.hpp"
#include "mipseg/rng.hpp"
#include "mipseg/unet.hpp"

namespace mipseg {

// One angle drawn uniformly from each of the p contiguous degree blocks
// [k*180/p, (k+1)*180/p) of the m-point grid; returned sorted.
inline std::vector<double> sample_path1_angles(int p, int m, Rng& rng) {
  if (p < 1) throw ConfigError("path-1 needs p >= 1");
  const AngleSet grid = make_angle_grid(m);
  std::vector<double> out;
  out.reserve(p);
  for (int k = 0; k < p; ++k) {
    const double lo = k * 180.0 / p;
    const double hi = (k + 1) * 180.0 / p;
    int first = -1, count = 0;
    for (int j = 0; j < m; ++j)
      if (grid.angles[j] >= lo && grid.angles[j] < hi) {
        if (first < 0) first = j;
        ++count;
      }
    if (count == 0)
      throw ConfigError("angle block " + std::to_string(k) + " of width " +
                        std::to_string(180.0 / p) + " deg contains no grid angle (m=" +
                        std::to_string(m) + " < p=" + std::to_string(p) + "?)");
    out.push_back(grid.angles[first + static_cast<int>(rng.uniform_index(count))]);
  }
  return out;
}

// Parameter bundle of the projection network: the shared 2D U-net, the
// path-1 filtration bank (block-indexed), the path-2 bank over the full
// grid, and one scalar affine head per path.
template <typename T>
struct Model25D {
  UNetModel<T> unet;
  FiltrationBank<T> bank_p;  // p filters, indexed by angle block
  AngleSet grid;             // Theta with m angles
  FiltrationBank<T> bank_m;  // m filters, index-aligned with grid
  Tensor<T> head1_gain, head1_shift;  // T for path 1
  Tensor<T> head2_gain, head2_shift;  // T~ for path 2

  int p() const { return static_cast<int>(bank_p.size()); }
  int m() const { return grid.m; }

  template <class Fn>
  void for_each_param(Fn&& fn) const {
    unet.for_each_param(fn);
    for (size_t i = 0; i < bank_p.filters.size(); ++i)
      fn("bank_p." + std::to_string(i), bank_p.filters[i]);
    for (size_t i = 0; i < bank_m.filters.size(); ++i)
      fn("bank_m." + std::to_string(i), bank_m.filters[i]);
    fn("head1.gain", head1_gain);
    fn("head1.shift", head1_shift);
    fn("head2.gain", head2_gain);
    fn("head2.shift", head2_shift);
  }

  std::vector<Tensor<T>> params() const {
    std::vector<Tensor<T>> out;
    for_each_param([&](const std::string&, const Tensor<T>& t) { out.push_back(t); });
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for_each_param([&](const std::string& n, const Tensor<T>& t) { out.emplace_back(n, t); });
    return out;
  }
};

// Heads start centered: backprojecting p unit-probability images yields
// values near p, so shift -p/2 puts the summed range around sigmoid's
// midpoint at initialization.
template <typename T>
Model25D<T> make_model25d(const UNetConfig& ucfg, int p, int m, std::uint64_t seed) {
  if (p < 1 || m < 1) throw ConfigError("model needs p >= 1 and m >= 1");
  if (p > m) throw ConfigError("model needs p <= m");
  Model25D<T> model;
  model.unet = build_unet<T>(ucfg, seed);
  model.bank_p = make_filtration_bank<T>(p);
  model.grid = make_angle_grid(m);
  model.bank_m = make_filtration_bank<T>(model.grid);
  model.head1_gain = Tensor<T>::param({1}, {T(1)});
  model.head1_shift = Tensor<T>::param({1}, {static_cast<T>(-p / 2.0)});
  model.head2_gain = Tensor<T>::param({1}, {T(1)});
  model.head2_shift = Tensor<T>::param({1}, {static_cast<T>(-m / 2.0)});
  return model;
}

// Segments each MIP image with the shared U-net and stacks the results.
template <typename T>
ProjectionStack<T> project_and_segment(const Model25D<T>& model, const Tensor<T>& x,
                                       const std::vector<double>& angles) {
  ProjectionStack<T> stack;
  for (double alpha : angles) stack.push(alpha, unet_forward(model.unet, mip_project(x, alpha)));
  return stack;
}

// Filtration, backprojection and fine-tuning head shared by both paths.
template <typename T>
Tensor<T> reconstruct(const ProjectionStack<T>& stack, const FiltrationBank<T>& bank,
                      const Tensor<T>& gain, const Tensor<T>& shift, int a, int b, int c) {
  return finetune_head(backproject(filtrate(stack, bank), a, b, c), gain, shift);
}

// Path 1: reconstruction of the p randomly chosen MIP segmentations.
// Gradients reach the U-net, bank_p and head 1.
template <typename T>
Tensor<T> forward_path1(const Model25D<T>& model, const Tensor<T>& x,
                        const std::vector<double>& angles) {
  if (static_cast<int>(angles.size()) != model.p())
    throw ConfigError("forward_path1 expects " + std::to_string(model.p()) + " angles, got " +
                      std::to_string(angles.size()));
  const int a = x.shape()[0], b = x.shape()[1], c = x.shape()[2];
  ProjectionStack<T> stack = project_and_segment(model, x, angles);
  return reconstruct(stack, model.bank_p, model.head1_gain, model.head1_shift, a, b, c);
}

// Path 2: reconstruction over the full grid. The U-net runs under a
// stop-gradient barrier, so backward updates only bank_m and head 2.
template <typename T>
Tensor<T> forward_path2(const Model25D<T>& model, const Tensor<T>& x) {
  const int a = x.shape()[0], b = x.shape()[1], c = x.shape()[2];
  ProjectionStack<T> stack;
  {
    NoGradScope<T> barrier;
    stack = project_and_segment(model, x, model.grid.angles);
  }
  return reconstruct(stack, model.bank_m, model.head2_gain, model.head2_shift, a, b, c);
}

// Deliverable inference output: the path-2 probability volume.
template <typename T>
Volume<T> predict_volume(const Model25D<T>& model, const Volume<T>& scan) {
  NoGradScope<T> inference;
  return to_volume(forward_path2(model, to_tensor(scan)));
}

}  // namespace mipseg
