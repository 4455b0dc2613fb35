#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "mipseg/loss.hpp"
#include "mipseg/rng.hpp"
#include "mipseg/volume.hpp"

namespace mipseg {

// Synthetic stand-in for sparse angiography volumes: a few labeled target
// tubes plus unlabeled distractor tubes whose intensities sit higher but
// overlap the targets', so a plain global threshold cannot separate them.
struct PhantomSpec {
  int a = 32, b = 64, c = 64;
  int n_target_vessels = 2;
  int n_distractors = 2;
  double radius_min = 1.4, radius_max = 2.4;                       // voxels
  double target_intensity_min = 0.55, target_intensity_max = 0.85;
  double distractor_intensity_min = 0.75, distractor_intensity_max = 1.15;
  double noise_sigma = 0.04;
  double foreground_budget = 0.02;  // max labeled voxel fraction

  void validate() const {
    if (a < 1 || b < 1 || c < 1) throw ConfigError("phantom dims must be >= 1");
    if (n_target_vessels < 0 || n_distractors < 0)
      throw ConfigError("phantom tube counts must be >= 0");
    if (radius_min <= 0 || radius_max < radius_min)
      throw ConfigError("phantom radius range invalid");
    if (foreground_budget <= 0.0 && n_target_vessels > 0)
      throw ConfigError("phantom budget 0 with target vessels requested is infeasible");
    if (n_target_vessels > 0 && std::min(a, std::min(b, c)) < 2 * (radius_min + 1))
      throw ConfigError("phantom dims too small for the minimum tube radius");
    if (n_distractors > 0) {
      const double lo = std::max(target_intensity_min, distractor_intensity_min);
      const double hi = std::min(target_intensity_max, distractor_intensity_max);
      if (lo >= hi)
        throw ConfigError("distractor intensity range must overlap the target range");
    }
  }
};

namespace detail {

struct TubePlan {
  std::vector<std::array<double, 3>> points;  // polyline vertices
  double radius = 1.0;
  double intensity = 1.0;
  bool labeled = false;
};

inline double dist_point_segment(double px, double py, double pz, const std::array<double, 3>& u,
                                 const std::array<double, 3>& v) {
  const double dx = v[0] - u[0], dy = v[1] - u[1], dz = v[2] - u[2];
  const double len2 = dx * dx + dy * dy + dz * dz;
  double t = 0.0;
  if (len2 > 0.0) {
    t = ((px - u[0]) * dx + (py - u[1]) * dy + (pz - u[2]) * dz) / len2;
    t = std::clamp(t, 0.0, 1.0);
  }
  const double qx = u[0] + t * dx - px;
  const double qy = u[1] + t * dy - py;
  const double qz = u[2] + t * dz - pz;
  return std::sqrt(qx * qx + qy * qy + qz * qz);
}

inline TubePlan plan_tube(const PhantomSpec& spec, Rng& rng, bool labeled, double intensity_lo,
                          double intensity_hi) {
  TubePlan tube;
  tube.labeled = labeled;
  tube.radius = rng.uniform(spec.radius_min, spec.radius_max);
  tube.intensity = rng.uniform(intensity_lo, intensity_hi);
  const double margin = tube.radius + 1.0;
  auto clamp_point = [&](std::array<double, 3> p) {
    p[0] = std::clamp(p[0], margin, spec.a - 1 - margin);
    p[1] = std::clamp(p[1], margin, spec.b - 1 - margin);
    p[2] = std::clamp(p[2], margin, spec.c - 1 - margin);
    return p;
  };
  std::array<double, 3> pos = clamp_point({rng.uniform(0.0, spec.a - 1.0),
                                           rng.uniform(0.0, spec.b - 1.0),
                                           rng.uniform(0.0, spec.c - 1.0)});
  std::array<double, 3> dir{rng.normal(), rng.normal(), rng.normal()};
  auto normalize = [](std::array<double, 3>& d) {
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (n > 1e-12)
      for (auto& x : d) x /= n;
    else
      d = {1.0, 0.0, 0.0};
  };
  normalize(dir);
  tube.points.push_back(pos);
  const double seg_len = 0.35 * (spec.a + spec.b + spec.c) / 3.0;
  const int n_segments = 3;
  for (int s = 0; s < n_segments; ++s) {
    pos = clamp_point({pos[0] + seg_len * dir[0], pos[1] + seg_len * dir[1],
                       pos[2] + seg_len * dir[2]});
    tube.points.push_back(pos);
    std::array<double, 3> kick{rng.normal(), rng.normal(), rng.normal()};
    normalize(kick);
    for (int i = 0; i < 3; ++i) dir[i] += 0.6 * kick[i];
    normalize(dir);
  }
  return tube;
}

// Renders all tubes at the given radius scale. Intensities max-composite;
// the mask marks labeled tubes out to their (scaled) radius.
template <typename T>
void render_tubes(const PhantomSpec& spec, const std::vector<TubePlan>& tubes,
                  double radius_scale, Volume<T>& scan, Volume<T>& mask) {
  scan = Volume<T>(spec.a, spec.b, spec.c, T(0));
  mask = Volume<T>(spec.a, spec.b, spec.c, T(0));
  for (const auto& tube : tubes) {
    const double r = tube.radius * radius_scale;
    for (size_t s = 0; s + 1 < tube.points.size(); ++s) {
      const auto& u = tube.points[s];
      const auto& v = tube.points[s + 1];
      const double pad = r + 1.0;
      const int i0 = std::max(0, static_cast<int>(std::floor(std::min(u[0], v[0]) - pad)));
      const int i1 = std::min(spec.a - 1, static_cast<int>(std::ceil(std::max(u[0], v[0]) + pad)));
      const int j0 = std::max(0, static_cast<int>(std::floor(std::min(u[1], v[1]) - pad)));
      const int j1 = std::min(spec.b - 1, static_cast<int>(std::ceil(std::max(u[1], v[1]) + pad)));
      const int k0 = std::max(0, static_cast<int>(std::floor(std::min(u[2], v[2]) - pad)));
      const int k1 = std::min(spec.c - 1, static_cast<int>(std::ceil(std::max(u[2], v[2]) + pad)));
      for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j)
          for (int k = k0; k <= k1; ++k) {
            const double d = dist_point_segment(i, j, k, u, v);
            const double f = std::clamp(r + 0.5 - d, 0.0, 1.0);
            if (f > 0.0) {
              T& s_out = scan.at(i, j, k);
              const T val = static_cast<T>(tube.intensity * f);
              if (val > s_out) s_out = val;
              if (tube.labeled && d <= r) mask.at(i, j, k) = T(1);
            }
          }
    }
  }
}

}  // namespace detail

// Deterministic per rng state. Target tubes are rendered with soft one-voxel
// falloff and labeled 1; distractors render identically but stay unlabeled.
// If the label budget is exceeded, radii shrink geometrically until the mask
// fits (tube paths are planned before rendering, so the retry is seedless).
template <typename T>
std::pair<Volume<T>, Volume<T>> generate_phantom(const PhantomSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<detail::TubePlan> tubes;
  tubes.reserve(spec.n_target_vessels + spec.n_distractors);
  for (int i = 0; i < spec.n_target_vessels; ++i)
    tubes.push_back(detail::plan_tube(spec, rng, true, spec.target_intensity_min,
                                      spec.target_intensity_max));
  for (int i = 0; i < spec.n_distractors; ++i)
    tubes.push_back(detail::plan_tube(spec, rng, false, spec.distractor_intensity_min,
                                      spec.distractor_intensity_max));

  Volume<T> scan, mask;
  double scale = 1.0;
  for (int attempt = 0;; ++attempt) {
    detail::render_tubes(spec, tubes, scale, scan, mask);
    long long labeled = 0;
    for (T v : mask.voxels) labeled += v != T(0) ? 1 : 0;
    const double fraction = static_cast<double>(labeled) / static_cast<double>(mask.size());
    if (fraction <= spec.foreground_budget) break;
    if (attempt >= 8)
      throw ConfigError("phantom mask cannot fit the foreground budget " +
                        std::to_string(spec.foreground_budget));
    scale *= 0.85;
  }

  if (spec.noise_sigma > 0.0) {
    for (auto& v : scan.voxels) {
      v += static_cast<T>(spec.noise_sigma * rng.normal());
      if (v < T(0)) v = T(0);
    }
  }
  return {std::move(scan), std::move(mask)};
}

// Strongest global-threshold comparator: sweeps candidate thresholds and
// returns the best Dice coefficient any single threshold reaches against
// the mask.
template <typename T>
double best_threshold_dice(const Volume<T>& scan, const Volume<T>& mask, int n_steps = 128) {
  T lo = scan.voxels.empty() ? T(0) : scan.voxels[0];
  T hi = lo;
  for (T v : scan.voxels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double best = 0.0;
  for (int s = 0; s <= n_steps; ++s) {
    const T t = lo + static_cast<T>((static_cast<double>(hi) - static_cast<double>(lo)) * s /
                                    n_steps);
    ConfusionCounts n;
    for (size_t i = 0; i < scan.voxels.size(); ++i) {
      const bool p = scan.voxels[i] >= t;
      const bool y = mask.voxels[i] != T(0);
      if (p && y)
        ++n.tp;
      else if (p)
        ++n.fp;
      else if (y)
        ++n.fn;
      else
        ++n.tn;
    }
    best = std::max(best, metrics_from_counts(n).dc);
  }
  return best;
}

}  // namespace mipseg
