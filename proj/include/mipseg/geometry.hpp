#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "mipseg/nn.hpp"
#include "mipseg/parallel.hpp"
#include "mipseg/tensor.hpp"
#include "mipseg/volume.hpp"

namespace mipseg {

namespace detail {

// In-plane rotation about the c-axis, centered at ((a-1)/2, (b-1)/2).
// Angles are reduced to [0,180) plus an exact point reflection so that
// alpha and alpha+180 share identical bilinear weights; multiples of 90
// use exact coefficients, which keeps lattice-to-lattice rotations exact.
struct RotGeom {
  double cs = 1.0, sn = 0.0;
  bool flip = false;
  double ca = 0.0, cb = 0.0;
  int a = 0, b = 0;
};

inline RotGeom make_rot_geom(double deg, int a, int b) {
  double d = std::fmod(deg, 360.0);
  if (d < 0.0) d += 360.0;
  RotGeom g;
  g.flip = d >= 180.0;
  const double beta = g.flip ? d - 180.0 : d;
  if (beta == 0.0) {
    g.cs = 1.0;
    g.sn = 0.0;
  } else if (beta == 90.0) {
    g.cs = 0.0;
    g.sn = 1.0;
  } else {
    const double r = beta * 0.017453292519943295;
    g.cs = std::cos(r);
    g.sn = std::sin(r);
  }
  g.a = a;
  g.b = b;
  g.ca = (a - 1) / 2.0;
  g.cb = (b - 1) / 2.0;
  return g;
}

// Bilinear source taps for output lattice point (oa, ob). Taps outside the
// grid are dropped (zero fill); taps with exactly zero weight are dropped so
// lattice-aligned rotations stay exact.
struct Taps {
  int n = 0;
  int ia[4];
  int ib[4];
  double w[4];
};

inline Taps bilinear_taps(const RotGeom& g, long long oa, long long ob) {
  double da = static_cast<double>(oa) - g.ca;
  double db = static_cast<double>(ob) - g.cb;
  if (g.flip) {
    da = -da;
    db = -db;
  }
  const double sa = g.cs * da + g.sn * db + g.ca;
  const double sb = -g.sn * da + g.cs * db + g.cb;
  const double fa = std::floor(sa);
  const double fb = std::floor(sb);
  const int x0 = static_cast<int>(fa);
  const int y0 = static_cast<int>(fb);
  const double fx = sa - fa;
  const double fy = sb - fb;
  Taps t;
  auto push = [&](int x, int y, double w) {
    if (w != 0.0 && x >= 0 && x < g.a && y >= 0 && y < g.b) {
      t.ia[t.n] = x;
      t.ib[t.n] = y;
      t.w[t.n] = w;
      ++t.n;
    }
  };
  push(x0, y0, (1.0 - fx) * (1.0 - fy));
  push(x0, y0 + 1, (1.0 - fx) * fy);
  push(x0 + 1, y0, fx * (1.0 - fy));
  push(x0 + 1, y0 + 1, fx * fy);
  return t;
}

// out[oa,ob,:] += sum of weighted source rows (forward rotation).
template <typename T>
void rotate_gather_kernel(const RotGeom& g, const T* in, T* out, int a, int b, int c) {
  parallel_for(a, [&](long long lo, long long hi) {
    for (long long oa = lo; oa < hi; ++oa)
      for (int ob = 0; ob < b; ++ob) {
        const Taps t = bilinear_taps(g, oa, ob);
        T* orow = out + (static_cast<size_t>(oa) * b + ob) * c;
        for (int ti = 0; ti < t.n; ++ti) {
          const T w = static_cast<T>(t.w[ti]);
          const T* irow = in + (static_cast<size_t>(t.ia[ti]) * b + t.ib[ti]) * c;
          for (int k = 0; k < c; ++k) orow[k] += w * irow[k];
        }
      }
  });
}

// out[ta,tb,:] += w * in[oa,ob,:] — exact transpose of the gather. Threads
// partition the contiguous c axis, so every output element has one writer.
template <typename T>
void rotate_scatter_kernel(const RotGeom& g, const T* in, T* out, int a, int b, int c) {
  parallel_for(c, [&](long long k0, long long k1) {
    for (int oa = 0; oa < a; ++oa)
      for (int ob = 0; ob < b; ++ob) {
        const Taps t = bilinear_taps(g, oa, ob);
        const T* irow = in + (static_cast<size_t>(oa) * b + ob) * c;
        for (int ti = 0; ti < t.n; ++ti) {
          const T w = static_cast<T>(t.w[ti]);
          T* orow = out + (static_cast<size_t>(t.ia[ti]) * b + t.ib[ti]) * c;
          for (long long k = k0; k < k1; ++k) orow[k] += w * irow[k];
        }
      }
  });
}

// img[ob,:] += sum over oa of the rotated volume row (ray sum).
template <typename T>
void project_sum_kernel(const RotGeom& g, const T* vol, T* img, int a, int b, int c) {
  parallel_for(b, [&](long long b0, long long b1) {
    for (long long ob = b0; ob < b1; ++ob) {
      T* orow = img + static_cast<size_t>(ob) * c;
      for (int oa = 0; oa < a; ++oa) {
        const Taps t = bilinear_taps(g, oa, ob);
        for (int ti = 0; ti < t.n; ++ti) {
          const T w = static_cast<T>(t.w[ti]);
          const T* irow = vol + (static_cast<size_t>(t.ia[ti]) * b + t.ib[ti]) * c;
          for (int k = 0; k < c; ++k) orow[k] += w * irow[k];
        }
      }
    }
  });
}

// vol[ta,tb,:] += w * img[ob,:] replicated over every oa — the exact adjoint
// of project_sum_kernel (same tap enumeration).
template <typename T>
void backproject_kernel(const RotGeom& g, const T* img, T* vol, int a, int b, int c) {
  parallel_for(c, [&](long long k0, long long k1) {
    for (int oa = 0; oa < a; ++oa)
      for (int ob = 0; ob < b; ++ob) {
        const Taps t = bilinear_taps(g, oa, ob);
        const T* irow = img + static_cast<size_t>(ob) * c;
        for (int ti = 0; ti < t.n; ++ti) {
          const T w = static_cast<T>(t.w[ti]);
          T* orow = vol + (static_cast<size_t>(t.ia[ti]) * b + t.ib[ti]) * c;
          for (long long k = k0; k < k1; ++k) orow[k] += w * irow[k];
        }
      }
  });
}

// Maximum along the rotated a-axis with per-pixel argmax depth. Positions
// whose support lies fully outside the grid contribute the fill value 0.
template <typename T>
void project_max_kernel(const RotGeom& g, const T* vol, T* img, int* argdepth, int a, int b,
                        int c) {
  parallel_for(b, [&](long long b0, long long b1) {
    std::vector<T> tmp(static_cast<size_t>(c));
    for (long long ob = b0; ob < b1; ++ob) {
      T* orow = img + static_cast<size_t>(ob) * c;
      int* arow = argdepth + static_cast<size_t>(ob) * c;
      for (int oa = 0; oa < a; ++oa) {
        std::fill(tmp.begin(), tmp.end(), T(0));
        const Taps t = bilinear_taps(g, oa, ob);
        for (int ti = 0; ti < t.n; ++ti) {
          const T w = static_cast<T>(t.w[ti]);
          const T* irow = vol + (static_cast<size_t>(t.ia[ti]) * b + t.ib[ti]) * c;
          for (int k = 0; k < c; ++k) tmp[k] += w * irow[k];
        }
        if (oa == 0) {
          for (int k = 0; k < c; ++k) {
            orow[k] = tmp[k];
            arow[k] = 0;
          }
        } else {
          for (int k = 0; k < c; ++k)
            if (tmp[k] > orow[k]) {
              orow[k] = tmp[k];
              arow[k] = oa;
            }
        }
      }
    }
  });
}

}  // namespace detail

// Rotates an [A,B,C] volume by alpha degrees in the (a,b) plane about the
// c-axis, bilinear interpolation, zero fill outside the grid.
template <typename T>
Tensor<T> rotate_volume(const Tensor<T>& vol, double alpha_deg) {
  if (vol.rank() != 3)
    throw ShapeError("rotate_volume: input must be [A,B,C], got " + shape_str(vol.shape()));
  const int a = vol.shape()[0], b = vol.shape()[1], c = vol.shape()[2];
  const detail::RotGeom g = detail::make_rot_geom(alpha_deg, a, b);
  std::vector<T> out(static_cast<size_t>(a) * b * c, T(0));
  detail::rotate_gather_kernel(g, vol.data(), out.data(), a, b, c);
  const bool tracked = detail::track<T>({&vol});
  Tensor<T> y = Tensor<T>::make({a, b, c}, std::move(out), tracked);
  detail::record<T>("rotate_volume", tracked, [vol, y, g, a, b, c] {
    detail::rotate_scatter_kernel(g, y.grad().data(), vol.grad().data(), a, b, c);
  });
  return y;
}

// Maximum intensity projection along the rotated a-axis: an [A,B,C] volume
// maps to a [B,C] image. The argmax depth is saved; backward routes each
// pixel's gradient through the bilinear weights at that depth.
template <typename T>
Tensor<T> mip_project(const Tensor<T>& vol, double alpha_deg) {
  if (vol.rank() != 3)
    throw ShapeError("mip_project: input must be [A,B,C], got " + shape_str(vol.shape()));
  const int a = vol.shape()[0], b = vol.shape()[1], c = vol.shape()[2];
  const detail::RotGeom g = detail::make_rot_geom(alpha_deg, a, b);
  std::vector<T> out(static_cast<size_t>(b) * c);
  auto argdepth = std::make_shared<std::vector<int>>(out.size());
  detail::project_max_kernel(g, vol.data(), out.data(), argdepth->data(), a, b, c);
  const bool tracked = detail::track<T>({&vol});
  Tensor<T> y = Tensor<T>::make({b, c}, std::move(out), tracked);
  detail::record<T>("mip_project", tracked, [vol, y, argdepth, g, a, b, c] {
    const auto& gy = y.grad();
    auto& gx = vol.grad();
    parallel_for(c, [&](long long k0, long long k1) {
      for (int ob = 0; ob < b; ++ob)
        for (long long k = k0; k < k1; ++k) {
          const T gpix = gy[static_cast<size_t>(ob) * c + k];
          if (gpix == T(0)) continue;
          const int oa = (*argdepth)[static_cast<size_t>(ob) * c + k];
          const detail::Taps t = detail::bilinear_taps(g, oa, ob);
          for (int ti = 0; ti < t.n; ++ti)
            gx[(static_cast<size_t>(t.ia[ti]) * b + t.ib[ti]) * c + k] +=
                static_cast<T>(t.w[ti]) * gpix;
        }
    });
  });
  return y;
}

// Ray-sum projection along the rotated a-axis (the linear companion of MIP
// and the adjoint partner of backproject).
template <typename T>
Tensor<T> sum_project(const Tensor<T>& vol, double alpha_deg) {
  if (vol.rank() != 3)
    throw ShapeError("sum_project: input must be [A,B,C], got " + shape_str(vol.shape()));
  const int a = vol.shape()[0], b = vol.shape()[1], c = vol.shape()[2];
  const detail::RotGeom g = detail::make_rot_geom(alpha_deg, a, b);
  std::vector<T> out(static_cast<size_t>(b) * c, T(0));
  detail::project_sum_kernel(g, vol.data(), out.data(), a, b, c);
  const bool tracked = detail::track<T>({&vol});
  Tensor<T> y = Tensor<T>::make({b, c}, std::move(out), tracked);
  detail::record<T>("sum_project", tracked, [vol, y, g, a, b, c] {
    detail::backproject_kernel(g, y.grad().data(), vol.grad().data(), a, b, c);
  });
  return y;
}

// Ordered set of projection images with their angles.
template <typename T>
struct ProjectionStack {
  std::vector<double> angles;
  std::vector<Tensor<T>> images;  // index-aligned with angles, each [B,C]

  void push(double angle, Tensor<T> image) {
    angles.push_back(angle);
    images.push_back(std::move(image));
  }
  size_t size() const { return images.size(); }
};

// Per-angle trainable 1x2 filters. Path-2 banks are angle-tagged; the path-1
// bank is indexed by angle block, so its angle list stays empty.
template <typename T>
struct FiltrationBank {
  std::vector<double> angles;
  std::vector<Tensor<T>> filters;  // each shape [2]

  size_t size() const { return filters.size(); }
};

template <typename T>
FiltrationBank<T> make_filtration_bank(int count) {
  FiltrationBank<T> bank;
  bank.filters.reserve(count);
  // Identity start: training begins from plain backprojection.
  for (int i = 0; i < count; ++i) bank.filters.push_back(Tensor<T>::param({2}, {T(1), T(0)}));
  return bank;
}

template <typename T>
FiltrationBank<T> make_filtration_bank(const AngleSet& grid) {
  FiltrationBank<T> bank = make_filtration_bank<T>(grid.m);
  bank.angles = grid.angles;
  return bank;
}

// 'Same' convolution of a [B,C] image with a 2-tap filter along the b axis:
// out[j,k] = w0*in[j,k] + w1*in[j+1,k], zero beyond the last row.
template <typename T>
Tensor<T> filter_rows2(const Tensor<T>& img, const Tensor<T>& w) {
  if (img.rank() != 2)
    throw ShapeError("filter_rows2: image must be [B,C], got " + shape_str(img.shape()));
  if (w.rank() != 1 || w.shape()[0] != 2)
    throw ShapeError("filter_rows2: filter must be [2], got " + shape_str(w.shape()));
  const int B = img.shape()[0], C = img.shape()[1];
  const T w0 = w.data()[0], w1 = w.data()[1];
  std::vector<T> out(static_cast<size_t>(B) * C);
  const T* iv = img.data();
  for (int j = 0; j < B; ++j)
    for (int k = 0; k < C; ++k)
      out[static_cast<size_t>(j) * C + k] =
          w0 * iv[static_cast<size_t>(j) * C + k] +
          (j + 1 < B ? w1 * iv[static_cast<size_t>(j + 1) * C + k] : T(0));
  const bool tracked = detail::track<T>({&img, &w});
  Tensor<T> y = Tensor<T>::make({B, C}, std::move(out), tracked);
  detail::record<T>("filter_rows2", tracked, [img, w, y, B, C, w0, w1] {
    const auto& gy = y.grad();
    if (img.requires_grad()) {
      auto& gi = img.grad();
      for (int j = 0; j < B; ++j)
        for (int k = 0; k < C; ++k) {
          const size_t idx = static_cast<size_t>(j) * C + k;
          gi[idx] += w0 * gy[idx];
          if (j > 0) gi[idx] += w1 * gy[static_cast<size_t>(j - 1) * C + k];
        }
    }
    if (w.requires_grad()) {
      const T* iv2 = img.data();
      T g0 = 0, g1 = 0;
      for (int j = 0; j < B; ++j)
        for (int k = 0; k < C; ++k) {
          const size_t idx = static_cast<size_t>(j) * C + k;
          g0 += gy[idx] * iv2[idx];
          if (j + 1 < B) g1 += gy[idx] * iv2[static_cast<size_t>(j + 1) * C + k];
        }
      w.grad()[0] += g0;
      w.grad()[1] += g1;
    }
  });
  return y;
}

// Applies each image's own filter; differentiable in images and filters.
template <typename T>
ProjectionStack<T> filtrate(const ProjectionStack<T>& stack, const FiltrationBank<T>& bank) {
  if (stack.size() != bank.size())
    throw ConfigError("filtrate: stack has " + std::to_string(stack.size()) +
                      " images but bank has " + std::to_string(bank.size()) + " filters");
  if (!bank.angles.empty() && bank.angles != stack.angles)
    throw ConfigError("filtrate: bank angles do not match stack angles");
  ProjectionStack<T> out;
  out.angles = stack.angles;
  out.images.reserve(stack.size());
  for (size_t i = 0; i < stack.size(); ++i)
    out.images.push_back(filter_rows2(stack.images[i], bank.filters[i]));
  return out;
}

// Linear backprojection: smears every image back along its projection rays
// (the exact adjoint of sum_project) and sums over angles.
template <typename T>
Tensor<T> backproject(const ProjectionStack<T>& stack, int a, int b, int c) {
  require(stack.size() > 0, "backproject: empty projection stack");
  for (const auto& im : stack.images)
    if (im.rank() != 2 || im.shape()[0] != b || im.shape()[1] != c)
      throw ShapeError("backproject: image " + shape_str(im.shape()) +
                       " does not match target dims [" + std::to_string(a) + "x" +
                       std::to_string(b) + "x" + std::to_string(c) + "]");
  std::vector<T> out(static_cast<size_t>(a) * b * c, T(0));
  std::vector<detail::RotGeom> geoms;
  geoms.reserve(stack.size());
  for (size_t i = 0; i < stack.size(); ++i) {
    geoms.push_back(detail::make_rot_geom(stack.angles[i], a, b));
    detail::backproject_kernel(geoms[i], stack.images[i].data(), out.data(), a, b, c);
  }
  bool tracked = false;
  if (Graph<T>::recording())
    for (const auto& im : stack.images)
      if (im.requires_grad()) tracked = true;
  Tensor<T> y = Tensor<T>::make({a, b, c}, std::move(out), tracked);
  detail::record<T>("backproject", tracked, [stack, y, geoms, a, b, c] {
    const auto& gy = y.grad();
    for (size_t i = 0; i < stack.size(); ++i) {
      if (!stack.images[i].requires_grad()) continue;
      detail::project_sum_kernel(geoms[i], gy.data(), stack.images[i].grad().data(), a, b, c);
    }
  });
  return y;
}

// Fine-tuning head T: shape-preserving 3D average pooling, learnable scalar
// affine, sigmoid. Maps reconstructions to voxel probabilities in (0,1).
template <typename T>
Tensor<T> finetune_head(const Tensor<T>& vol, const Tensor<T>& gain, const Tensor<T>& shift) {
  return sigmoid(affine_scalar(avgpool3d_same(vol), gain, shift));
}

}  // namespace mipseg
