#pragma once

#include <string>
#include <vector>

#include "mipseg/tensor.hpp"

namespace mipseg {

// Dense 3D scalar grid, row-major a-then-b-then-c (c contiguous).
template <typename T>
struct Volume {
  int a = 0, b = 0, c = 0;
  std::vector<T> voxels;

  Volume() = default;
  Volume(int a_, int b_, int c_, T fill = T(0))
      : a(a_), b(b_), c(c_), voxels(static_cast<size_t>(a_) * b_ * c_, fill) {
    require(a_ >= 1 && b_ >= 1 && c_ >= 1, "volume extents must be >= 1");
  }

  long long size() const { return static_cast<long long>(a) * b * c; }
  T& at(int i, int j, int k) { return voxels[(static_cast<size_t>(i) * b + j) * c + k]; }
  const T& at(int i, int j, int k) const {
    return voxels[(static_cast<size_t>(i) * b + j) * c + k];
  }
  bool same_dims(const Volume& o) const { return a == o.a && b == o.b && c == o.c; }
};

// 2D image, row-major b-then-c (the projection of an a x b x c volume along a).
template <typename T>
struct Image {
  int b = 0, c = 0;
  std::vector<T> pixels;

  Image() = default;
  Image(int b_, int c_, T fill = T(0))
      : b(b_), c(c_), pixels(static_cast<size_t>(b_) * c_, fill) {
    require(b_ >= 1 && c_ >= 1, "image extents must be >= 1");
  }

  long long size() const { return static_cast<long long>(b) * c; }
  T& at(int j, int k) { return pixels[static_cast<size_t>(j) * c + k]; }
  const T& at(int j, int k) const { return pixels[static_cast<size_t>(j) * c + k]; }
};

template <typename T>
Tensor<T> to_tensor(const Volume<T>& v) {
  return Tensor<T>::from({v.a, v.b, v.c}, v.voxels);
}

template <typename T>
Tensor<T> to_tensor(const Image<T>& im) {
  return Tensor<T>::from({im.b, im.c}, im.pixels);
}

template <typename T>
Volume<T> to_volume(const Tensor<T>& t) {
  if (t.rank() != 3)
    throw ShapeError("to_volume: expected rank-3 tensor, got " + shape_str(t.shape()));
  Volume<T> v(t.shape()[0], t.shape()[1], t.shape()[2]);
  v.voxels = t.values();
  return v;
}

template <typename T>
Image<T> to_image(const Tensor<T>& t) {
  if (t.rank() != 2)
    throw ShapeError("to_image: expected rank-2 tensor, got " + shape_str(t.shape()));
  Image<T> im(t.shape()[0], t.shape()[1]);
  im.pixels = t.values();
  return im;
}

// The projection angle grid Theta = {k*180/m | k=0..m-1}, in degrees.
struct AngleSet {
  int m = 0;
  std::vector<double> angles;
};

inline AngleSet make_angle_grid(int m) {
  if (m < 1) throw ConfigError("angle grid needs m >= 1");
  AngleSet s;
  s.m = m;
  s.angles.resize(m);
  for (int k = 0; k < m; ++k) s.angles[k] = k * 180.0 / m;
  return s;
}

}  // namespace mipseg
