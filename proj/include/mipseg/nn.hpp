#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "mipseg/parallel.hpp"
#include "mipseg/tensor.hpp"

namespace mipseg {

enum class Padding { Same, Valid };

namespace detail {

// Zero-pads a [C,H,W] plane stack by (pt, pl) on the top/left and
// (ph-H-pt, pw-W-pl) on the bottom/right into a (C, hp, wp) buffer.
template <typename T>
std::vector<T> pad_chw(const T* in, int C, int H, int W, int hp, int wp, int pt, int pl) {
  std::vector<T> out(static_cast<size_t>(C) * hp * wp, T(0));
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h) {
      const T* src = in + (static_cast<size_t>(c) * H + h) * W;
      T* dst = out.data() + (static_cast<size_t>(c) * hp + h + pt) * wp + pl;
      std::copy(src, src + W, dst);
    }
  return out;
}

}  // namespace detail

// 2D cross-correlation over a [C_in,H,W] input with a [C_out,C_in,kh,kw]
// kernel, stride 1. 'Same' zero-pads so output extents match the input.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Padding padding) {
  if (input.rank() != 3)
    throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
  if (kernel.rank() != 4)
    throw ShapeError("conv2d: kernel must be [Co,Ci,kh,kw], got " + shape_str(kernel.shape()));
  const int Ci = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int Co = kernel.shape()[0], Kci = kernel.shape()[1];
  const int kh = kernel.shape()[2], kw = kernel.shape()[3];
  if (Kci != Ci)
    throw ShapeError("conv2d: input channels " + shape_str(input.shape()) +
                     " do not match kernel " + shape_str(kernel.shape()));
  if (bias.rank() != 1 || bias.shape()[0] != Co)
    throw ShapeError("conv2d: bias must be [" + std::to_string(Co) + "], got " +
                     shape_str(bias.shape()));

  const int pt = padding == Padding::Same ? (kh - 1) / 2 : 0;
  const int pl = padding == Padding::Same ? (kw - 1) / 2 : 0;
  const int Ho = padding == Padding::Same ? H : H - kh + 1;
  const int Wo = padding == Padding::Same ? W : W - kw + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) +
                     " larger than padded input " + shape_str(input.shape()));
  const int hp = Ho + kh - 1, wp = Wo + kw - 1;

  auto padded = detail::pad_chw(input.data(), Ci, H, W, hp, wp, pt, pl);
  std::vector<T> out(static_cast<size_t>(Co) * Ho * Wo);
  const T* kv = kernel.data();
  const T* bv = bias.data();
  const T* ip = padded.data();
  parallel_for(Co, [&](long long c0, long long c1) {
    for (long long co = c0; co < c1; ++co) {
      T* oplane = out.data() + static_cast<size_t>(co) * Ho * Wo;
      std::fill(oplane, oplane + static_cast<size_t>(Ho) * Wo, bv[co]);
      for (int ci = 0; ci < Ci; ++ci)
        for (int u = 0; u < kh; ++u)
          for (int v = 0; v < kw; ++v) {
            const T k = kv[((static_cast<size_t>(co) * Ci + ci) * kh + u) * kw + v];
            if (k == T(0)) continue;
            for (int h = 0; h < Ho; ++h) {
              const T* irow = ip + (static_cast<size_t>(ci) * hp + h + u) * wp + v;
              T* orow = oplane + static_cast<size_t>(h) * Wo;
              for (int w = 0; w < Wo; ++w) orow[w] += k * irow[w];
            }
          }
    }
  });

  const bool tracked = detail::track<T>({&input, &kernel, &bias});
  Tensor<T> y = Tensor<T>::make({Co, Ho, Wo}, std::move(out), tracked);
  detail::record<T>("conv2d", tracked, [input, kernel, bias, y, Ci, H, W, Co, kh, kw, Ho, Wo,
                                        hp, wp, pt, pl] {
    const auto& gy = y.grad();
    const T* kv2 = kernel.data();
    if (input.requires_grad()) {
      std::vector<T> gpad(static_cast<size_t>(Ci) * hp * wp, T(0));
      parallel_for(Ci, [&](long long c0, long long c1) {
        for (long long ci = c0; ci < c1; ++ci)
          for (int co = 0; co < Co; ++co)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                const T k = kv2[((static_cast<size_t>(co) * Ci + ci) * kh + u) * kw + v];
                if (k == T(0)) continue;
                for (int h = 0; h < Ho; ++h) {
                  T* grow = gpad.data() + (static_cast<size_t>(ci) * hp + h + u) * wp + v;
                  const T* gyrow = gy.data() + (static_cast<size_t>(co) * Ho + h) * Wo;
                  for (int w = 0; w < Wo; ++w) grow[w] += k * gyrow[w];
                }
              }
      });
      auto& gx = input.grad();
      for (int ci = 0; ci < Ci; ++ci)
        for (int h = 0; h < H; ++h) {
          const T* src = gpad.data() + (static_cast<size_t>(ci) * hp + h + pt) * wp + pl;
          T* dst = gx.data() + (static_cast<size_t>(ci) * H + h) * W;
          for (int w = 0; w < W; ++w) dst[w] += src[w];
        }
    }
    if (kernel.requires_grad() || bias.requires_grad()) {
      auto padded2 = detail::pad_chw(input.data(), Ci, H, W, hp, wp, pt, pl);
      const T* ip2 = padded2.data();
      if (kernel.requires_grad()) {
        auto& gk = kernel.grad();
        parallel_for(Co, [&](long long c0, long long c1) {
          for (long long co = c0; co < c1; ++co)
            for (int ci = 0; ci < Ci; ++ci)
              for (int u = 0; u < kh; ++u)
                for (int v = 0; v < kw; ++v) {
                  T acc = 0;
                  for (int h = 0; h < Ho; ++h) {
                    const T* irow = ip2 + (static_cast<size_t>(ci) * hp + h + u) * wp + v;
                    const T* gyrow = gy.data() + (static_cast<size_t>(co) * Ho + h) * Wo;
                    for (int w = 0; w < Wo; ++w) acc += irow[w] * gyrow[w];
                  }
                  gk[((static_cast<size_t>(co) * Ci + ci) * kh + u) * kw + v] += acc;
                }
        });
      }
      if (bias.requires_grad()) {
        auto& gb = bias.grad();
        for (int co = 0; co < Co; ++co) {
          T acc = 0;
          const T* gyp = gy.data() + static_cast<size_t>(co) * Ho * Wo;
          for (long long i = 0; i < static_cast<long long>(Ho) * Wo; ++i) acc += gyp[i];
          gb[co] += acc;
        }
      }
    }
  });
  return y;
}

// 2x2 max pooling, stride 2. Argmax indices are saved for backward; ties go
// to the lowest linear index.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input) {
  if (input.rank() != 3)
    throw ShapeError("maxpool2d: input must be [C,H,W], got " + shape_str(input.shape()));
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("maxpool2d: spatial extents must be even, got " + shape_str(input.shape()));
  const int Ho = H / 2, Wo = W / 2;
  std::vector<T> out(static_cast<size_t>(C) * Ho * Wo);
  auto argmax = std::make_shared<std::vector<long long>>(out.size());
  const T* xv = input.data();
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < Ho; ++h)
      for (int w = 0; w < Wo; ++w) {
        T best{};
        long long bi = -1;
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw) {
            const long long idx =
                (static_cast<long long>(c) * H + 2 * h + dh) * W + 2 * w + dw;
            if (bi < 0 || xv[idx] > best) {
              best = xv[idx];
              bi = idx;
            }
          }
        const size_t o = (static_cast<size_t>(c) * Ho + h) * Wo + w;
        out[o] = best;
        (*argmax)[o] = bi;
      }
  const bool tracked = detail::track<T>({&input});
  Tensor<T> y = Tensor<T>::make({C, Ho, Wo}, std::move(out), tracked);
  detail::record<T>("maxpool2d", tracked, [input, y, argmax] {
    const auto& gy = y.grad();
    auto& gx = input.grad();
    for (size_t i = 0; i < gy.size(); ++i) gx[(*argmax)[i]] += gy[i];
  });
  return y;
}

// Nearest-neighbor 2x upsampling; backward sums each 2x2 block.
template <typename T>
Tensor<T> upsample2d_nearest(const Tensor<T>& input) {
  if (input.rank() != 3)
    throw ShapeError("upsample2d: input must be [C,H,W], got " + shape_str(input.shape()));
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  std::vector<T> out(static_cast<size_t>(C) * 4 * H * W);
  const T* xv = input.data();
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const T v = xv[(static_cast<size_t>(c) * H + h) * W + w];
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw)
            out[(static_cast<size_t>(c) * 2 * H + 2 * h + dh) * 2 * W + 2 * w + dw] = v;
      }
  const bool tracked = detail::track<T>({&input});
  Tensor<T> y = Tensor<T>::make({C, 2 * H, 2 * W}, std::move(out), tracked);
  detail::record<T>("upsample2d", tracked, [input, y, C, H, W] {
    const auto& gy = y.grad();
    auto& gx = input.grad();
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          T acc = 0;
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw)
              acc += gy[(static_cast<size_t>(c) * 2 * H + 2 * h + dh) * 2 * W + 2 * w + dw];
          gx[(static_cast<size_t>(c) * H + h) * W + w] += acc;
        }
  });
  return y;
}

// Learnable 2x2 up-convolution, stride 2 (optional replacement for nearest
// upsampling). Kernel layout [Ci,Co,2,2].
template <typename T>
Tensor<T> upconv2x2(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (input.rank() != 3)
    throw ShapeError("upconv2x2: input must be [C,H,W], got " + shape_str(input.shape()));
  const int Ci = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  if (kernel.rank() != 4 || kernel.shape()[0] != Ci || kernel.shape()[2] != 2 ||
      kernel.shape()[3] != 2)
    throw ShapeError("upconv2x2: kernel must be [" + std::to_string(Ci) + ",Co,2,2], got " +
                     shape_str(kernel.shape()));
  const int Co = kernel.shape()[1];
  if (bias.rank() != 1 || bias.shape()[0] != Co)
    throw ShapeError("upconv2x2: bias must be [" + std::to_string(Co) + "], got " +
                     shape_str(bias.shape()));
  std::vector<T> out(static_cast<size_t>(Co) * 4 * H * W);
  const T* xv = input.data();
  const T* kv = kernel.data();
  for (int co = 0; co < Co; ++co) {
    T* oplane = out.data() + static_cast<size_t>(co) * 4 * H * W;
    std::fill(oplane, oplane + static_cast<size_t>(4) * H * W, bias.data()[co]);
    for (int ci = 0; ci < Ci; ++ci)
      for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v) {
          const T k = kv[((static_cast<size_t>(ci) * Co + co) * 2 + u) * 2 + v];
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              oplane[(static_cast<size_t>(2 * h + u)) * 2 * W + 2 * w + v] +=
                  k * xv[(static_cast<size_t>(ci) * H + h) * W + w];
        }
  }
  const bool tracked = detail::track<T>({&input, &kernel, &bias});
  Tensor<T> y = Tensor<T>::make({Co, 2 * H, 2 * W}, std::move(out), tracked);
  detail::record<T>("upconv2x2", tracked, [input, kernel, bias, y, Ci, Co, H, W] {
    const auto& gy = y.grad();
    const T* kv2 = kernel.data();
    const T* xv2 = input.data();
    for (int ci = 0; ci < Ci; ++ci)
      for (int co = 0; co < Co; ++co)
        for (int u = 0; u < 2; ++u)
          for (int v = 0; v < 2; ++v) {
            const T k = kv2[((static_cast<size_t>(ci) * Co + co) * 2 + u) * 2 + v];
            T gkacc = 0;
            for (int h = 0; h < H; ++h)
              for (int w = 0; w < W; ++w) {
                const T g =
                    gy[(static_cast<size_t>(co) * 2 * H + 2 * h + u) * 2 * W + 2 * w + v];
                if (input.requires_grad())
                  input.grad()[(static_cast<size_t>(ci) * H + h) * W + w] += k * g;
                gkacc += g * xv2[(static_cast<size_t>(ci) * H + h) * W + w];
              }
            if (kernel.requires_grad())
              kernel.grad()[((static_cast<size_t>(ci) * Co + co) * 2 + u) * 2 + v] += gkacc;
          }
    if (bias.requires_grad())
      for (int co = 0; co < Co; ++co) {
        T acc = 0;
        const T* gyp = gy.data() + static_cast<size_t>(co) * 4 * H * W;
        for (long long i = 0; i < static_cast<long long>(4) * H * W; ++i) acc += gyp[i];
        bias.grad()[co] += acc;
      }
  });
  return y;
}

// Stacks a then b along the channel axis; backward splits.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[1] != b.shape()[1] ||
      a.shape()[2] != b.shape()[2])
    throw ShapeError("concat_channels: spatial extents differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const int C1 = a.shape()[0], C2 = b.shape()[0];
  const int H = a.shape()[1], W = a.shape()[2];
  std::vector<T> out;
  out.reserve(static_cast<size_t>(C1 + C2) * H * W);
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const bool tracked = detail::track<T>({&a, &b});
  Tensor<T> y = Tensor<T>::make({C1 + C2, H, W}, std::move(out), tracked);
  detail::record<T>("concat_channels", tracked, [a, b, y] {
    const auto& gy = y.grad();
    const size_t na = a.values().size();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < na; ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[na + i];
    }
  });
  return y;
}

// Channel range [c0, c1) of a [C,H,W] tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  if (x.rank() != 3)
    throw ShapeError("slice_channels: input must be [C,H,W], got " + shape_str(x.shape()));
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (c0 < 0 || c1 > C || c0 >= c1)
    throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") out of " + std::to_string(C) + " channels");
  const size_t plane = static_cast<size_t>(H) * W;
  std::vector<T> out(x.values().begin() + c0 * plane, x.values().begin() + c1 * plane);
  const bool tracked = detail::track<T>({&x});
  Tensor<T> y = Tensor<T>::make({c1 - c0, H, W}, std::move(out), tracked);
  detail::record<T>("slice_channels", tracked, [x, y, c0, plane] {
    const auto& gy = y.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < gy.size(); ++i) gx[c0 * plane + i] += gy[i];
  });
  return y;
}

// Zero-pads [C,H,W] on the bottom/right to (H2, W2).
template <typename T>
Tensor<T> pad2d_to(const Tensor<T>& x, int H2, int W2) {
  if (x.rank() != 3)
    throw ShapeError("pad2d_to: input must be [C,H,W], got " + shape_str(x.shape()));
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (H2 < H || W2 < W)
    throw ShapeError("pad2d_to: target smaller than input " + shape_str(x.shape()));
  if (H2 == H && W2 == W) return x;
  std::vector<T> out(static_cast<size_t>(C) * H2 * W2, T(0));
  const T* xv = x.data();
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      std::copy(xv + (static_cast<size_t>(c) * H + h) * W,
                xv + (static_cast<size_t>(c) * H + h) * W + W,
                out.data() + (static_cast<size_t>(c) * H2 + h) * W2);
  const bool tracked = detail::track<T>({&x});
  Tensor<T> y = Tensor<T>::make({C, H2, W2}, std::move(out), tracked);
  detail::record<T>("pad2d_to", tracked, [x, y, C, H, W, H2, W2] {
    const auto& gy = y.grad();
    auto& gx = x.grad();
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          gx[(static_cast<size_t>(c) * H + h) * W + w] +=
              gy[(static_cast<size_t>(c) * H2 + h) * W2 + w];
  });
  return y;
}

// Top-left crop of [C,H,W] to (H2, W2).
template <typename T>
Tensor<T> crop2d_to(const Tensor<T>& x, int H2, int W2) {
  if (x.rank() != 3)
    throw ShapeError("crop2d_to: input must be [C,H,W], got " + shape_str(x.shape()));
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (H2 > H || W2 > W)
    throw ShapeError("crop2d_to: target larger than input " + shape_str(x.shape()));
  if (H2 == H && W2 == W) return x;
  std::vector<T> out(static_cast<size_t>(C) * H2 * W2);
  const T* xv = x.data();
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H2; ++h)
      std::copy(xv + (static_cast<size_t>(c) * H + h) * W,
                xv + (static_cast<size_t>(c) * H + h) * W + W2,
                out.data() + (static_cast<size_t>(c) * H2 + h) * W2);
  const bool tracked = detail::track<T>({&x});
  Tensor<T> y = Tensor<T>::make({C, H2, W2}, std::move(out), tracked);
  detail::record<T>("crop2d_to", tracked, [x, y, C, H, W, H2, W2] {
    const auto& gy = y.grad();
    auto& gx = x.grad();
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H2; ++h)
        for (int w = 0; w < W2; ++w)
          gx[(static_cast<size_t>(c) * H + h) * W + w] +=
              gy[(static_cast<size_t>(c) * H2 + h) * W2 + w];
  });
  return y;
}

// Shape-preserving 2x2x2 moving average over an [A,B,C] volume, stride 1.
// The window anchored at (i,j,k) averages the eight voxels at offsets
// {0,1}^3 with replicate padding at the far faces, so constant fields stay
// constant.
template <typename T>
Tensor<T> avgpool3d_same(const Tensor<T>& input) {
  if (input.rank() != 3)
    throw ShapeError("avgpool3d_same: input must be [A,B,C], got " + shape_str(input.shape()));
  const int A = input.shape()[0], B = input.shape()[1], C = input.shape()[2];
  std::vector<T> out(static_cast<size_t>(A) * B * C, T(0));
  const T* xv = input.data();
  const T eighth = T(1) / T(8);
  parallel_for(A, [&](long long a0, long long a1) {
    for (long long i = a0; i < a1; ++i) {
      const int i2 = i + 1 < A ? static_cast<int>(i) + 1 : A - 1;
      for (int j = 0; j < B; ++j) {
        const int j2 = j + 1 < B ? j + 1 : B - 1;
        const T* r00 = xv + (static_cast<size_t>(i) * B + j) * C;
        const T* r01 = xv + (static_cast<size_t>(i) * B + j2) * C;
        const T* r10 = xv + (static_cast<size_t>(i2) * B + j) * C;
        const T* r11 = xv + (static_cast<size_t>(i2) * B + j2) * C;
        T* orow = out.data() + (static_cast<size_t>(i) * B + j) * C;
        for (int k = 0; k < C; ++k) {
          const int k2 = k + 1 < C ? k + 1 : C - 1;
          orow[k] = eighth * (r00[k] + r00[k2] + r01[k] + r01[k2] + r10[k] + r10[k2] +
                              r11[k] + r11[k2]);
        }
      }
    }
  });
  const bool tracked = detail::track<T>({&input});
  Tensor<T> y = Tensor<T>::make({A, B, C}, std::move(out), tracked);
  detail::record<T>("avgpool3d_same", tracked, [input, y, A, B, C, eighth] {
    const auto& gy = y.grad();
    auto& gx = input.grad();
    for (int i = 0; i < A; ++i) {
      const int i2 = i + 1 < A ? i + 1 : A - 1;
      for (int j = 0; j < B; ++j) {
        const int j2 = j + 1 < B ? j + 1 : B - 1;
        for (int k = 0; k < C; ++k) {
          const int k2 = k + 1 < C ? k + 1 : C - 1;
          const T g = eighth * gy[(static_cast<size_t>(i) * B + j) * C + k];
          gx[(static_cast<size_t>(i) * B + j) * C + k] += g;
          gx[(static_cast<size_t>(i) * B + j) * C + k2] += g;
          gx[(static_cast<size_t>(i) * B + j2) * C + k] += g;
          gx[(static_cast<size_t>(i) * B + j2) * C + k2] += g;
          gx[(static_cast<size_t>(i2) * B + j) * C + k] += g;
          gx[(static_cast<size_t>(i2) * B + j) * C + k2] += g;
          gx[(static_cast<size_t>(i2) * B + j2) * C + k] += g;
          gx[(static_cast<size_t>(i2) * B + j2) * C + k2] += g;
        }
      }
    }
  });
  return y;
}

}  // namespace mipseg
