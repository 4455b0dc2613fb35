#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mipseg/nn.hpp"
#include "mipseg/rng.hpp"
#include "mipseg/tensor.hpp"

namespace mipseg {

struct UNetConfig {
  int depth = 3;          // downsampling steps
  int base_channels = 8;  // channels of the first block; doubles per level
  bool learnable_upsample = false;  // 2x2 up-convolution instead of nearest

  void validate() const {
    if (depth < 1) throw ConfigError("unet depth must be >= 1");
    if (base_channels < 1) throw ConfigError("unet base_channels must be >= 1");
  }
};

template <typename T>
struct ConvParams {
  Tensor<T> kernel;
  Tensor<T> bias;
};

template <typename T>
struct UNetModel {
  UNetConfig cfg;
  std::vector<std::array<ConvParams<T>, 2>> down;
  std::array<ConvParams<T>, 2> bottleneck;
  struct UpBlock {
    ConvParams<T> upconv;  // present only with learnable_upsample
    std::array<ConvParams<T>, 2> convs;
  };
  std::vector<UpBlock> up;  // index 0 is the deepest level
  ConvParams<T> head;       // 1x1 conv to one channel

  template <class Fn>
  void for_each_param(Fn&& fn) const {
    auto visit = [&](const std::string& name, const ConvParams<T>& p) {
      fn(name + ".kernel", p.kernel);
      fn(name + ".bias", p.bias);
    };
    for (size_t i = 0; i < down.size(); ++i) {
      visit("unet.down" + std::to_string(i) + ".conv0", down[i][0]);
      visit("unet.down" + std::to_string(i) + ".conv1", down[i][1]);
    }
    visit("unet.bottleneck.conv0", bottleneck[0]);
    visit("unet.bottleneck.conv1", bottleneck[1]);
    for (size_t i = 0; i < up.size(); ++i) {
      const std::string lvl = "unet.up" + std::to_string(i);
      if (cfg.learnable_upsample) visit(lvl + ".upconv", up[i].upconv);
      visit(lvl + ".conv0", up[i].convs[0]);
      visit(lvl + ".conv1", up[i].convs[1]);
    }
    visit("unet.head", head);
  }

  std::vector<Tensor<T>> params() const {
    std::vector<Tensor<T>> out;
    for_each_param([&](const std::string&, const Tensor<T>& t) { out.push_back(t); });
    return out;
  }
};

// Closed-form parameter count for the configured architecture.
inline long long param_count(const UNetConfig& cfg, int in_channels = 1) {
  cfg.validate();
  long long n = 0;
  auto conv = [&n](long long co, long long ci, long long k) { n += co * ci * k * k + co; };
  long long ci = in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    const long long co = static_cast<long long>(cfg.base_channels) << i;
    conv(co, ci, 3);
    conv(co, co, 3);
    ci = co;
  }
  const long long cb = static_cast<long long>(cfg.base_channels) << cfg.depth;
  conv(cb, ci, 3);
  conv(cb, cb, 3);
  ci = cb;
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const long long co = static_cast<long long>(cfg.base_channels) << i;
    long long cat;
    if (cfg.learnable_upsample) {
      n += ci * co * 4 + co;
      cat = co + co;
    } else {
      cat = ci + co;
    }
    conv(co, cat, 3);
    conv(co, co, 3);
    ci = co;
  }
  n += ci + 1;  // 1x1 head to one channel
  return n;
}

// Same architecture with 3x3x3 convolutions and 3D pooling/upsampling; the
// volumetric variant is never built here, only counted.
inline long long param_count_unet3d(int depth, int base_channels, int in_channels = 1) {
  if (depth < 1 || base_channels < 1) throw ConfigError("unet3d count needs depth,base >= 1");
  long long n = 0;
  auto conv = [&n](long long co, long long ci) { n += co * ci * 27 + co; };
  long long ci = in_channels;
  for (int i = 0; i < depth; ++i) {
    const long long co = static_cast<long long>(base_channels) << i;
    conv(co, ci);
    conv(co, co);
    ci = co;
  }
  const long long cb = static_cast<long long>(base_channels) << depth;
  conv(cb, ci);
  conv(cb, cb);
  ci = cb;
  for (int i = depth - 1; i >= 0; --i) {
    const long long co = static_cast<long long>(base_channels) << i;
    conv(co, ci + co);
    conv(co, co);
    ci = co;
  }
  n += ci + 1;
  return n;
}

namespace detail {

template <typename T>
ConvParams<T> init_conv(Rng& rng, int co, int ci, int kh, int kw) {
  const double bound = std::sqrt(6.0 / (static_cast<double>(ci) * kh * kw));
  std::vector<T> k(static_cast<size_t>(co) * ci * kh * kw);
  for (auto& v : k) v = static_cast<T>(rng.uniform(-bound, bound));
  ConvParams<T> p;
  p.kernel = Tensor<T>::param({co, ci, kh, kw}, std::move(k));
  p.bias = Tensor<T>::param({co}, std::vector<T>(co, T(0)));
  return p;
}

template <typename T>
ConvParams<T> init_upconv(Rng& rng, int ci, int co) {
  const double bound = std::sqrt(6.0 / (static_cast<double>(ci) * 4));
  std::vector<T> k(static_cast<size_t>(ci) * co * 4);
  for (auto& v : k) v = static_cast<T>(rng.uniform(-bound, bound));
  ConvParams<T> p;
  p.kernel = Tensor<T>::param({ci, co, 2, 2}, std::move(k));
  p.bias = Tensor<T>::param({co}, std::vector<T>(co, T(0)));
  return p;
}

}  // namespace detail

// Two 3x3 same-padded conv+ReLU per block, 2x2 maxpool per down step,
// upsample + skip concat + two convs per up step, 1x1 conv + sigmoid head.
// Weights drawn from a fan-in-scaled uniform law, reproducible from the seed.
template <typename T>
UNetModel<T> build_unet(const UNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  UNetModel<T> m;
  m.cfg = cfg;
  int ci = 1;
  for (int i = 0; i < cfg.depth; ++i) {
    const int co = cfg.base_channels << i;
    m.down.push_back({detail::init_conv<T>(rng, co, ci, 3, 3),
                      detail::init_conv<T>(rng, co, co, 3, 3)});
    ci = co;
  }
  const int cb = cfg.base_channels << cfg.depth;
  m.bottleneck = {detail::init_conv<T>(rng, cb, ci, 3, 3),
                  detail::init_conv<T>(rng, cb, cb, 3, 3)};
  ci = cb;
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int co = cfg.base_channels << i;
    typename UNetModel<T>::UpBlock blk;
    int cat;
    if (cfg.learnable_upsample) {
      blk.upconv = detail::init_upconv<T>(rng, ci, co);
      cat = co + co;
    } else {
      cat = ci + co;
    }
    blk.convs = {detail::init_conv<T>(rng, co, cat, 3, 3),
                 detail::init_conv<T>(rng, co, co, 3, 3)};
    m.up.push_back(std::move(blk));
    ci = co;
  }
  m.head = detail::init_conv<T>(rng, 1, ci, 1, 1);
  return m;
}

// U: [H,W] -> (0,1)^[H,W]. Odd extents are zero-padded up to a multiple of
// 2^depth internally and cropped on output.
template <typename T>
Tensor<T> unet_forward(const UNetModel<T>& m, const Tensor<T>& image) {
  if (image.rank() != 2)
    throw ShapeError("unet_forward: image must be [H,W], got " + shape_str(image.shape()));
  const int H = image.shape()[0], W = image.shape()[1];
  const int mult = 1 << m.cfg.depth;
  const int H2 = ((H + mult - 1) / mult) * mult;
  const int W2 = ((W + mult - 1) / mult) * mult;
  Tensor<T> x = pad2d_to(reshape(image, {1, H, W}), H2, W2);
  std::vector<Tensor<T>> skips;
  skips.reserve(m.cfg.depth);
  for (int i = 0; i < m.cfg.depth; ++i) {
    x = relu(conv2d(x, m.down[i][0].kernel, m.down[i][0].bias, Padding::Same));
    x = relu(conv2d(x, m.down[i][1].kernel, m.down[i][1].bias, Padding::Same));
    skips.push_back(x);
    x = maxpool2d(x);
  }
  x = relu(conv2d(x, m.bottleneck[0].kernel, m.bottleneck[0].bias, Padding::Same));
  x = relu(conv2d(x, m.bottleneck[1].kernel, m.bottleneck[1].bias, Padding::Same));
  for (int i = 0; i < m.cfg.depth; ++i) {
    const auto& blk = m.up[i];
    if (m.cfg.learnable_upsample)
      x = upconv2x2(x, blk.upconv.kernel, blk.upconv.bias);
    else
      x = upsample2d_nearest(x);
    x = concat_channels(x, skips[m.cfg.depth - 1 - i]);
    x = relu(conv2d(x, blk.convs[0].kernel, blk.convs[0].bias, Padding::Same));
    x = relu(conv2d(x, blk.convs[1].kernel, blk.convs[1].bias, Padding::Same));
  }
  x = sigmoid(conv2d(x, m.head.kernel, m.head.bias, Padding::Same));
  x = crop2d_to(x, H, W);
  return reshape(x, {H, W});
}

}  // namespace mipseg
