#pragma once

#include <cmath>
#include <string>

#include "mmdt/ops.hpp"
#include "mmdt/params.hpp"

namespace mmdt::nn {

inline constexpr double kLeakySlope = 0.2;

/// He-normal standard deviation for a leaky-ReLU layer with the given fan-in.
inline double he_std(Index fan_in, double slope = kLeakySlope) {
  return std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
}

template <typename S>
struct Conv2d {
  Var<S> weight, bias;
  int stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(ParamStore<S>& store, const std::string& name, Index cin, Index cout, int k, int stride_,
         Rng& rng, bool with_bias = true, double gain = 1.0)
      : stride(stride_), pad(k / 2) {
    weight = store.add_param(name + ".weight",
                             normal_tensor<S>({cout, cin, k, k}, gain * he_std(cin * k * k), rng));
    if (with_bias) bias = store.add_param(name + ".bias", Tensor<S>({cout}));
  }
  Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

/// 3x3 stride-2 transposed convolution doubling the spatial side.
template <typename S>
struct ConvTranspose2d {
  Var<S> weight, bias;
  int stride = 2, pad = 1, out_pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore<S>& store, const std::string& name, Index cin, Index cout, Rng& rng) {
    // Each output pixel of a stride-2 3x3 transposed conv sees ~cin*9/4 taps.
    weight = store.add_param(name + ".weight",
                             normal_tensor<S>({cin, cout, 3, 3}, he_std(cin * 9 / 4), rng));
    bias = store.add_param(name + ".bias", Tensor<S>({cout}));
  }
  Var<S> operator()(const Var<S>& x) const {
    return conv_transpose2d(x, weight, bias, stride, pad, out_pad);
  }
};

template <typename S>
struct BatchNorm2d {
  Var<S> gamma, beta, running_mean, running_var;

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<S>& store, const std::string& name, Index channels) {
    gamma = store.add_param(name + ".gamma", Tensor<S>({channels}, S(1)));
    beta = store.add_param(name + ".beta", Tensor<S>({channels}));
    running_mean = store.add_buffer(name + ".running_mean", Tensor<S>({channels}));
    running_var = store.add_buffer(name + ".running_var", Tensor<S>({channels}, S(1)));
  }
  Var<S> operator()(const Var<S>& x, NormMode mode) const {
    auto rm = running_mean, rv = running_var;
    return batch_norm2d(x, gamma, beta, rm.mutable_value(), rv.mutable_value(), mode);
  }
};

/// Conv -> BatchNorm -> LeakyReLU.
template <typename S>
struct ConvBnAct {
  Conv2d<S> conv;
  BatchNorm2d<S> bn;

  ConvBnAct() = default;
  ConvBnAct(ParamStore<S>& store, const std::string& name, Index cin, Index cout, int stride,
            Rng& rng)
      : conv(store, name + ".conv", cin, cout, 3, stride, rng, false), bn(store, name + ".bn", cout) {}
  Var<S> operator()(const Var<S>& x, NormMode mode) const {
    return leaky_relu(bn(conv(x), mode), S(kLeakySlope));
  }
};

template <typename S>
struct Linear {
  Var<S> weight, bias;

  Linear() = default;
  Linear(ParamStore<S>& store, const std::string& name, Index din, Index dout, Rng& rng,
         double stddev = 0.02) {
    weight = store.add_param(name + ".weight", trunc_normal_tensor<S>({dout, din}, stddev, rng));
    bias = store.add_param(name + ".bias", Tensor<S>({dout}));
  }
  Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }
};

template <typename S>
struct LayerNorm {
  Var<S> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<S>& store, const std::string& name, Index dim) {
    gamma = store.add_param(name + ".gamma", Tensor<S>({dim}, S(1)));
    beta = store.add_param(name + ".beta", Tensor<S>({dim}));
  }
  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta); }
};

}  // namespace mmdt::nn
