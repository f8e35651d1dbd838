#pragma once

#include <random>

#include "r2b/autograd.hpp"

namespace r2b {

// Data-driven channel re-scaling: a squeeze-style bottleneck that maps the
// pre-binarization activations to per-(sample, channel) factors in (0,1).
// Bottleneck width is ceil(C/r).
template <typename T = float>
struct GatingParams {
  NodeP<T> w1, b1;      // C -> Cb
  NodeP<T> slope;       // PReLU in the bottleneck
  NodeP<T> w2, b2;      // Cb -> O
  int in_channels = 0;
  int out_channels = 0;
  int r = 8;

  static GatingParams init(int C, int O, int r, std::mt19937& rng) {
    detail::require(r >= 1 && C >= 1 && O >= 1, "GatingParams: invalid dimensions");
    GatingParams g;
    g.in_channels = C;
    g.out_channels = O;
    g.r = r;
    const int Cb = std::max(1, (C + r - 1) / r);
    auto uniform_fan_in = [&rng](int64_t rows, int64_t cols) {
      Ten<T> w({rows, cols});
      const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cols)));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(dist(rng));
      return w;
    };
    g.w1 = make_param(uniform_fan_in(Cb, C));
    g.b1 = make_param(Ten<T>({Cb}));
    g.slope = make_param(Ten<T>({1}, T(0.25)));
    g.w2 = make_param(uniform_fan_in(O, Cb));
    g.b2 = make_param(Ten<T>({O}));  // zero: training starts at gate ~ 0.5
    return g;
  }

  std::vector<NodeP<T>> params() const { return {w1, b1, slope, w2, b2}; }
};

// gate(x) = sigmoid(W2 . prelu(W1 . gap(x) + b1) + b2), shape [N, O].
template <typename T>
NodeP<T> gate(const NodeP<T>& pre_bin_activations, const GatingParams<T>& p) {
  detail::require(pre_bin_activations->value.dim(1) == p.in_channels,
                  "gate: input has C=" + std::to_string(pre_bin_activations->value.dim(1)) +
                      " but params expect C=" + std::to_string(p.in_channels));
  auto pooled = ag::global_avg_pool(pre_bin_activations);
  auto h = ag::prelu(ag::linear(pooled, p.w1, p.b1), p.slope);
  return ag::sigmoid(ag::linear(h, p.w2, p.b2));
}

// Non-graph forward for frozen parameters.
template <typename T>
Ten<T> gate_forward(const Ten<T>& pre_bin_activations, const GatingParams<T>& p) {
  return gate(make_constant(pre_bin_activations), p)->value;
}

// conv_out[n,o,:,:] * gamma[o] * g[n,o].
template <typename T>
Ten<T> rescale(const Ten<T>& conv_out, const std::vector<T>& gamma, const Ten<T>& g) {
  detail::require(conv_out.rank() == 4, "rescale: expected NCHW conv output");
  const int64_t N = conv_out.dim(0), O = conv_out.dim(1);
  detail::require(static_cast<int64_t>(gamma.size()) == O,
                  "rescale: gamma length does not match O=" + std::to_string(O));
  detail::require(g.rank() == 2 && g.dim(0) == N && g.dim(1) == O,
                  "rescale: gate shape " + Ten<T>::shape_str(g.shape) + " does not match conv");
  Ten<T> out(conv_out.shape);
  const int64_t inner = conv_out.dim(2) * conv_out.dim(3);
  for (int64_t i = 0; i < out.numel(); ++i) {
    const int64_t nc = i / inner;
    out[i] = conv_out[i] * gamma[static_cast<size_t>(nc % O)] * g[nc];
  }
  return out;
}

}  // namespace r2b
