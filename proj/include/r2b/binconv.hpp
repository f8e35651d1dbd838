#pragma once

#include <bit>
#include <cstdint>

#include "r2b/tensor.hpp"

namespace r2b {

// Sign tensors packed along the channel axis, one bit per value (+1 -> 1,
// -1 -> 0), 64 channels per word. Channel counts that do not fill the last
// word leave its surplus lanes zero; valid_mask marks the real lanes.
struct BitTensor {
  std::vector<int64_t> shape;          // [N,C,H,W] or [O,C,k,k]
  std::vector<uint64_t> words;         // [outer..., spatial..., word] with C packed
  std::vector<uint64_t> valid_mask;    // one mask per word slot along C
  int64_t channels = 0;
  int64_t words_per_pixel = 0;

  static constexpr int64_t kWordBits = 64;

  int64_t pixels() const {
    int64_t p = 1;
    for (size_t i = 0; i < shape.size(); ++i)
      if (i != 1) p *= shape[i];
    return p;
  }
};

namespace detail {
inline int popcount64(uint64_t w) { return std::popcount(w); }
}  // namespace detail

// Pack a strictly ±1 tensor. Channel axis is axis 1.
template <typename T>
BitTensor pack(const Ten<T>& t) {
  detail::require(t.rank() == 4, "pack: expected a 4-d sign tensor");
  for (int64_t i = 0; i < t.numel(); ++i)
    detail::require(t[i] == T(1) || t[i] == T(-1),
                    "pack: element " + std::to_string(i) + " is not +1/-1");
  BitTensor bt;
  bt.shape = t.shape;
  bt.channels = t.dim(1);
  bt.words_per_pixel = (bt.channels + BitTensor::kWordBits - 1) / BitTensor::kWordBits;
  const int64_t n_outer = t.dim(0);
  const int64_t H = t.dim(2), W = t.dim(3);
  bt.words.assign(static_cast<size_t>(n_outer * H * W * bt.words_per_pixel), 0);
  bt.valid_mask.assign(static_cast<size_t>(bt.words_per_pixel), 0);
  for (int64_t c = 0; c < bt.channels; ++c)
    bt.valid_mask[static_cast<size_t>(c / BitTensor::kWordBits)] |=
        uint64_t(1) << (c % BitTensor::kWordBits);
  for (int64_t n = 0; n < n_outer; ++n)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        const int64_t base = ((n * H + h) * W + w) * bt.words_per_pixel;
        for (int64_t c = 0; c < bt.channels; ++c)
          if (t.at4(n, c, h, w) > 0)
            bt.words[static_cast<size_t>(base + c / BitTensor::kWordBits)] |=
                uint64_t(1) << (c % BitTensor::kWordBits);
      }
  return bt;
}

template <typename T = float>
Ten<T> unpack(const BitTensor& bt) {
  Ten<T> t(bt.shape);
  const int64_t n_outer = bt.shape[0];
  const int64_t H = bt.shape[2], W = bt.shape[3];
  for (int64_t n = 0; n < n_outer; ++n)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        const int64_t base = ((n * H + h) * W + w) * bt.words_per_pixel;
        for (int64_t c = 0; c < bt.channels; ++c) {
          const uint64_t bit =
              bt.words[static_cast<size_t>(base + c / BitTensor::kWordBits)] >>
              (c % BitTensor::kWordBits) & 1;
          t.at4(n, c, h, w) = bit ? T(1) : T(-1);
        }
      }
  return t;
}

// ±1 dot product over packed words: 2*popcount(xnor & mask) - valid_count.
inline int64_t xnor_popcount_dot(const uint64_t* a, const uint64_t* b, const uint64_t* mask,
                                 int64_t n_words, int64_t valid_count) {
  int64_t pop = 0;
  for (int64_t i = 0; i < n_words; ++i) pop += detail::popcount64(~(a[i] ^ b[i]) & mask[i]);
  return 2 * pop - valid_count;
}

// Binary convolution over packed sign tensors. Spatially out-of-bounds taps
// are skipped entirely (excluded from both popcount and valid count), which
// reproduces zero-padded real convolution of the unpacked ±1 tensors exactly.
template <typename T = float>
Ten<T> binary_conv2d(const BitTensor& input, const BitTensor& weight, int64_t stride,
                     int64_t pad) {
  detail::require(input.channels == weight.channels,
                  "binary_conv2d: channel mismatch, input C=" + std::to_string(input.channels) +
                      " weight C=" + std::to_string(weight.channels));
  const int64_t N = input.shape[0], C = input.channels, H = input.shape[2], W = input.shape[3];
  const int64_t O = weight.shape[0], k = weight.shape[2];
  detail::require(k == weight.shape[3], "binary_conv2d: only square kernels supported");
  const int64_t Ho = conv_out_extent(H, k, stride, pad);
  const int64_t Wo = conv_out_extent(W, k, stride, pad);
  detail::require(Ho >= 1 && Wo >= 1, "binary_conv2d: kernel larger than padded input");
  const int64_t wp = input.words_per_pixel;

  Ten<T> out({N, O, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t x = 0; x < Wo; ++x) {
          int64_t pop = 0, valid = 0;
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = y * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = x * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              const uint64_t* a = &input.words[static_cast<size_t>(((n * H + iy) * W + ix) * wp)];
              const uint64_t* b = &weight.words[static_cast<size_t>(((o * k + ky) * k + kx) * wp)];
              for (int64_t i = 0; i < wp; ++i)
                pop += detail::popcount64(~(a[i] ^ b[i]) & input.valid_mask[static_cast<size_t>(i)]);
              valid += C;
            }
          }
          out.at4(n, o, y, x) = static_cast<T>(2 * pop - valid);
        }
  return out;
}

// Learned per-output-channel factors (Γ) plus the optional analytic α used
// only by the XNOR-style baseline.
template <typename T = float>
struct ScaleFactors {
  std::vector<T> gamma;
  std::vector<T> alpha_analytic;
};

template <typename T>
Ten<T> scale_output(const Ten<T>& conv_out, const std::vector<T>& gamma) {
  detail::require(conv_out.rank() == 4, "scale_output: expected NCHW");
  detail::require(static_cast<int64_t>(gamma.size()) == conv_out.dim(1),
                  "scale_output: gamma length " + std::to_string(gamma.size()) +
                      " does not match O=" + std::to_string(conv_out.dim(1)));
  Ten<T> out(conv_out.shape);
  const int64_t inner = conv_out.dim(2) * conv_out.dim(3);
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = conv_out[i] * gamma[static_cast<size_t>((i / inner) % conv_out.dim(1))];
  return out;
}

// α_o = mean |W_o| over the o-th filter.
template <typename T>
std::vector<T> analytic_alpha(const Ten<T>& weight) {
  detail::require(weight.rank() == 4, "analytic_alpha: expected OCkk weights");
  const int64_t O = weight.dim(0);
  const int64_t per = weight.dim(1) * weight.dim(2) * weight.dim(3);
  std::vector<T> alpha(static_cast<size_t>(O));
  for (int64_t o = 0; o < O; ++o) {
    double s = 0;
    for (int64_t i = 0; i < per; ++i) s += std::abs(weight[o * per + i]);
    alpha[static_cast<size_t>(o)] = static_cast<T>(s / per);
  }
  return alpha;
}

}  // namespace r2b
