#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace r2b {

// Dense row-major N-d tensor. Scalar type is a template parameter so the
// training path runs in float while oracles run in double.
template <typename T = float>
struct Ten {
  std::vector<int64_t> shape;
  std::vector<T> data;

  Ten() = default;
  explicit Ten(std::vector<int64_t> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }
  Ten(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw std::invalid_argument("Ten: data length does not match shape");
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t e : s) {
      if (e < 0) throw std::invalid_argument("Ten: negative extent");
      n *= e;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape.size()); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // 4-d accessors (NCHW); bounds unchecked in release paths.
  T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  const T& at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

  bool same_shape(const Ten& o) const { return shape == o.shape; }

  template <typename U>
  Ten<U> cast() const {
    Ten<U> r;
    r.shape = shape;
    r.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) r.data[i] = static_cast<U>(data[i]);
    return r;
  }

  static std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
  }
};

using Tensor = Ten<float>;

namespace detail {
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}
}  // namespace detail

// Output spatial extent of a zero-padded cross-correlation.
inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Reference real-valued convolution (cross-correlation, zero padding).
// Accumulation happens in the scalar type T; the double instantiation is the
// oracle used by the binary kernel equivalence tests.
template <typename T>
Ten<T> conv2d_ref(const Ten<T>& input, const Ten<T>& weight, int64_t stride, int64_t pad) {
  detail::require(input.rank() == 4 && weight.rank() == 4,
                  "conv2d_ref: expected 4-d input " + Ten<T>::shape_str(input.shape) +
                      " and weight " + Ten<T>::shape_str(weight.shape));
  detail::require(input.dim(1) == weight.dim(1),
                  "conv2d_ref: channel mismatch, input " + Ten<T>::shape_str(input.shape) +
                      " vs weight " + Ten<T>::shape_str(weight.shape));
  detail::require(stride >= 1 && pad >= 0, "conv2d_ref: stride must be >= 1 and pad >= 0");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t O = weight.dim(0), k = weight.dim(2), kw = weight.dim(3);
  detail::require(k == kw, "conv2d_ref: only square kernels supported");
  const int64_t Ho = conv_out_extent(H, k, stride, pad);
  const int64_t Wo = conv_out_extent(W, k, stride, pad);
  detail::require(Ho >= 1 && Wo >= 1, "conv2d_ref: kernel larger than padded input");

  Ten<T> out({N, O, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t x = 0; x < Wo; ++x) {
          T acc = 0;
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = y * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = x * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              for (int64_t c = 0; c < C; ++c)
                acc += input.at4(n, c, iy, ix) * weight.at4(o, c, ky, kx);
            }
          }
          out.at4(n, o, y, x) = acc;
        }
  return out;
}

// im2col + matmul convolution used by the training path. Same contract as
// conv2d_ref; summation order per output element is fixed (c, ky, kx major)
// so results are deterministic.
template <typename T>
void im2col(const Ten<T>& input, int64_t n, int64_t k, int64_t stride, int64_t pad,
            int64_t Ho, int64_t Wo, std::vector<T>& col) {
  const int64_t C = input.dim(1), H = input.dim(2), W = input.dim(3);
  col.assign(static_cast<size_t>(C * k * k * Ho * Wo), T(0));
  const int64_t plane = Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((c * k + ky) * k + kx) * plane;
        for (int64_t y = 0; y < Ho; ++y) {
          const int64_t iy = y * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          const T* src = &input.at4(n, c, iy, 0);
          for (int64_t x = 0; x < Wo; ++x) {
            const int64_t ix = x * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[y * Wo + x] = src[ix];
          }
        }
      }
}

template <typename T>
Ten<T> conv2d_fast(const Ten<T>& input, const Ten<T>& weight, int64_t stride, int64_t pad) {
  detail::require(input.rank() == 4 && weight.rank() == 4, "conv2d_fast: expected 4-d operands");
  detail::require(input.dim(1) == weight.dim(1), "conv2d_fast: channel mismatch");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t O = weight.dim(0), k = weight.dim(2);
  const int64_t Ho = conv_out_extent(H, k, stride, pad);
  const int64_t Wo = conv_out_extent(W, k, stride, pad);
  detail::require(Ho >= 1 && Wo >= 1, "conv2d_fast: kernel larger than padded input");
  const int64_t K = C * k * k, P = Ho * Wo;
  Ten<T> out({N, O, Ho, Wo});
  std::vector<T> col;
  for (int64_t n = 0; n < N; ++n) {
    im2col(input, n, k, stride, pad, Ho, Wo, col);
    for (int64_t o = 0; o < O; ++o) {
      const T* wrow = weight.data.data() + o * K;
      T* orow = &out.at4(n, o, 0, 0);
      for (int64_t kk = 0; kk < K; ++kk) {
        const T wv = wrow[kk];
        if (wv == T(0)) continue;
        const T* crow = col.data() + kk * P;
        for (int64_t p = 0; p < P; ++p) orow[p] += wv * crow[p];
      }
    }
  }
  return out;
}

template <typename T>
struct BatchNormParams {
  std::vector<T> gamma, beta;          // affine, length C
  std::vector<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  explicit BatchNormParams(int64_t C = 0)
      : gamma(static_cast<size_t>(C), T(1)),
        beta(static_cast<size_t>(C), T(0)),
        running_mean(static_cast<size_t>(C), T(0)),
        running_var(static_cast<size_t>(C), T(1)) {}
};

enum class BNMode { Train, Eval };

// Standard batch normalization over NCHW. In train mode running stats are
// updated in place with momentum (unbiased variance in the running estimate,
// biased in the normalization, matching common framework semantics).
template <typename T>
Ten<T> batchnorm2d(const Ten<T>& input, BatchNormParams<T>& params, BNMode mode,
                   std::vector<T>* saved_mean = nullptr, std::vector<T>* saved_invstd = nullptr) {
  detail::require(input.rank() == 4, "batchnorm2d: expected NCHW input");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  detail::require(static_cast<int64_t>(params.gamma.size()) == C,
                  "batchnorm2d: parameter length " + std::to_string(params.gamma.size()) +
                      " does not match C=" + std::to_string(C));
  const int64_t count = N * H * W;
  Ten<T> out(input.shape);
  for (int64_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == BNMode::Train) {
      double m = 0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) m += input.at4(n, c, h, w);
      m /= static_cast<double>(count);
      double v = 0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) {
            const double d = input.at4(n, c, h, w) - m;
            v += d * d;
          }
      v /= static_cast<double>(count);
      mean = static_cast<T>(m);
      var = static_cast<T>(v);
      const double unbiased = count > 1 ? v * count / (count - 1) : v;
      params.running_mean[c] = static_cast<T>((1 - params.momentum) * params.running_mean[c] +
                                              params.momentum * m);
      params.running_var[c] = static_cast<T>((1 - params.momentum) * params.running_var[c] +
                                             params.momentum * unbiased);
    } else {
      mean = params.running_mean[c];
      var = params.running_var[c];
    }
    const T invstd = T(1) / std::sqrt(var + params.eps);
    if (saved_mean) (*saved_mean)[c] = mean;
    if (saved_invstd) (*saved_invstd)[c] = invstd;
    const T g = params.gamma[c], b = params.beta[c];
    for (int64_t n = 0; n < N; ++n)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
          out.at4(n, c, h, w) = (input.at4(n, c, h, w) - mean) * invstd * g + b;
  }
  return out;
}

// PReLU with per-channel or shared slope.
template <typename T>
Ten<T> prelu(const Ten<T>& input, const std::vector<T>& slope) {
  const int64_t C = input.rank() >= 2 ? input.dim(1) : 1;
  detail::require(slope.size() == 1 || static_cast<int64_t>(slope.size()) == C,
                  "prelu: slope length must be 1 or C");
  Ten<T> out(input.shape);
  const int64_t inner = input.rank() == 4 ? input.dim(2) * input.dim(3) : 1;
  for (int64_t i = 0; i < input.numel(); ++i) {
    const int64_t c = slope.size() == 1 ? 0 : (i / inner) % C;
    const T x = input[i];
    out[i] = x >= 0 ? x : slope[static_cast<size_t>(c)] * x;
  }
  return out;
}

// Mean over spatial dims: [N,C,H,W] -> [N,C].
template <typename T>
Ten<T> global_avg_pool(const Ten<T>& input) {
  detail::require(input.rank() == 4, "global_avg_pool: expected NCHW input");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  detail::require(H >= 1 && W >= 1, "global_avg_pool: empty spatial extent");
  Ten<T> out({N, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      T s = 0;
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) s += input.at4(n, c, h, w);
      out.at2(n, c) = s / static_cast<T>(H * W);
    }
  return out;
}

// x . W^T + b over [N,D] x [E,D].
template <typename T>
Ten<T> linear(const Ten<T>& input, const Ten<T>& weight, const std::vector<T>& bias) {
  detail::require(input.rank() == 2 && weight.rank() == 2, "linear: expected 2-d operands");
  detail::require(input.dim(1) == weight.dim(1),
                  "linear: inner dims disagree, " + Ten<T>::shape_str(input.shape) + " vs " +
                      Ten<T>::shape_str(weight.shape));
  const int64_t N = input.dim(0), D = input.dim(1), E = weight.dim(0);
  detail::require(bias.empty() || static_cast<int64_t>(bias.size()) == E,
                  "linear: bias length mismatch");
  Ten<T> out({N, E});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t e = 0; e < E; ++e) {
      T acc = bias.empty() ? T(0) : bias[static_cast<size_t>(e)];
      for (int64_t d = 0; d < D; ++d) acc += input.at2(n, d) * weight.at2(e, d);
      out.at2(n, e) = acc;
    }
  return out;
}

// Row-wise softmax, numerically stabilized.
template <typename T>
Ten<T> softmax(const Ten<T>& logits) {
  detail::require(logits.rank() == 2, "softmax: expected [N,K]");
  const int64_t N = logits.dim(0), K = logits.dim(1);
  Ten<T> out(logits.shape);
  for (int64_t n = 0; n < N; ++n) {
    T mx = logits.at2(n, 0);
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, logits.at2(n, k));
    T z = 0;
    for (int64_t k = 0; k < K; ++k) {
      const T e = std::exp(logits.at2(n, k) - mx);
      out.at2(n, k) = e;
      z += e;
    }
    for (int64_t k = 0; k < K; ++k) out.at2(n, k) /= z;
  }
  return out;
}

// Mean cross-entropy against hard class indices.
template <typename T>
T softmax_cross_entropy(const Ten<T>& logits, const std::vector<int>& labels) {
  detail::require(logits.rank() == 2, "softmax_cross_entropy: expected [N,K]");
  const int64_t N = logits.dim(0), K = logits.dim(1);
  detail::require(K >= 2, "softmax_cross_entropy: need K >= 2");
  detail::require(static_cast<int64_t>(labels.size()) == N,
                  "softmax_cross_entropy: label count mismatch");
  const Ten<T> p = softmax(logits);
  double loss = 0;
  for (int64_t n = 0; n < N; ++n) {
    const int y = labels[static_cast<size_t>(n)];
    detail::require(y >= 0 && y < K, "softmax_cross_entropy: label index out of range");
    loss -= std::log(static_cast<double>(p.at2(n, y)) + 1e-300);
  }
  return static_cast<T>(loss / static_cast<double>(N));
}

// Soft-label variant; rows of `target` must sum to 1.
template <typename T>
T softmax_cross_entropy_soft(const Ten<T>& logits, const Ten<T>& target) {
  detail::require(logits.same_shape(target), "softmax_cross_entropy: target shape mismatch");
  const int64_t N = logits.dim(0), K = logits.dim(1);
  const Ten<T> p = softmax(logits);
  double loss = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t k = 0; k < K; ++k)
      loss -= target.at2(n, k) * std::log(static_cast<double>(p.at2(n, k)) + 1e-300);
  return static_cast<T>(loss / static_cast<double>(N));
}

}  // namespace r2b
