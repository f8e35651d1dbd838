#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>

#include "r2b/tensor.hpp"

namespace r2b {

// Reverse-mode tape. Graphs are built define-by-run: every op returns a new
// node holding its forward value plus a closure that scatters the node's
// gradient into its parents. Parameter nodes outlive the graph and accumulate
// gradients across backward calls until zero_grad.
template <typename T>
struct Node {
  Ten<T> value;
  Ten<T> grad;
  bool requires_grad = false;
  bool is_param = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.shape != value.shape) {
      grad.shape = value.shape;
      grad.data.assign(value.data.size(), T(0));
    }
  }
  void zero_grad() {
    grad.shape = value.shape;
    grad.data.assign(value.data.size(), T(0));
  }
};

template <typename T>
using NodeP = std::shared_ptr<Node<T>>;

template <typename T>
NodeP<T> make_constant(Ten<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  return n;
}

template <typename T>
NodeP<T> make_param(Ten<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = true;
  n->is_param = true;
  n->zero_grad();
  return n;
}

namespace detail {

template <typename T>
NodeP<T> make_op(Ten<T> value, std::vector<NodeP<T>> parents,
                 std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

template <typename T>
void topo_order(const NodeP<T>& root, std::vector<Node<T>*>& order) {
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Backpropagate from a scalar loss. Parameter gradients accumulate; call
// zero_grad on parameters between steps.
template <typename T>
void backward(const NodeP<T>& loss) {
  detail::require(loss->value.numel() == 1, "backward: loss must be scalar");
  if (!loss->requires_grad) return;
  std::vector<Node<T>*> order;
  detail::topo_order(loss, order);
  for (Node<T>* n : order)
    if (!n->is_param) n->zero_grad();
    else n->ensure_grad();
  loss->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

namespace ag {

template <typename T>
NodeP<T> add(const NodeP<T>& a, const NodeP<T>& b) {
  detail::require(a->value.same_shape(b->value), "add: shape mismatch");
  Ten<T> v(a->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] + b->value[i];
  return detail::make_op<T>(std::move(v), {a, b}, [](Node<T>& self) {
    for (int pi = 0; pi < 2; ++pi) {
      auto& p = self.parents[pi];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
NodeP<T> scale(const NodeP<T>& a, T s) {
  Ten<T> v(a->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] * s;
  return detail::make_op<T>(std::move(v), {a}, [s](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i) p->grad[i] += self.grad[i] * s;
  });
}

template <typename T>
NodeP<T> relu(const NodeP<T>& x) {
  Ten<T> v(x->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::max(x->value[i], T(0));
  return detail::make_op<T>(std::move(v), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (p->value[i] >= 0) p->grad[i] += self.grad[i];
  });
}

// slope has shape [C] (per-channel) or [1] (shared).
template <typename T>
NodeP<T> prelu(const NodeP<T>& x, const NodeP<T>& slope) {
  const int64_t C = x->value.rank() >= 2 ? x->value.dim(1) : 1;
  const bool shared = slope->value.numel() == 1;
  detail::require(shared || slope->value.numel() == C, "prelu: slope length must be 1 or C");
  const int64_t inner =
      x->value.rank() == 4 ? x->value.dim(2) * x->value.dim(3) : 1;
  Ten<T> v(x->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) {
    const int64_t c = shared ? 0 : (i / inner) % C;
    const T xv = x->value[i];
    v[i] = xv >= 0 ? xv : slope->value[c] * xv;
  }
  return detail::make_op<T>(std::move(v), {x, slope}, [C, shared, inner](Node<T>& self) {
    auto& px = self.parents[0];
    auto& ps = self.parents[1];
    if (px->requires_grad) px->ensure_grad();
    if (ps->requires_grad) ps->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      const int64_t c = shared ? 0 : (i / inner) % C;
      const T xv = px->value[i];
      const T g = self.grad[i];
      if (px->requires_grad) px->grad[i] += xv >= 0 ? g : ps->value[c] * g;
      if (ps->requires_grad && xv < 0) ps->grad[c] += g * xv;
    }
  });
}

// Forward sign with the clipped-identity straight-through estimator:
// gradient passes where |x| <= 1, zero elsewhere. sign(0) = +1.
template <typename T>
NodeP<T> sign_ste(const NodeP<T>& x) {
  Ten<T> v(x->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = x->value[i] >= 0 ? T(1) : T(-1);
  return detail::make_op<T>(std::move(v), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (std::abs(p->value[i]) <= T(1)) p->grad[i] += self.grad[i];
  });
}

template <typename T>
NodeP<T> tanh_soft_binarize(const NodeP<T>& x) {
  Ten<T> v(x->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::tanh(x->value[i]);
  return detail::make_op<T>(std::move(v), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      p->grad[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

template <typename T>
NodeP<T> sigmoid(const NodeP<T>& x) {
  Ten<T> v(x->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = T(1) / (T(1) + std::exp(-x->value[i]));
  return detail::make_op<T>(std::move(v), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      p->grad[i] += self.grad[i] * self.value[i] * (T(1) - self.value[i]);
  });
}

template <typename T>
NodeP<T> conv2d(const NodeP<T>& x, const NodeP<T>& w, int64_t stride, int64_t pad) {
  Ten<T> v = conv2d_fast(x->value, w->value, stride, pad);
  return detail::make_op<T>(std::move(v), {x, w}, [stride, pad](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const Ten<T>& in = px->value;
    const Ten<T>& wt = pw->value;
    const int64_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const int64_t O = wt.dim(0), k = wt.dim(2);
    const int64_t Ho = self.value.dim(2), Wo = self.value.dim(3);
    const int64_t K = C * k * k, P = Ho * Wo;
    if (px->requires_grad) px->ensure_grad();
    if (pw->requires_grad) pw->ensure_grad();
    std::vector<T> col, dcol;
    for (int64_t n = 0; n < N; ++n) {
      if (pw->requires_grad) {
        im2col(in, n, k, stride, pad, Ho, Wo, col);
        for (int64_t o = 0; o < O; ++o) {
          const T* gy = &self.grad.at4(n, o, 0, 0);
          T* dw = pw->grad.data.data() + o * K;
          for (int64_t kk = 0; kk < K; ++kk) {
            const T* crow = col.data() + kk * P;
            T acc = 0;
            for (int64_t p = 0; p < P; ++p) acc += gy[p] * crow[p];
            dw[kk] += acc;
          }
        }
      }
      if (px->requires_grad) {
        dcol.assign(static_cast<size_t>(K * P), T(0));
        for (int64_t o = 0; o < O; ++o) {
          const T* gy = &self.grad.at4(n, o, 0, 0);
          const T* wrow = wt.data.data() + o * K;
          for (int64_t kk = 0; kk < K; ++kk) {
            const T wv = wrow[kk];
            if (wv == T(0)) continue;
            T* drow = dcol.data() + kk * P;
            for (int64_t p = 0; p < P; ++p) drow[p] += wv * gy[p];
          }
        }
        // col2im accumulate
        for (int64_t c = 0; c < C; ++c)
          for (int64_t ky = 0; ky < k; ++ky)
            for (int64_t kx = 0; kx < k; ++kx) {
              const T* drow = dcol.data() + ((c * k + ky) * k + kx) * P;
              for (int64_t y = 0; y < Ho; ++y) {
                const int64_t iy = y * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                T* dst = &px->grad.at4(n, c, iy, 0);
                for (int64_t x2 = 0; x2 < Wo; ++x2) {
                  const int64_t ix = x2 * stride - pad + kx;
                  if (ix >= 0 && ix < W) dst[ix] += drow[y * Wo + x2];
                }
              }
            }
      }
    }
  });
}

// Batch norm state held outside the graph; running stats mutate in train mode.
template <typename T>
struct BNState {
  std::vector<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);
  explicit BNState(int64_t C = 0)
      : running_mean(static_cast<size_t>(C), T(0)), running_var(static_cast<size_t>(C), T(1)) {}
};

template <typename T>
NodeP<T> batchnorm2d(const NodeP<T>& x, const NodeP<T>& gamma, const NodeP<T>& beta,
                     BNState<T>& state, BNMode mode) {
  const Ten<T>& in = x->value;
  detail::require(in.rank() == 4, "batchnorm2d: expected NCHW input");
  const int64_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  detail::require(gamma->value.numel() == C && beta->value.numel() == C,
                  "batchnorm2d: parameter length does not match C=" + std::to_string(C));
  const int64_t M = N * H * W;
  auto mean = std::make_shared<std::vector<T>>(C);
  auto invstd = std::make_shared<std::vector<T>>(C);
  for (int64_t c = 0; c < C; ++c) {
    T m, var;
    if (mode == BNMode::Train) {
      double s = 0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) s += in.at4(n, c, h, w);
      const double mu = s / M;
      double v = 0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) {
            const double d = in.at4(n, c, h, w) - mu;
            v += d * d;
          }
      v /= M;
      m = static_cast<T>(mu);
      var = static_cast<T>(v);
      const double unbiased = M > 1 ? v * M / (M - 1) : v;
      state.running_mean[c] =
          static_cast<T>((1 - state.momentum) * state.running_mean[c] + state.momentum * mu);
      state.running_var[c] =
          static_cast<T>((1 - state.momentum) * state.running_var[c] + state.momentum * unbiased);
    } else {
      m = state.running_mean[c];
      var = state.running_var[c];
    }
    (*mean)[c] = m;
    (*invstd)[c] = T(1) / std::sqrt(var + state.eps);
  }
  Ten<T> out(in.shape);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T mu = (*mean)[c], is = (*invstd)[c];
      const T g = gamma->value[c], b = beta->value[c];
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
          out.at4(n, c, h, w) = (in.at4(n, c, h, w) - mu) * is * g + b;
    }
  const bool train = mode == BNMode::Train;
  return detail::make_op<T>(std::move(out), {x, gamma, beta},
                            [mean, invstd, train](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    const Ten<T>& in = px->value;
    const int64_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const int64_t M = N * H * W;
    if (px->requires_grad) px->ensure_grad();
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (int64_t c = 0; c < C; ++c) {
      const T mu = (*mean)[c], is = (*invstd)[c], g = pg->value[c];
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) {
            const T dy = self.grad.at4(n, c, h, w);
            const T xhat = (in.at4(n, c, h, w) - mu) * is;
            sum_dy += dy;
            sum_dy_xhat += dy * xhat;
          }
      if (pg->requires_grad) pg->grad[c] += static_cast<T>(sum_dy_xhat);
      if (pb->requires_grad) pb->grad[c] += static_cast<T>(sum_dy);
      if (!px->requires_grad) continue;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) {
            const T dy = self.grad.at4(n, c, h, w);
            if (train) {
              const T xhat = (in.at4(n, c, h, w) - mu) * is;
              px->grad.at4(n, c, h, w) += static_cast<T>(
                  g * is * (dy - sum_dy / M - xhat * sum_dy_xhat / M));
            } else {
              px->grad.at4(n, c, h, w) += g * is * dy;
            }
          }
    }
  });
}

template <typename T>
NodeP<T> linear(const NodeP<T>& x, const NodeP<T>& w, const NodeP<T>& b) {
  Ten<T> v = r2b::linear(x->value, w->value,
                         b ? std::vector<T>(b->value.data.begin(), b->value.data.end())
                           : std::vector<T>{});
  std::vector<NodeP<T>> parents = b ? std::vector<NodeP<T>>{x, w, b} : std::vector<NodeP<T>>{x, w};
  return detail::make_op<T>(std::move(v), std::move(parents), [](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const int64_t N = px->value.dim(0), D = px->value.dim(1), E = pw->value.dim(0);
    if (px->requires_grad) px->ensure_grad();
    if (pw->requires_grad) pw->ensure_grad();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t e = 0; e < E; ++e) {
        const T g = self.grad.at2(n, e);
        if (g == T(0)) continue;
        for (int64_t d = 0; d < D; ++d) {
          if (px->requires_grad) px->grad.at2(n, d) += g * pw->value.at2(e, d);
          if (pw->requires_grad) pw->grad.at2(e, d) += g * px->value.at2(n, d);
        }
      }
    if (self.parents.size() == 3 && self.parents[2]->requires_grad) {
      auto& pb = self.parents[2];
      pb->ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t e = 0; e < E; ++e) pb->grad[e] += self.grad.at2(n, e);
    }
  });
}

template <typename T>
NodeP<T> global_avg_pool(const NodeP<T>& x) {
  Ten<T> v = r2b::global_avg_pool(x->value);
  return detail::make_op<T>(std::move(v), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    const int64_t N = p->value.dim(0), C = p->value.dim(1);
    const int64_t H = p->value.dim(2), W = p->value.dim(3);
    const T inv = T(1) / static_cast<T>(H * W);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T g = self.grad.at2(n, c) * inv;
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) p->grad.at4(n, c, h, w) += g;
      }
  });
}

template <typename T>
NodeP<T> maxpool2d(const NodeP<T>& x, int64_t k, int64_t stride, int64_t pad) {
  const Ten<T>& in = x->value;
  const int64_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int64_t Ho = conv_out_extent(H, k, stride, pad);
  const int64_t Wo = conv_out_extent(W, k, stride, pad);
  Ten<T> v({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(v.numel()));
  int64_t oi = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t xx = 0; xx < Wo; ++xx, ++oi) {
          T best = std::numeric_limits<T>::lowest();
          int64_t bi = -1;
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = y * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = xx * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              const T val = in.at4(n, c, iy, ix);
              if (val > best) {
                best = val;
                bi = ((n * C + c) * H + iy) * W + ix;
              }
            }
          }
          v[oi] = best;
          (*argmax)[static_cast<size_t>(oi)] = bi;
        }
  return detail::make_op<T>(std::move(v), {x}, [argmax](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      const int64_t src = (*argmax)[static_cast<size_t>(i)];
      if (src >= 0) p->grad[src] += self.grad[i];
    }
  });
}

// Per-output-channel scaling by exp(log_gamma); storing the logarithm keeps
// the learned factor positive.
template <typename T>
NodeP<T> channel_scale_exp(const NodeP<T>& x, const NodeP<T>& log_gamma) {
  const int64_t O = x->value.dim(1);
  detail::require(log_gamma->value.numel() == O, "channel_scale_exp: gamma length mismatch");
  const int64_t inner = x->value.dim(2) * x->value.dim(3);
  Ten<T> v(x->value.shape);
  std::vector<T> g(static_cast<size_t>(O));
  for (int64_t o = 0; o < O; ++o) g[static_cast<size_t>(o)] = std::exp(log_gamma->value[o]);
  for (int64_t i = 0; i < v.numel(); ++i)
    v[i] = x->value[i] * g[static_cast<size_t>((i / inner) % O)];
  return detail::make_op<T>(std::move(v), {x, log_gamma}, [O, inner](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pl = self.parents[1];
    if (px->requires_grad) px->ensure_grad();
    if (pl->requires_grad) pl->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      const int64_t o = (i / inner) % O;
      const T gm = std::exp(pl->value[o]);
      if (px->requires_grad) px->grad[i] += self.grad[i] * gm;
      // d(x*exp(l))/dl = x*exp(l) = value
      if (pl->requires_grad) pl->grad[o] += self.grad[i] * self.value[i];
    }
  });
}

// Per-(sample, channel) scaling: y[n,o,:,:] = x[n,o,:,:] * s[n,o].
template <typename T>
NodeP<T> sample_channel_scale(const NodeP<T>& x, const NodeP<T>& s) {
  const int64_t N = x->value.dim(0), O = x->value.dim(1);
  detail::require(s->value.rank() == 2 && s->value.dim(0) == N && s->value.dim(1) == O,
                  "sample_channel_scale: scale shape mismatch");
  const int64_t inner = x->value.dim(2) * x->value.dim(3);
  Ten<T> v(x->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = x->value[i] * s->value[i / inner];
  return detail::make_op<T>(std::move(v), {x, s}, [inner](Node<T>& self) {
    auto& px = self.parents[0];
    auto& ps = self.parents[1];
    if (px->requires_grad) px->ensure_grad();
    if (ps->requires_grad) ps->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      const int64_t nc = i / inner;
      if (px->requires_grad) px->grad[i] += self.grad[i] * ps->value[nc];
      if (ps->requires_grad) ps->grad[nc] += self.grad[i] * px->value[i];
    }
  });
}

template <typename T>
NodeP<T> softmax_cross_entropy(const NodeP<T>& logits, const std::vector<int>& labels) {
  const T lv = r2b::softmax_cross_entropy(logits->value, labels);
  Ten<T> v({1});
  v[0] = lv;
  auto probs = std::make_shared<Ten<T>>(r2b::softmax(logits->value));
  auto lab = std::make_shared<std::vector<int>>(labels);
  return detail::make_op<T>(std::move(v), {logits}, [probs, lab](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    const int64_t N = p->value.dim(0), K = p->value.dim(1);
    const T g = self.grad[0] / static_cast<T>(N);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t k = 0; k < K; ++k) {
        const T y = (*lab)[static_cast<size_t>(n)] == k ? T(1) : T(0);
        p->grad.at2(n, k) += g * (probs->at2(n, k) - y);
      }
  });
}

template <typename T>
NodeP<T> softmax_cross_entropy_soft(const NodeP<T>& logits, const Ten<T>& target) {
  const T lv = r2b::softmax_cross_entropy_soft(logits->value, target);
  Ten<T> v({1});
  v[0] = lv;
  auto probs = std::make_shared<Ten<T>>(r2b::softmax(logits->value));
  auto tgt = std::make_shared<Ten<T>>(target);
  return detail::make_op<T>(std::move(v), {logits}, [probs, tgt](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    const int64_t N = p->value.dim(0), K = p->value.dim(1);
    const T g = self.grad[0] / static_cast<T>(N);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t k = 0; k < K; ++k)
        p->grad.at2(n, k) += g * (probs->at2(n, k) - tgt->at2(n, k));
  });
}

}  // namespace ag

// Central-difference gradient check. `build_loss` must rebuild the graph from
// the current parameter values each call. Returns the worst relative error
// over all checked parameter entries. Not meaningful for ops with surrogate
// gradients (sign_ste) or at non-smooth points (prelu kinks at 0).
template <typename T>
double finite_diff_check(const std::function<NodeP<T>()>& build_loss,
                         const std::vector<NodeP<T>>& params, T step,
                         int64_t max_entries_per_param = 64) {
  detail::require(step > 0, "finite_diff_check: step must be positive");
  for (auto& p : params) p->zero_grad();
  backward(build_loss());
  double worst = 0;
  for (auto& p : params) {
    const int64_t n = p->value.numel();
    const int64_t stride = std::max<int64_t>(1, n / max_entries_per_param);
    for (int64_t i = 0; i < n; i += stride) {
      const T orig = p->value[i];
      p->value[i] = orig + step;
      const double lp = build_loss()->value[0];
      p->value[i] = orig - step;
      const double lm = build_loss()->value[0];
      p->value[i] = orig;
      const double fd = (lp - lm) / (2.0 * static_cast<double>(step));
      const double an = p->grad[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace r2b
