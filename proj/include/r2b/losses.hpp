#pragma once

#include "r2b/autograd.hpp"

namespace r2b {

// Spatial attention map: per-sample sum over channels of squared activations,
// flattened to [N, H*W].
template <typename T>
Ten<T> attention_map(const Ten<T>& act) {
  detail::require(act.rank() == 4, "attention_map: expected NCHW");
  const int64_t N = act.dim(0), C = act.dim(1), HW = act.dim(2) * act.dim(3);
  Ten<T> q({N, HW});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t p = 0; p < HW; ++p) {
        const T a = act[(n * C + c) * HW + p];
        q.at2(n, p) += a * a;
      }
  return q;
}

constexpr double kAttEps = 1e-8;

namespace detail {

// L2-normalize rows of a [N,M] map with eps in the denominator.
template <typename T>
Ten<T> normalize_rows(const Ten<T>& q) {
  Ten<T> u(q.shape);
  const int64_t N = q.dim(0), M = q.dim(1);
  for (int64_t n = 0; n < N; ++n) {
    double s = 0;
    for (int64_t m = 0; m < M; ++m) s += static_cast<double>(q.at2(n, m)) * q.at2(n, m);
    const double norm = std::sqrt(s) + kAttEps;
    for (int64_t m = 0; m < M; ++m) u.at2(n, m) = static_cast<T>(q.at2(n, m) / norm);
  }
  return u;
}

}  // namespace detail

// One transfer point: batch mean of || Q_S/||Q_S|| - Q_T/||Q_T|| ||_2 over
// flattened normalized maps.
template <typename T>
T attention_point_loss(const Ten<T>& student_act, const Ten<T>& teacher_act) {
  const Ten<T> us = detail::normalize_rows(attention_map(student_act));
  const Ten<T> ut = detail::normalize_rows(attention_map(teacher_act));
  detail::require(us.same_shape(ut), "attention loss: spatial shapes differ, " +
                                         Ten<T>::shape_str(student_act.shape) + " vs " +
                                         Ten<T>::shape_str(teacher_act.shape));
  const int64_t N = us.dim(0), M = us.dim(1);
  double total = 0;
  for (int64_t n = 0; n < N; ++n) {
    double d2 = 0;
    for (int64_t m = 0; m < M; ++m) {
      const double d = static_cast<double>(us.at2(n, m)) - ut.at2(n, m);
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  return static_cast<T>(total / N);
}

// Sum over the J transfer points.
template <typename T>
T attention_transfer_loss(const std::vector<Ten<T>>& student_maps,
                          const std::vector<Ten<T>>& teacher_maps) {
  detail::require(student_maps.size() == teacher_maps.size(),
                  "attention loss: transfer point count mismatch");
  T total = 0;
  for (size_t j = 0; j < student_maps.size(); ++j)
    total += attention_point_loss(student_maps[j], teacher_maps[j]);
  return total;
}

// Hinton logit matching: KL(softmax(t/τ) || softmax(s/τ)) · τ², batch mean.
template <typename T>
T kd_loss(const Ten<T>& student_logits, const Ten<T>& teacher_logits, T tau) {
  detail::require(student_logits.same_shape(teacher_logits), "kd_loss: logit shape mismatch");
  detail::require(tau > 0, "kd_loss: tau must be positive");
  Ten<T> s = student_logits, t = teacher_logits;
  for (int64_t i = 0; i < s.numel(); ++i) {
    s[i] /= tau;
    t[i] /= tau;
  }
  const Ten<T> ps = softmax(s), pt = softmax(t);
  const int64_t N = s.dim(0), K = s.dim(1);
  double kl = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t k = 0; k < K; ++k) {
      const double q = pt.at2(n, k);
      if (q > 0) kl += q * (std::log(q) - std::log(static_cast<double>(ps.at2(n, k)) + 1e-300));
    }
  return static_cast<T>(kl / N * tau * tau);
}

struct LossConfig {
  double ce_weight = 1.0;
  double att_weight = 1.25;  // ~10/J for the J=8 default, same order as CE at init
  double kd_weight = 1.0;
  double tau = 3.0;
  std::vector<int> active_points;  // empty = all transfer points

  void validate() const {
    detail::require(ce_weight >= 0 && att_weight >= 0 && kd_weight >= 0,
                    "LossConfig: weights must be non-negative");
    detail::require(tau > 0, "LossConfig: tau must be positive");
  }
};

template <typename T>
T combined_loss(T ce, T att, T kd, const LossConfig& cfg) {
  cfg.validate();
  return static_cast<T>(cfg.ce_weight * ce + cfg.att_weight * att + cfg.kd_weight * kd);
}

namespace ag {

// Attention-matching loss node for one transfer point; the teacher activation
// is a frozen tensor.
template <typename T>
NodeP<T> attention_point_loss(const NodeP<T>& student_act, const Ten<T>& teacher_act) {
  const T lv = r2b::attention_point_loss(student_act->value, teacher_act);
  Ten<T> v({1});
  v[0] = lv;
  auto ut = std::make_shared<Ten<T>>(r2b::detail::normalize_rows(attention_map(teacher_act)));
  return r2b::detail::make_op<T>(std::move(v), {student_act}, [ut](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    const Ten<T>& a = p->value;
    const int64_t N = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
    const Ten<T> q = attention_map(a);
    const T g0 = self.grad[0];
    for (int64_t n = 0; n < N; ++n) {
      double s2 = 0;
      for (int64_t m = 0; m < HW; ++m) s2 += static_cast<double>(q.at2(n, m)) * q.at2(n, m);
      const double s = std::sqrt(s2);
      const double denom = s + kAttEps;
      // u = q/(s+eps); d = u - ut; L_n = ||d||
      std::vector<double> d(static_cast<size_t>(HW));
      double dn2 = 0;
      for (int64_t m = 0; m < HW; ++m) {
        d[static_cast<size_t>(m)] = q.at2(n, m) / denom - ut->at2(n, m);
        dn2 += d[static_cast<size_t>(m)] * d[static_cast<size_t>(m)];
      }
      const double dn = std::sqrt(dn2);
      if (dn == 0) continue;
      // dL/dq_m = (1/N) [ d_m/(dn*denom) - (q_m/(s*denom^2)) * (d.q)/dn ]
      double d_dot_q = 0;
      for (int64_t m = 0; m < HW; ++m) d_dot_q += d[static_cast<size_t>(m)] * q.at2(n, m);
      std::vector<double> dq(static_cast<size_t>(HW));
      for (int64_t m = 0; m < HW; ++m) {
        double v2 = d[static_cast<size_t>(m)] / (dn * denom);
        if (s > 0) v2 -= q.at2(n, m) / (s * denom * denom) * d_dot_q / dn;
        dq[static_cast<size_t>(m)] = v2 / N;
      }
      for (int64_t c = 0; c < C; ++c)
        for (int64_t m = 0; m < HW; ++m)
          p->grad[(n * C + c) * HW + m] += static_cast<T>(
              g0 * dq[static_cast<size_t>(m)] * 2.0 * a[(n * C + c) * HW + m]);
    }
  });
}

template <typename T>
NodeP<T> attention_transfer_loss(const std::vector<NodeP<T>>& student_acts,
                                 const std::vector<Ten<T>>& teacher_acts,
                                 const std::vector<int>& active_points = {}) {
  r2b::detail::require(student_acts.size() == teacher_acts.size(),
                       "attention loss: transfer point count mismatch");
  NodeP<T> total;
  for (size_t j = 0; j < student_acts.size(); ++j) {
    if (!active_points.empty() &&
        std::find(active_points.begin(), active_points.end(), static_cast<int>(j)) ==
            active_points.end())
      continue;
    auto term = attention_point_loss(student_acts[j], teacher_acts[j]);
    total = total ? add(total, term) : term;
  }
  if (!total) total = make_constant<T>(Ten<T>({1}));
  return total;
}

template <typename T>
NodeP<T> kd_loss(const NodeP<T>& student_logits, const Ten<T>& teacher_logits, T tau) {
  const T lv = r2b::kd_loss(student_logits->value, teacher_logits, tau);
  Ten<T> v({1});
  v[0] = lv;
  Ten<T> t = teacher_logits;
  for (int64_t i = 0; i < t.numel(); ++i) t[i] /= tau;
  auto pt = std::make_shared<Ten<T>>(softmax(t));
  return r2b::detail::make_op<T>(std::move(v), {student_logits}, [pt, tau](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    const int64_t N = p->value.dim(0), K = p->value.dim(1);
    Ten<T> s = p->value;
    for (int64_t i = 0; i < s.numel(); ++i) s[i] /= tau;
    const Ten<T> ps = softmax(s);
    // dL/dz_s = tau/N * (p_s - p_t)
    const T g = self.grad[0] * tau / static_cast<T>(N);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t k = 0; k < K; ++k)
        p->grad.at2(n, k) += g * (ps.at2(n, k) - pt->at2(n, k));
  });
}

// Weighted sum of the loss terms; a zero weight drops the term from the graph.
template <typename T>
NodeP<T> combined_loss(const NodeP<T>& ce, const NodeP<T>& att, const NodeP<T>& kd,
                       const LossConfig& cfg) {
  cfg.validate();
  NodeP<T> total;
  auto mix = [&](const NodeP<T>& term, double w) {
    if (!term || w == 0) return;
    auto scaled = scale(term, static_cast<T>(w));
    total = total ? add(total, scaled) : scaled;
  };
  mix(ce, cfg.ce_weight);
  mix(att, cfg.att_weight);
  mix(kd, cfg.kd_weight);
  if (!total) total = make_constant<T>(Ten<T>({1}));
  return total;
}

}  // namespace ag
}  // namespace r2b
