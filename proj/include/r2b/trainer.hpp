#pragma once

#include <chrono>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "r2b/data.hpp"
#include "r2b/losses.hpp"
#include "r2b/network.hpp"

namespace r2b {

struct OptimizerPolicy {
  double lr = 1e-3;
  std::vector<int> step_epochs;
  double decay_factor = 0.1;
  int warmup_epochs = 0;
  double weight_decay = 0.0;
  int epochs = 10;
  int batch_size = 128;
  uint64_t seed = 0;
  double mixup_alpha = 0.0;          // 0 disables mixup
  bool augment = false;              // CIFAR-style train augmentation

  void validate() const {
    detail::require(epochs >= 1 && batch_size >= 1, "OptimizerPolicy: invalid epochs/batch");
    for (size_t i = 0; i < step_epochs.size(); ++i) {
      detail::require(step_epochs[i] < epochs, "OptimizerPolicy: step epoch past end");
      detail::require(i == 0 || step_epochs[i] > step_epochs[i - 1],
                      "OptimizerPolicy: step epochs must be strictly increasing");
    }
  }

  double lr_at(int epoch) const {
    if (epoch < warmup_epochs) return lr * (epoch + 1) / warmup_epochs;
    double v = lr;
    for (int s : step_epochs)
      if (epoch >= s) v *= decay_factor;
    return v;
  }
};

inline nlohmann::json policy_to_json(const OptimizerPolicy& p) {
  return nlohmann::json{{"lr", p.lr},
                        {"step_epochs", p.step_epochs},
                        {"decay_factor", p.decay_factor},
                        {"warmup_epochs", p.warmup_epochs},
                        {"weight_decay", p.weight_decay},
                        {"epochs", p.epochs},
                        {"batch_size", p.batch_size},
                        {"seed", p.seed},
                        {"mixup_alpha", p.mixup_alpha},
                        {"augment", p.augment}};
}

inline OptimizerPolicy policy_from_json(const nlohmann::json& j) {
  OptimizerPolicy p;
  p.lr = j.value("lr", p.lr);
  if (j.contains("step_epochs")) p.step_epochs = j.at("step_epochs").get<std::vector<int>>();
  p.decay_factor = j.value("decay_factor", p.decay_factor);
  p.warmup_epochs = j.value("warmup_epochs", p.warmup_epochs);
  p.weight_decay = j.value("weight_decay", p.weight_decay);
  p.epochs = j.value("epochs", p.epochs);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.seed = j.value("seed", p.seed);
  p.mixup_alpha = j.value("mixup_alpha", p.mixup_alpha);
  p.augment = j.value("augment", p.augment);
  return p;
}

// Adam with per-parameter state. Weight decay is classic L2-in-gradient and
// is applied only to real-valued weight matrices: BN affine, biases, PReLU
// slopes, scale factors, and sign-constrained latent weights are excluded.
template <typename T = float>
class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(Network<T>& net, double weight_decay) : net_(net), wd_(weight_decay) {
    for (auto& [name, p] : net.named_params) {
      const bool decayable = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0 &&
                             !net.is_latent_binary_weight(name);
      slots_.push_back({p, decayable, Ten<T>(p->value.shape), Ten<T>(p->value.shape),
                        net.is_latent_binary_weight(name)});
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (auto& s : slots_) {
      auto& p = s.param;
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        double g = p->grad[i];
        if (s.decayable && wd_ != 0) g += wd_ * p->value[i];
        s.m[i] = static_cast<T>(beta1 * s.m[i] + (1 - beta1) * g);
        s.v[i] = static_cast<T>(beta2 * s.v[i] + (1 - beta2) * g * g);
        const double mhat = s.m[i] / bc1, vhat = s.v[i] / bc2;
        p->value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
        // latent binary weights stay inside the STE pass-through region
        if (s.latent_binary) p->value[i] = std::clamp(p->value[i], T(-1), T(1));
      }
    }
  }

 private:
  struct Slot {
    NodeP<T> param;
    bool decayable;
    Ten<T> m, v;
    bool latent_binary;
  };
  Network<T>& net_;
  double wd_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

// λ ~ Beta(α,α); inputs and one-hot labels are mixed with a shuffled pairing.
template <typename T>
std::pair<Ten<T>, Ten<T>> mixup_batch(const Ten<T>& x, const Ten<T>& y_onehot, double alpha,
                                      std::mt19937& rng) {
  detail::require(alpha >= 0, "mixup_batch: alpha must be >= 0");
  const int64_t N = x.dim(0);
  double lambda = 1.0;
  if (alpha > 0) {
    std::gamma_distribution<double> g(alpha, 1.0);
    const double a = g(rng), b = g(rng);
    lambda = a / (a + b);
  }
  std::vector<int64_t> perm(static_cast<size_t>(N));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Ten<T> xm(x.shape), ym(y_onehot.shape);
  const int64_t px = x.numel() / N, py = y_onehot.numel() / N;
  for (int64_t n = 0; n < N; ++n) {
    const int64_t j = perm[static_cast<size_t>(n)];
    for (int64_t i = 0; i < px; ++i)
      xm[n * px + i] = static_cast<T>(lambda * x[n * px + i] + (1 - lambda) * x[j * px + i]);
    for (int64_t i = 0; i < py; ++i)
      ym[n * py + i] =
          static_cast<T>(lambda * y_onehot[n * py + i] + (1 - lambda) * y_onehot[j * py + i]);
  }
  return {std::move(xm), std::move(ym)};
}

struct EvalResult {
  double top1 = 0, top5 = 0;
};

template <typename T>
EvalResult evaluate(Network<T>& net, const Dataset& data, int batch_size = 128) {
  int64_t hit1 = 0, hit5 = 0;
  const int64_t n = data.size();
  for (int64_t start = 0; start < n; start += batch_size) {
    std::vector<int64_t> idx;
    for (int64_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    const Tensor xb = data.sample_batch(idx);
    auto res = net.forward(xb.template cast<T>(), BNMode::Eval);
    const Ten<T>& logits = res.logits->value;
    const int64_t K = logits.dim(1);
    const int64_t topk = std::min<int64_t>(5, K);
    for (size_t bi = 0; bi < idx.size(); ++bi) {
      const int y = data.labels[static_cast<size_t>(idx[bi])];
      std::vector<int64_t> order(static_cast<size_t>(K));
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + topk, order.end(),
                        [&](int64_t a, int64_t b) {
                          return logits.at2(static_cast<int64_t>(bi), a) >
                                 logits.at2(static_cast<int64_t>(bi), b);
                        });
      if (order[0] == y) ++hit1;
      for (int64_t k = 0; k < topk; ++k)
        if (order[static_cast<size_t>(k)] == y) {
          ++hit5;
          break;
        }
    }
  }
  return {100.0 * hit1 / n, 100.0 * hit5 / n};
}

// One JSON object per line plus a mirrored CSV. In deterministic mode wall
// clock fields are zeroed so logs are byte-reproducible.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  MetricsWriter(const std::string& jsonl_path, const std::string& csv_path, bool deterministic)
      : deterministic_(deterministic) {
    if (!jsonl_path.empty()) jsonl_.open(jsonl_path);
    if (!csv_path.empty()) {
      csv_.open(csv_path);
      csv_ << "epoch,split,loss,ce,att,kd,lr,top1,top5,wall_ms\n";
    }
  }

  void write(int epoch, const std::string& split, double loss, double ce, double att, double kd,
             double lr, double top1, double top5, double wall_ms) {
    if (deterministic_) wall_ms = 0;
    nlohmann::json j{{"epoch", epoch}, {"split", split}, {"loss", loss},  {"ce", ce},
                     {"att", att},     {"kd", kd},       {"lr", lr},      {"top1", top1},
                     {"top5", top5},   {"wall_ms", wall_ms}};
    if (jsonl_.is_open()) jsonl_ << j.dump() << "\n" << std::flush;
    if (csv_.is_open())
      csv_ << epoch << "," << split << "," << loss << "," << ce << "," << att << "," << kd << ","
           << lr << "," << top1 << "," << top5 << "," << wall_ms << "\n"
           << std::flush;
  }

 private:
  std::ofstream jsonl_, csv_;
  bool deterministic_ = false;
};

struct TrainOptions {
  bool deterministic = false;
  std::string metrics_jsonl, metrics_csv;
  const Dataset* eval_data = nullptr;
  int log_every_epochs = 1;
};

struct StageMetrics {
  double final_train_loss = 0, first_epoch_loss = 0;
  double train_top1 = 0;
  EvalResult eval;
};

template <typename T>
StageMetrics train_stage(Network<T>& net, const Dataset& data, const OptimizerPolicy& policy,
                         const LossConfig& losses, Network<T>* teacher = nullptr,
                         const TrainOptions& opts = {}) {
  policy.validate();
  losses.validate();
  detail::require(data.size() > 0, "train_stage: empty dataset");
  if (teacher) detail::require(teacher->frozen, "train_stage: teacher must be frozen");

  Adam<T> adam(net, policy.weight_decay);
  std::mt19937 rng(static_cast<uint32_t>(policy.seed));
  MetricsWriter metrics(opts.metrics_jsonl, opts.metrics_csv, opts.deterministic);

  const int64_t n = data.size();
  const int K = data.class_count;
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  StageMetrics out;
  for (int epoch = 0; epoch < policy.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = policy.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double sum_loss = 0, sum_ce = 0, sum_att = 0, sum_kd = 0;
    int64_t batches = 0, hit1 = 0, seen = 0;
    for (int64_t start = 0; start < n; start += policy.batch_size) {
      std::vector<int64_t> idx(order.begin() + start,
                               order.begin() + std::min(n, start + policy.batch_size));
      Tensor xb_f = data.sample_batch(idx);
      if (policy.augment) xb_f = augment(xb_f, rng, AugmentPolicy::CifarTrain);
      std::vector<int> yb;
      for (int64_t i : idx) yb.push_back(data.labels[static_cast<size_t>(i)]);

      Ten<T> xb = xb_f.template cast<T>();
      bool soft_labels = false;
      Ten<T> ysoft;
      if (policy.mixup_alpha > 0) {
        Ten<T> onehot({static_cast<int64_t>(yb.size()), K});
        for (size_t i = 0; i < yb.size(); ++i)
          onehot.at2(static_cast<int64_t>(i), yb[i]) = T(1);
        auto [xm, ym] = mixup_batch(xb, onehot, policy.mixup_alpha, rng);
        xb = std::move(xm);
        ysoft = std::move(ym);
        soft_labels = true;
      }

      net.zero_grad();
      auto res = net.forward(xb, BNMode::Train);

      NodeP<T> ce, att, kd;
      if (losses.ce_weight > 0)
        ce = soft_labels ? ag::softmax_cross_entropy_soft(res.logits, ysoft)
                         : ag::softmax_cross_entropy(res.logits, yb);
      if (teacher && (losses.att_weight > 0 || losses.kd_weight > 0)) {
        auto tres = teacher->forward(xb, BNMode::Eval);
        if (losses.att_weight > 0) {
          std::vector<Ten<T>> tmaps;
          for (auto& a : tres.transfer) tmaps.push_back(a->value);
          att = ag::attention_transfer_loss(res.transfer, tmaps, losses.active_points);
        }
        if (losses.kd_weight > 0)
          kd = ag::kd_loss(res.logits, tres.logits->value, static_cast<T>(losses.tau));
      }
      auto loss = ag::combined_loss(ce, att, kd, losses);
      const double lv = loss->value[0];
      if (!std::isfinite(lv))
        throw std::runtime_error(
            "train_stage: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
            std::to_string(batches) + " (ce=" + std::to_string(ce ? ce->value[0] : 0) +
            " att=" + std::to_string(att ? att->value[0] : 0) +
            " kd=" + std::to_string(kd ? kd->value[0] : 0) + ")");
      backward(loss);
      adam.step(lr);

      sum_loss += lv;
      sum_ce += ce ? ce->value[0] : 0;
      sum_att += att ? att->value[0] : 0;
      sum_kd += kd ? kd->value[0] : 0;
      ++batches;
      // running train accuracy from the training-mode logits
      for (size_t bi = 0; bi < idx.size(); ++bi) {
        const Ten<T>& lg = res.logits->value;
        int best = 0;
        for (int k = 1; k < K; ++k)
          if (lg.at2(static_cast<int64_t>(bi), k) > lg.at2(static_cast<int64_t>(bi), best))
            best = k;
        hit1 += best == data.labels[static_cast<size_t>(idx[bi])];
        ++seen;
      }
    }
    const double epoch_loss = sum_loss / batches;
    if (epoch == 0) out.first_epoch_loss = epoch_loss;
    out.final_train_loss = epoch_loss;
    out.train_top1 = 100.0 * hit1 / seen;

    EvalResult ev;
    if (opts.eval_data && (epoch % opts.log_every_epochs == 0 || epoch == policy.epochs - 1))
      ev = evaluate(net, *opts.eval_data);
    out.eval = ev;
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    metrics.write(epoch, "train", epoch_loss, sum_ce / batches, sum_att / batches,
                  sum_kd / batches, lr, out.train_top1, 0.0, wall_ms);
    if (opts.eval_data)
      metrics.write(epoch, "test", 0.0, 0.0, 0.0, 0.0, lr, ev.top1, ev.top5, 0.0);
  }
  return out;
}

}  // namespace r2b
