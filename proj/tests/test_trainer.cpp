#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "r2b/trainer.hpp"

using namespace r2b;

namespace {

NetConfig tiny_cfg(NetVariant v) {
  NetConfig cfg;
  cfg.variant = v;
  cfg.num_classes = 3;
  cfg.base_width = 8;
  cfg.blocks_per_stage = {1};
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(LrSchedule, StepwiseDecayReferenceValues) {
  // base 1e-3 with steps at 150 and 250 over 320 epochs
  OptimizerPolicy p;
  p.lr = 1e-3;
  p.step_epochs = {150, 250};
  p.epochs = 320;
  p.validate();
  EXPECT_DOUBLE_EQ(p.lr_at(0), 1e-3);
  EXPECT_DOUBLE_EQ(p.lr_at(149), 1e-3);
  EXPECT_DOUBLE_EQ(p.lr_at(150), 1e-4);
  EXPECT_DOUBLE_EQ(p.lr_at(249), 1e-4);
  EXPECT_DOUBLE_EQ(p.lr_at(250), 1e-5);
  EXPECT_DOUBLE_EQ(p.lr_at(319), 1e-5);
}

TEST(LrSchedule, LinearWarmupRamp) {
  OptimizerPolicy p;
  p.lr = 1e-3;
  p.warmup_epochs = 5;
  p.epochs = 20;
  for (int e = 0; e < 5; ++e) EXPECT_DOUBLE_EQ(p.lr_at(e), 1e-3 * (e + 1) / 5);
  EXPECT_DOUBLE_EQ(p.lr_at(5), 1e-3);
}

TEST(LrSchedule, ValidationRejectsBadSteps) {
  OptimizerPolicy p;
  p.epochs = 10;
  p.step_epochs = {12};
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.step_epochs = {5, 5};
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.step_epochs = {3, 7};
  p.validate();
}

TEST(Policy, JsonRoundTrip) {
  OptimizerPolicy p;
  p.lr = 2e-4;
  p.step_epochs = {40, 60};
  p.warmup_epochs = 2;
  p.weight_decay = 1e-5;
  p.epochs = 75;
  p.batch_size = 256;
  p.seed = 9;
  p.mixup_alpha = 0.2;
  p.augment = true;
  OptimizerPolicy back = policy_from_json(policy_to_json(p));
  EXPECT_EQ(back.lr, p.lr);
  EXPECT_EQ(back.step_epochs, p.step_epochs);
  EXPECT_EQ(back.warmup_epochs, p.warmup_epochs);
  EXPECT_EQ(back.weight_decay, p.weight_decay);
  EXPECT_EQ(back.epochs, p.epochs);
  EXPECT_EQ(back.batch_size, p.batch_size);
  EXPECT_EQ(back.seed, p.seed);
  EXPECT_EQ(back.mixup_alpha, p.mixup_alpha);
  EXPECT_EQ(back.augment, p.augment);
}

TEST(Adam, DecayTargetsRealWeightMatricesOnly) {
  auto net = build_network<float>(tiny_cfg(NetVariant::FullBin), 1);
  // with zero gradients and nonzero decay, only decayable params move
  for (auto& [name, p] : net.named_params)
    for (auto& v : p->value.data) v = 0.5f;
  net.zero_grad();
  Adam<float> adam(net, 0.1);
  adam.step(1e-2);
  for (auto& [name, p] : net.named_params) {
    const bool is_w = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;
    const bool decayable = is_w && !net.is_latent_binary_weight(name);
    for (auto& v : p->value.data) {
      if (decayable)
        ASSERT_LT(v, 0.5f) << name;
      else
        ASSERT_EQ(v, 0.5f) << name;
    }
  }
}

TEST(Adam, LatentBinaryWeightsStayClamped) {
  auto net = build_network<float>(tiny_cfg(NetVariant::FullBin), 2);
  // drive a large gradient into every latent weight
  for (auto& [name, p] : net.named_params)
    if (net.is_latent_binary_weight(name)) {
      p->ensure_grad();
      for (auto& g : p->grad.data) g = -100.f;
    }
  Adam<float> adam(net, 0.0);
  for (int i = 0; i < 50; ++i) adam.step(0.5);
  for (auto& [name, p] : net.named_params)
    if (net.is_latent_binary_weight(name))
      for (auto& v : p->value.data) {
        ASSERT_LE(v, 1.f) << name;
        ASSERT_GE(v, -1.f) << name;
      }
}

TEST(Adam, SingleStepMagnitudeIsLr) {
  // with one step, bias correction makes the update exactly lr * sign(g)
  auto net = build_network<float>(tiny_cfg(NetVariant::RealTeacher), 3);
  auto before = net.named_params[0].second->value;
  auto& p = net.named_params[0].second;
  p->ensure_grad();
  for (auto& g : p->grad.data) g = 2.f;
  Adam<float> adam(net, 0.0);
  adam.step(1e-3);
  for (int64_t i = 0; i < before.numel(); ++i)
    EXPECT_NEAR(p->value[i], before[i] - 1e-3, 1e-7);  // single-precision state
}

TEST(Mixup, LambdaOneIsIdentityOnInputs) {
  std::mt19937 rng(91);
  Ten<float> x({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Ten<float> y({4, 2});
  for (int64_t i = 0; i < 4; ++i) y.at2(i, i % 2) = 1.f;
  auto [xm, ym] = mixup_batch(x, y, 0.0, rng);  // alpha=0 -> lambda=1
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(xm[i], x[i]);
  for (int64_t i = 0; i < y.numel(); ++i) EXPECT_EQ(ym[i], y[i]);
}

TEST(Mixup, RowsRemainConvexCombinations) {
  std::mt19937 rng(92);
  Ten<float> x({6, 3});
  std::uniform_real_distribution<float> d(-1, 1);
  for (auto& v : x.data) v = d(rng);
  Ten<float> y({6, 4});
  for (int64_t i = 0; i < 6; ++i) y.at2(i, i % 4) = 1.f;
  auto [xm, ym] = mixup_batch(x, y, 0.4, rng);
  // one-hot rows mix to rows that still sum to 1 with entries in [0,1]
  for (int64_t n = 0; n < 6; ++n) {
    float s = 0;
    for (int64_t k = 0; k < 4; ++k) {
      s += ym.at2(n, k);
      EXPECT_GE(ym.at2(n, k), 0.f);
      EXPECT_LE(ym.at2(n, k), 1.f);
    }
    EXPECT_NEAR(s, 1.f, 1e-5);
  }
  EXPECT_THROW(mixup_batch(x, y, -0.1, rng), std::invalid_argument);
}

TEST(Evaluate, PerfectAndTopKOrdering) {
  auto ds = synthetic_dataset(7, 3, 30, {3, 8, 8}, 0.1);
  auto net = build_network<float>(tiny_cfg(NetVariant::RealTeacher), 5);
  auto r = evaluate(net, ds);
  EXPECT_GE(r.top5, r.top1);
  EXPECT_LE(r.top1, 100.0);
  // 3 classes means top-5 covers everything
  EXPECT_DOUBLE_EQ(r.top5, 100.0);
}

TEST(TrainStage, LossDecreasesOnSeparableData) {
  auto ds = synthetic_dataset(13, 3, 120, {3, 8, 8}, 0.2);
  auto net = build_network<float>(tiny_cfg(NetVariant::RealTeacher), 21);
  OptimizerPolicy p;
  p.lr = 1e-3;
  p.epochs = 4;
  p.batch_size = 30;
  p.seed = 1;
  LossConfig losses;
  losses.att_weight = 0;
  losses.kd_weight = 0;
  auto m = train_stage(net, ds, p, losses);
  EXPECT_LT(m.final_train_loss, m.first_epoch_loss);
  EXPECT_GT(m.train_top1, 50.0);
}

TEST(TrainStage, TeacherMustBeFrozen) {
  auto ds = synthetic_dataset(14, 3, 30, {3, 8, 8});
  auto net = build_network<float>(tiny_cfg(NetVariant::BinAct), 22);
  auto teacher = build_network<float>(tiny_cfg(NetVariant::BinAct), 23);
  OptimizerPolicy p;
  p.epochs = 1;
  p.batch_size = 30;
  LossConfig losses;
  EXPECT_THROW(train_stage(net, ds, p, losses, &teacher), std::invalid_argument);
}

TEST(TrainStage, DistillationRunsWithAllLossTerms) {
  auto ds = synthetic_dataset(15, 3, 60, {3, 8, 8}, 0.3);
  auto teacher = build_network<float>(tiny_cfg(NetVariant::RealSoft), 31);
  teacher.freeze();
  auto net = build_network<float>(tiny_cfg(NetVariant::BinAct), 32);
  OptimizerPolicy p;
  p.lr = 1e-3;
  p.epochs = 2;
  p.batch_size = 20;
  LossConfig losses;  // ce + att + kd all active
  auto m = train_stage(net, ds, p, losses, &teacher);
  EXPECT_TRUE(std::isfinite(m.final_train_loss));
  // teacher must not have accumulated gradients
  for (auto& [name, tp] : teacher.named_params)
    for (int64_t i = 0; i < tp->grad.numel(); ++i) ASSERT_EQ(tp->grad[i], 0.f);
}

TEST(TrainStage, MetricsFilesWellFormed) {
  namespace fs = std::filesystem;
  auto ds = synthetic_dataset(16, 3, 30, {3, 8, 8});
  auto net = build_network<float>(tiny_cfg(NetVariant::RealTeacher), 41);
  OptimizerPolicy p;
  p.epochs = 2;
  p.batch_size = 15;
  LossConfig losses;
  losses.att_weight = 0;
  losses.kd_weight = 0;
  TrainOptions opts;
  opts.deterministic = true;
  opts.metrics_jsonl = (fs::temp_directory_path() / "r2b_metrics.jsonl").string();
  opts.metrics_csv = (fs::temp_directory_path() / "r2b_metrics.csv").string();
  opts.eval_data = &ds;
  train_stage(net, ds, p, losses, static_cast<Network<float>*>(nullptr), opts);

  std::ifstream jl(opts.metrics_jsonl);
  std::string line;
  int lines = 0;
  while (std::getline(jl, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("epoch") && j.contains("split") && j.contains("loss") &&
                j.contains("lr") && j.contains("top1"));
    EXPECT_DOUBLE_EQ(j.at("wall_ms").get<double>(), 0.0);  // deterministic mode
    ++lines;
  }
  EXPECT_EQ(lines, 4);  // train + test per epoch
  const std::string csv = slurp(opts.metrics_csv);
  EXPECT_EQ(csv.rfind("epoch,split,loss,ce,att,kd,lr,top1,top5,wall_ms\n", 0), 0u);
  fs::remove(opts.metrics_jsonl);
  fs::remove(opts.metrics_csv);
}

TEST(TrainStage, DeterministicAcrossRuns) {
  auto ds = synthetic_dataset(17, 3, 40, {3, 8, 8});
  OptimizerPolicy p;
  p.lr = 1e-3;
  p.epochs = 2;
  p.batch_size = 20;
  p.seed = 5;
  p.mixup_alpha = 0.2;
  LossConfig losses;
  losses.att_weight = 0;
  losses.kd_weight = 0;
  auto run = [&] {
    auto net = build_network<float>(tiny_cfg(NetVariant::BinAct), 51);
    train_stage(net, ds, p, losses);
    return net;
  };
  auto a = run();
  auto b = run();
  for (size_t i = 0; i < a.named_params.size(); ++i) {
    const auto& pa = a.named_params[i].second->value;
    const auto& pb = b.named_params[i].second->value;
    for (int64_t j = 0; j < pa.numel(); ++j) ASSERT_EQ(pa[j], pb[j]);
  }
}

TEST(TrainStage, RejectsEmptyDataset) {
  Dataset empty;
  auto net = build_network<float>(tiny_cfg(NetVariant::RealTeacher), 61);
  OptimizerPolicy p;
  LossConfig losses;
  EXPECT_THROW(train_stage(net, empty, p, losses), std::invalid_argument);
}
