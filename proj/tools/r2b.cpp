// Command-line driver: train / distill / eval / count-ops / bench-kernel /
// selftest. Configuration precedence is defaults < --config file < flags,
// and the resolved configuration is written into the run directory before
// anything executes.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "r2b/binconv.hpp"
#include "r2b/checkpoint.hpp"
#include "r2b/cost.hpp"
#include "r2b/distill.hpp"
#include "r2b/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace r2b;

namespace {

struct RunConfig {
  std::string out = "run";
  uint64_t seed = 0;
  std::string dataset = "synthetic";  // cifar10 | cifar100 | synthetic
  std::string preset = "sb";
  std::string stage = "bin-act";      // teacher | real-soft | bin-act | full-bin
  int threads = 1;
  bool deterministic = false;
  int epochs = 2;
  int batch_size = 32;
  double lr = 1e-3;
  int base_width = 16;
  std::vector<int> blocks_per_stage = {1, 1};
  int synthetic_classes = 4;
  int synthetic_n = 256;
  std::string init_checkpoint;        // optional warm start / stage hand-off
  std::string teacher_checkpoint;

  json to_json() const {
    return json{{"out", out},
                {"seed", seed},
                {"dataset", dataset},
                {"preset", preset},
                {"stage", stage},
                {"threads", threads},
                {"deterministic", deterministic},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"lr", lr},
                {"base_width", base_width},
                {"blocks_per_stage", blocks_per_stage},
                {"synthetic_classes", synthetic_classes},
                {"synthetic_n", synthetic_n},
                {"init_checkpoint", init_checkpoint},
                {"teacher_checkpoint", teacher_checkpoint}};
  }

  void apply_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw CLI::ValidationError("--config", "cannot open " + path);
    json j = json::parse(is);
    out = j.value("out", out);
    seed = j.value("seed", seed);
    dataset = j.value("dataset", dataset);
    preset = j.value("preset", preset);
    stage = j.value("stage", stage);
    threads = j.value("threads", threads);
    deterministic = j.value("deterministic", deterministic);
    epochs = j.value("epochs", epochs);
    batch_size = j.value("batch_size", batch_size);
    lr = j.value("lr", lr);
    base_width = j.value("base_width", base_width);
    if (j.contains("blocks_per_stage"))
      blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
    synthetic_classes = j.value("synthetic_classes", synthetic_classes);
    synthetic_n = j.value("synthetic_n", synthetic_n);
    init_checkpoint = j.value("init_checkpoint", init_checkpoint);
    teacher_checkpoint = j.value("teacher_checkpoint", teacher_checkpoint);
  }
};

// Experiment presets mirroring the ablation rows: which loss terms are on,
// whether the gating module is built, and whether the full progressive
// schedule replaces plain two-stage training.
struct Preset {
  bool gating = false;
  double att_weight = 0.0;
  double kd_weight = 0.0;
  bool progressive = false;
};

Preset resolve_preset(const std::string& name) {
  if (name == "sb") return {false, 0.0, 0.0, false};
  if (name == "sb-att") return {false, 1.25, 0.0, false};
  if (name == "sb-att-hkd") return {false, 1.25, 1.0, false};
  if (name == "sb-g") return {true, 0.0, 0.0, false};
  if (name == "sb-prog-ts") return {false, 1.25, 1.0, true};
  if (name == "real-to-bin") return {true, 1.25, 1.0, true};
  throw CLI::ValidationError("--preset", "unknown preset '" + name + "'");
}

NetVariant resolve_stage(const std::string& s) {
  if (s == "teacher") return NetVariant::RealTeacher;
  if (s == "real-soft") return NetVariant::RealSoft;
  if (s == "bin-act") return NetVariant::BinAct;
  if (s == "full-bin") return NetVariant::FullBin;
  throw CLI::ValidationError("--stage", "unknown stage '" + s + "'");
}

std::string dataset_root() {
  const char* env = std::getenv("R2B_DATA_DIR");
  return env ? env : "";
}

std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg) {
  if (cfg.dataset == "synthetic") {
    auto train = synthetic_dataset(cfg.seed, cfg.synthetic_classes, cfg.synthetic_n);
    auto test =
        synthetic_dataset(cfg.seed + 1, cfg.synthetic_classes, std::max<int64_t>(32, cfg.synthetic_n / 4));
    return {std::move(train), std::move(test)};
  }
  const std::string root = dataset_root();
  if (root.empty())
    throw std::runtime_error("dataset '" + cfg.dataset + "' needs R2B_DATA_DIR to be set");
  if (cfg.dataset == "cifar10") return load_cifar(root, CifarVariant::Cifar10);
  if (cfg.dataset == "cifar100") return load_cifar(root, CifarVariant::Cifar100);
  throw std::runtime_error("unknown dataset '" + cfg.dataset + "'");
}

NetConfig make_net_config(const RunConfig& cfg, const Preset& preset, NetVariant variant,
                          int classes) {
  NetConfig nc;
  nc.variant = variant;
  nc.num_classes = classes;
  nc.base_width = cfg.base_width;
  nc.blocks_per_stage = cfg.blocks_per_stage;
  nc.gating = preset.gating;
  return nc;
}

void dump_resolved_config(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.out);
  json j = cfg.to_json();
  j["command"] = command;
  std::ofstream os(fs::path(cfg.out) / "config.resolved.json");
  os << j.dump(2) << "\n";
}

int cmd_train(const RunConfig& cfg) {
  const Preset preset = resolve_preset(cfg.preset);
  dump_resolved_config(cfg, "train");
  auto [train, test] = load_datasets(cfg);

  const NetVariant variant = resolve_stage(cfg.stage);
  NetConfig nc = make_net_config(cfg, preset, variant, train.class_count);
  auto net = build_network<float>(nc, cfg.seed);
  if (!cfg.init_checkpoint.empty()) load_checkpoint_into(net, cfg.init_checkpoint);

  std::optional<Network<float>> teacher;
  LossConfig losses;
  losses.att_weight = preset.att_weight;
  losses.kd_weight = preset.kd_weight;
  if (!cfg.teacher_checkpoint.empty()) {
    teacher = load_network<float>(cfg.teacher_checkpoint);
    teacher->freeze();
  } else {
    losses.att_weight = 0;  // no teacher available: plain CE training
    losses.kd_weight = 0;
  }

  OptimizerPolicy policy;
  policy.lr = cfg.lr;
  policy.epochs = cfg.epochs;
  policy.batch_size = cfg.batch_size;
  policy.seed = cfg.seed;
  policy.weight_decay = variant == NetVariant::FullBin ? 0.0 : 1e-5;

  TrainOptions opts;
  opts.deterministic = cfg.deterministic;
  opts.metrics_jsonl = (fs::path(cfg.out) / "metrics.jsonl").string();
  opts.metrics_csv = (fs::path(cfg.out) / "metrics.csv").string();
  opts.eval_data = &test;
  auto metrics = train_stage(net, train, policy, losses, teacher ? &*teacher : nullptr, opts);
  save_checkpoint(net, (fs::path(cfg.out) / "final.ckpt").string());

  json summary{{"final_train_loss", metrics.final_train_loss},
               {"train_top1", metrics.train_top1},
               {"test_top1", metrics.eval.top1},
               {"test_top5", metrics.eval.top5}};
  std::ofstream(fs::path(cfg.out) / "summary.json") << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_distill(const RunConfig& cfg) {
  const Preset preset = resolve_preset(cfg.preset);
  dump_resolved_config(cfg, "distill");
  auto [train, test] = load_datasets(cfg);

  auto schedule = default_progressive_schedule(cfg.epochs, cfg.batch_size, cfg.seed);
  if (!preset.progressive) {
    // plain two-stage run: binary activations first, then binary weights
    std::vector<StageSpec> two;
    two.push_back(schedule[2]);
    two[0].teacher.reset();
    two[0].init_from_previous = false;
    two[0].losses.att_weight = 0;
    two[0].losses.kd_weight = 0;
    two.push_back(schedule[3]);
    two[1].teacher.reset();
    two[1].losses = two[0].losses;
    two[1].losses.ce_weight = 1.0;
    schedule = std::move(two);
  }
  for (auto& s : schedule) {
    s.losses.att_weight = s.losses.att_weight > 0 ? preset.att_weight : 0.0;
    s.losses.kd_weight =
        (s.losses.kd_weight > 0 || s.name == "step3-full-bin") ? std::max(preset.kd_weight, s.losses.kd_weight) : 0.0;
  }

  NetConfig base = make_net_config(cfg, preset, NetVariant::FullBin, train.class_count);
  auto result = run_progressive<float>(schedule, base, train, &test, cfg.out, cfg.deterministic);
  json summary{{"final_checkpoint", result.final_checkpoint},
               {"stages", result.stage_metrics.size()},
               {"final_train_loss", result.stage_metrics.back().final_train_loss},
               {"test_top1", result.stage_metrics.back().eval.top1}};
  std::ofstream(fs::path(cfg.out) / "summary.json") << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt) {
  dump_resolved_config(cfg, "eval");
  auto [train, test] = load_datasets(cfg);
  auto net = load_network<float>(ckpt);
  auto r = evaluate(net, test);
  json j{{"checkpoint", ckpt}, {"top1", r.top1}, {"top5", r.top5}, {"samples", test.size()}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_count_ops(const std::string& arch, int input) {
  std::string name = arch;
  if (arch == "resnet18-fullbin") name = "ours";
  const OpCount oc = count_ops(CostArch::preset(name), input);
  std::cout << "layer                          BOPs           FLOPs\n";
  for (const auto& l : oc.layers)
    std::cout << l.name << std::string(l.name.size() < 28 ? 28 - l.name.size() : 1, ' ')
              << std::setw(12) << l.bops << "  " << std::setw(12) << l.flops << "\n";
  std::cout << "total" << std::string(23, ' ') << std::setw(12) << oc.bops << "  " << std::setw(12)
            << oc.flops << "\n";
  json j{{"arch", name}, {"input", input}, {"bops", oc.bops}, {"flops", oc.flops}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_bench_kernel(uint64_t seed) {
  std::mt19937 rng(static_cast<uint32_t>(seed));
  std::bernoulli_distribution coin(0.5);
  std::cout << "shape                      binary_ms      reference_ms\n";
  for (const auto& [C, O, H] : std::vector<std::tuple<int64_t, int64_t, int64_t>>{
           {64, 64, 16}, {128, 128, 8}, {256, 256, 4}}) {
    Tensor x({1, C, H, H}), w({O, C, 3, 3});
    for (auto& v : x.data) v = coin(rng) ? 1.f : -1.f;
    for (auto& v : w.data) v = coin(rng) ? 1.f : -1.f;
    const auto xb = pack(x), wb = pack(w);
    auto t0 = std::chrono::steady_clock::now();
    auto yb = binary_conv2d(xb, wb, 1, 1);
    auto t1 = std::chrono::steady_clock::now();
    auto yr = conv2d_ref(x, w, 1, 1);
    auto t2 = std::chrono::steady_clock::now();
    for (int64_t i = 0; i < yb.numel(); ++i)
      if (yb[i] != yr[i]) {
        std::cerr << "bench-kernel: kernel mismatch\n";
        return 1;
      }
    const double bms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const double rms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    std::cout << "C=" << C << " O=" << O << " " << H << "x" << H << "        " << std::fixed
              << std::setprecision(3) << std::setw(10) << bms << "  " << std::setw(14) << rms
              << "\n";
  }
  return 0;
}

int cmd_selftest() {
  int failures = 0;
  auto check = [&failures](const char* name, bool ok) {
    std::cout << (ok ? "[ ok ] " : "[FAIL] ") << name << "\n";
    if (!ok) ++failures;
  };
  // kernel equivalence on random sign tensors
  {
    std::mt19937 rng(1);
    std::bernoulli_distribution coin(0.5);
    bool ok = true;
    for (int t = 0; t < 50 && ok; ++t) {
      std::uniform_int_distribution<int64_t> cdist(1, 96), hdist(3, 8);
      Tensor x({2, cdist(rng), hdist(rng), hdist(rng)});
      Tensor w({3, x.dim(1), 3, 3});
      for (auto& v : x.data) v = coin(rng) ? 1.f : -1.f;
      for (auto& v : w.data) v = coin(rng) ? 1.f : -1.f;
      auto yb = binary_conv2d(pack(x), pack(w), 1, 1);
      auto yr = conv2d_ref(x, w, 1, 1);
      for (int64_t i = 0; i < yb.numel(); ++i)
        if (yb[i] != yr[i]) ok = false;
    }
    check("binary conv matches reference", ok);
  }
  // gradient check for a small composite graph
  {
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> d(-1, 1);
    Ten<double> xv({2, 3, 4, 4});
    for (auto& v : xv.data) v = d(rng);
    auto x = make_param(xv);
    auto s = make_param(Ten<double>({3}, 0.3));
    auto build = [&] {
      auto y = ag::prelu(x, s);
      return ag::softmax_cross_entropy(ag::global_avg_pool(y), std::vector<int>{0, 2});
    };
    check("autograd finite differences", finite_diff_check<double>(build, {x, s}, 1e-6) < 1e-4);
  }
  // loss identities
  {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> d(-1, 1);
    Ten<double> a({2, 3, 4, 4});
    for (auto& v : a.data) v = d(rng);
    Ten<double> z({3, 5});
    for (auto& v : z.data) v = d(rng);
    check("attention loss zero on identical maps", attention_point_loss(a, a) < 1e-9);
    check("kd loss zero on identical logits", kd_loss(z, z, 3.0) < 1e-9);
  }
  // checkpoint round trip
  {
    NetConfig nc;
    nc.num_classes = 3;
    nc.base_width = 8;
    nc.blocks_per_stage = {1};
    auto net = build_network<float>(nc, 4);
    const std::string p = (fs::temp_directory_path() / "r2b_selftest.ckpt").string();
    save_checkpoint(net, p);
    auto back = load_network<float>(p);
    bool ok = back.named_params.size() == net.named_params.size();
    for (size_t i = 0; ok && i < net.named_params.size(); ++i) {
      const auto& va = net.named_params[i].second->value;
      const auto& vb = back.named_params[i].second->value;
      for (int64_t j = 0; j < va.numel(); ++j)
        if (va[j] != vb[j]) ok = false;
    }
    fs::remove(p);
    check("checkpoint round trip", ok);
  }
  std::cout << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binary network training and profiling toolkit"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_file, eval_ckpt;
  std::string arch = "resnet18-fullbin";
  int input = 224;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON config file (defaults < file < flags)");
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--seed", cfg.seed, "RNG seed");
    sub->add_option("--dataset", cfg.dataset, "cifar10 | cifar100 | synthetic")
        ->check(CLI::IsMember({"cifar10", "cifar100", "synthetic"}));
    sub->add_option("--preset", cfg.preset,
                    "sb | sb-att | sb-att-hkd | sb-g | sb-prog-ts | real-to-bin");
    sub->add_option("--stage", cfg.stage, "teacher | real-soft | bin-act | full-bin");
    sub->add_option("--threads", cfg.threads, "worker threads (reserved; kernels run serial)");
    sub->add_flag("--deterministic", cfg.deterministic,
                  "zero wall-clock fields; byte-reproducible logs");
    sub->add_option("--epochs", cfg.epochs, "epochs (per stage for distill)");
    sub->add_option("--batch-size", cfg.batch_size, "batch size");
    sub->add_option("--lr", cfg.lr, "base learning rate");
    sub->add_option("--base-width", cfg.base_width, "stem width");
    sub->add_option("--init-checkpoint", cfg.init_checkpoint, "warm-start checkpoint");
    sub->add_option("--teacher-checkpoint", cfg.teacher_checkpoint, "frozen teacher checkpoint");
  };

  auto* train = app.add_subcommand("train", "train a single stage");
  add_common(train);
  auto* distill = app.add_subcommand("distill", "run the progressive schedule");
  add_common(distill);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval);
  eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();
  auto* count = app.add_subcommand("count-ops", "per-layer BOPs/FLOPs breakdown");
  count->add_option("--arch", arch, "configuration name or resnet18-fullbin");
  count->add_option("--input", input, "input spatial extent");
  auto* bench = app.add_subcommand("bench-kernel", "binary vs reference conv timing");
  bench->add_option("--seed", cfg.seed, "RNG seed");
  auto* self = app.add_subcommand("selftest", "run the built-in oracle suites");
  (void)self;

  // parse once to capture the file path, apply the file, then re-parse so
  // flags take precedence over file values
  try {
    app.parse(argc, argv);
    if (!config_file.empty()) {
      cfg.apply_file(config_file);
      app.clear();
      app.parse(argc, argv);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (train->parsed()) return cmd_train(cfg);
    if (distill->parsed()) return cmd_distill(cfg);
    if (eval->parsed()) return cmd_eval(cfg, eval_ckpt);
    if (count->parsed()) return cmd_count_ops(arch, input);
    if (bench->parsed()) return cmd_bench_kernel(cfg.seed);
    return cmd_selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
