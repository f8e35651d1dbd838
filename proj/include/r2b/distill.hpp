#pragma once

#include <filesystem>

#include "r2b/checkpoint.hpp"
#include "r2b/trainer.hpp"

namespace r2b {

// One teacher-student training stage of the progressive pipeline.
struct StageSpec {
  std::string name;
  std::optional<NetVariant> teacher;    // absent for plain baseline training
  std::string teacher_checkpoint;       // optional; defaults to previous stage output
  NetVariant student = NetVariant::FullBin;
  LossConfig losses;
  OptimizerPolicy optimizer;
  bool init_from_previous = true;       // fresh init otherwise
};

inline nlohmann::json stage_to_json(const StageSpec& s) {
  nlohmann::json j{{"name", s.name},
                   {"student", variant_name(s.student)},
                   {"losses",
                    {{"ce", s.losses.ce_weight},
                     {"att", s.losses.att_weight},
                     {"kd", s.losses.kd_weight},
                     {"tau", s.losses.tau}}},
                   {"optimizer", policy_to_json(s.optimizer)},
                   {"init", s.init_from_previous ? "from-checkpoint" : "fresh"}};
  if (s.teacher) j["teacher"] = variant_name(*s.teacher);
  if (!s.teacher_checkpoint.empty()) j["teacher_checkpoint"] = s.teacher_checkpoint;
  return j;
}

inline StageSpec stage_from_json(const nlohmann::json& j) {
  StageSpec s;
  s.name = j.value("name", std::string());
  if (j.contains("teacher")) {
    auto v = variant_from_name(j.at("teacher").get<std::string>());
    detail::require(v.has_value(), "stage: unknown teacher variant");
    s.teacher = v;
  }
  s.teacher_checkpoint = j.value("teacher_checkpoint", std::string());
  auto sv = variant_from_name(j.value("student", std::string("full_bin")));
  detail::require(sv.has_value(), "stage: unknown student variant");
  s.student = *sv;
  if (j.contains("losses")) {
    const auto& l = j.at("losses");
    s.losses.ce_weight = l.value("ce", s.losses.ce_weight);
    s.losses.att_weight = l.value("att", s.losses.att_weight);
    s.losses.kd_weight = l.value("kd", s.losses.kd_weight);
    s.losses.tau = l.value("tau", s.losses.tau);
  }
  if (j.contains("optimizer")) s.optimizer = policy_from_json(j.at("optimizer"));
  s.init_from_previous = j.value("init", std::string("from-checkpoint")) == "from-checkpoint";
  return s;
}

template <typename T>
Network<T>& freeze_teacher(Network<T>& net) {
  net.freeze();
  return net;
}

// The default progression: train the real teacher, then chain
// real -> soft-binarized -> binary-activation -> fully binary students.
// The last stage uses logit matching only. lr and weight decay follow the
// two-stage recipe (1e-3 / 1e-5 before weight binarization, 2e-4 / 0 after).
inline std::vector<StageSpec> default_progressive_schedule(int epochs_per_stage,
                                                           int batch_size, uint64_t seed) {
  auto policy = [&](double lr, double wd) {
    OptimizerPolicy p;
    p.lr = lr;
    p.weight_decay = wd;
    p.epochs = epochs_per_stage;
    p.batch_size = batch_size;
    p.seed = seed;
    return p;
  };
  StageSpec s0;
  s0.name = "teacher";
  s0.student = NetVariant::RealTeacher;
  s0.losses.att_weight = 0;
  s0.losses.kd_weight = 0;
  s0.optimizer = policy(1e-3, 1e-5);
  s0.init_from_previous = false;

  StageSpec s1;
  s1.name = "step1-real-soft";
  s1.teacher = NetVariant::RealTeacher;
  s1.student = NetVariant::RealSoft;
  s1.optimizer = policy(1e-3, 1e-5);
  s1.init_from_previous = false;  // topology differs from the teacher

  StageSpec s2;
  s2.name = "step2-bin-act";
  s2.teacher = NetVariant::RealSoft;
  s2.student = NetVariant::BinAct;
  s2.optimizer = policy(1e-3, 1e-5);
  s2.optimizer.warmup_epochs = std::min(5, std::max(1, epochs_per_stage / 4));

  StageSpec s3;
  s3.name = "step3-full-bin";
  s3.teacher = NetVariant::BinAct;
  s3.student = NetVariant::FullBin;
  s3.losses.ce_weight = 0;  // only logit matching in the final step
  s3.losses.att_weight = 0;
  s3.optimizer = policy(2e-4, 0.0);
  return {s0, s1, s2, s3};
}

struct ProgressiveResult {
  std::string final_checkpoint;
  std::vector<StageMetrics> stage_metrics;
};

// Execute the stages in order. Each stage writes <out_dir>/<k>-<name>.ckpt
// and a metrics record; the student of stage k initializes from stage k-1's
// checkpoint when shapes permit.
template <typename T = float>
ProgressiveResult run_progressive(const std::vector<StageSpec>& schedule, NetConfig base_cfg,
                                  const Dataset& train, const Dataset* test,
                                  const std::string& out_dir, bool deterministic = false) {
  detail::require(!schedule.empty(), "run_progressive: empty schedule");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ProgressiveResult result;
  std::string prev_ckpt;
  std::optional<NetVariant> prev_variant;
  for (size_t k = 0; k < schedule.size(); ++k) {
    const StageSpec& spec = schedule[k];
    NetConfig cfg = base_cfg;
    cfg.variant = spec.student;
    cfg.num_classes = train.class_count;
    Network<T> student = build_network<T>(cfg, spec.optimizer.seed);

    if (spec.init_from_previous && !prev_ckpt.empty()) {
      // shape-chainable only within the binary-family topologies
      detail::require(prev_variant && *prev_variant != NetVariant::RealTeacher &&
                          spec.student != NetVariant::RealTeacher,
                      "run_progressive: stage " + std::to_string(k) +
                          " cannot chain from a different topology");
      load_checkpoint_into(student, prev_ckpt);
    }

    std::optional<Network<T>> teacher;
    if (spec.teacher) {
      std::string tpath = spec.teacher_checkpoint;
      if (tpath.empty()) tpath = prev_ckpt;
      detail::require(!tpath.empty() && fs::exists(tpath),
                      "run_progressive: stage " + std::to_string(k) +
                          " teacher checkpoint missing: " + (tpath.empty() ? "<none>" : tpath));
      teacher = load_network<T>(tpath, spec.teacher);
      teacher->freeze();
    }

    const std::string stem =
        (fs::path(out_dir) / (std::to_string(k) + "-" + (spec.name.empty() ? "stage" : spec.name)))
            .string();
    TrainOptions opts;
    opts.deterministic = deterministic;
    opts.metrics_jsonl = stem + ".metrics.jsonl";
    opts.metrics_csv = stem + ".metrics.csv";
    opts.eval_data = test;
    StageMetrics m;
    try {
      m = train_stage(student, train, spec.optimizer, spec.losses,
                      teacher ? &*teacher : nullptr, opts);
    } catch (const std::exception& e) {
      throw std::runtime_error("run_progressive: stage " + std::to_string(k) + " (" + spec.name +
                               ") failed: " + e.what());
    }
    result.stage_metrics.push_back(m);
    const std::string ckpt = stem + ".ckpt";
    save_checkpoint(student, ckpt);
    prev_ckpt = ckpt;
    prev_variant = spec.student;
  }
  result.final_checkpoint = prev_ckpt;
  return result;
}

}  // namespace r2b
