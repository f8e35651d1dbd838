#pragma once

#include <optional>
#include <random>

#include "r2b/autograd.hpp"
#include "r2b/gating.hpp"

namespace r2b {

// Which stage of the real-to-binary progression a network instance realizes.
// RealSoft / BinAct / FullBin share one topology and parameter set; only the
// forward interpretation differs, so checkpoints hand off between them.
enum class NetVariant { RealTeacher, RealSoft, BinAct, FullBin };

inline const char* variant_name(NetVariant v) {
  switch (v) {
    case NetVariant::RealTeacher: return "real_teacher";
    case NetVariant::RealSoft: return "real_soft";
    case NetVariant::BinAct: return "bin_act";
    case NetVariant::FullBin: return "full_bin";
  }
  return "?";
}

inline std::optional<NetVariant> variant_from_name(const std::string& s) {
  for (NetVariant v : {NetVariant::RealTeacher, NetVariant::RealSoft, NetVariant::BinAct,
                       NetVariant::FullBin})
    if (s == variant_name(v)) return v;
  return std::nullopt;
}

enum class StemKind { Cifar, ImageNet };

struct NetConfig {
  NetVariant variant = NetVariant::FullBin;
  int num_classes = 10;
  int in_channels = 3;
  int base_width = 64;
  std::vector<int> blocks_per_stage = {2, 2, 2, 2};
  StemKind stem = StemKind::Cifar;
  bool scaling = true;          // learned per-channel Γ
  bool gating = true;
  int gate_r = 8;
  bool real_downsample = true;
  bool per_channel_prelu = true;

  int num_blocks() const {
    int n = 0;
    for (int b : blocks_per_stage) n += b;
    return n;
  }

  // Digest over topology-relevant fields; the variant is excluded so that
  // progressive-stage checkpoints chain.
  uint64_t topology_digest() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t v) {
      h ^= v;
      h *= 1099511628211ull;
    };
    mix(static_cast<uint64_t>(num_classes));
    mix(static_cast<uint64_t>(in_channels));
    mix(static_cast<uint64_t>(base_width));
    for (int b : blocks_per_stage) mix(static_cast<uint64_t>(b));
    mix(stem == StemKind::Cifar ? 1 : 2);
    mix(scaling ? 3 : 4);
    mix(gating ? 5 : 6);
    mix(static_cast<uint64_t>(gate_r));
    mix(real_downsample ? 7 : 8);
    mix(per_channel_prelu ? 9 : 10);
    return h;
  }
};

template <typename T = float>
struct ForwardResult {
  NodeP<T> logits;
  std::vector<NodeP<T>> transfer;  // one per block, stem -> head order
  std::vector<NodeP<T>> prebin;    // first-unit BN output per block
};

namespace netdetail {

template <typename T>
Ten<T> he_normal(std::vector<int64_t> shape, int64_t fan_in, std::mt19937& rng) {
  Ten<T> w(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(dist(rng));
  return w;
}

template <typename T>
Ten<T> uniform_fan_in(std::vector<int64_t> shape, int64_t fan_in, std::mt19937& rng) {
  Ten<T> w(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(dist(rng));
  return w;
}

}  // namespace netdetail

template <typename T = float>
struct BatchNormLayer {
  NodeP<T> gamma, beta;
  ag::BNState<T> state;

  void init(int64_t C) {
    gamma = make_param(Ten<T>({C}, T(1)));
    beta = make_param(Ten<T>({C}));
    state = ag::BNState<T>(C);
  }
  NodeP<T> forward(const NodeP<T>& x, BNMode mode) {
    return ag::batchnorm2d(x, gamma, beta, state, mode);
  }
};

// One conv unit of a real-to-binary block. Operation order is fixed:
// BatchNorm -> (binarize) -> conv -> scale -> PReLU, with the skip added last.
// The gate reads the BatchNorm output, before binarization.
template <typename T = float>
struct ConvUnit {
  int in_channels = 0, out_channels = 0, stride = 1;
  BatchNormLayer<T> bn;
  NodeP<T> conv_w;                       // [O,C,3,3]
  NodeP<T> log_gamma;                    // [O], optional
  std::optional<GatingParams<T>> gate_p;
  NodeP<T> slope;                        // PReLU
  // downsample path (real mode): 1x1 conv + BN
  NodeP<T> ds_w;
  NodeP<T> ds_log_gamma;                 // binary downsample scaling
  BatchNormLayer<T> ds_bn;

  bool needs_downsample() const { return stride != 1 || in_channels != out_channels; }
};

enum class Binarize { None, Tanh, Sign };

template <typename T = float>
struct RealBlock {  // standard ResNet basic block (teacher)
  int in_channels = 0, out_channels = 0, stride = 1;
  NodeP<T> conv1_w, conv2_w;
  BatchNormLayer<T> bn1, bn2;
  NodeP<T> ds_w;
  BatchNormLayer<T> ds_bn;
  bool needs_downsample() const { return stride != 1 || in_channels != out_channels; }
};

template <typename T = float>
struct BinaryBlock {
  ConvUnit<T> unit1, unit2;
};

template <typename T = float>
class Network {
 public:
  NetConfig cfg;
  bool frozen = false;

  // stem
  NodeP<T> stem_w;
  BatchNormLayer<T> stem_bn;
  NodeP<T> stem_slope;
  // body: exactly one of these is populated
  std::vector<BinaryBlock<T>> blocks;
  std::vector<RealBlock<T>> real_blocks;
  // head
  NodeP<T> fc_w, fc_b;

  std::vector<std::pair<std::string, NodeP<T>>> named_params;

  // BN running stats, collected fresh so the list survives moves.
  std::vector<std::pair<std::string, std::vector<T>*>> named_buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    auto add_bn = [&out](const std::string& prefix, BatchNormLayer<T>& bn) {
      out.push_back({prefix + ".running_mean", &bn.state.running_mean});
      out.push_back({prefix + ".running_var", &bn.state.running_var});
    };
    add_bn("stem.bn", stem_bn);
    auto block_prefix = [this](size_t flat) {
      size_t i = flat;
      for (size_t s = 0; s < cfg.blocks_per_stage.size(); ++s) {
        const size_t n = static_cast<size_t>(cfg.blocks_per_stage[s]);
        if (i < n) return "stage" + std::to_string(s) + ".block" + std::to_string(i);
        i -= n;
      }
      throw std::logic_error("block index out of range");
    };
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = block_prefix(i);
      for (int ui = 0; ui < 2; ++ui) {
        ConvUnit<T>& u = ui == 0 ? blocks[i].unit1 : blocks[i].unit2;
        const std::string up = p + ".unit" + std::to_string(ui);
        add_bn(up + ".bn", u.bn);
        if (u.needs_downsample()) add_bn(up + ".ds.bn", u.ds_bn);
      }
    }
    for (size_t i = 0; i < real_blocks.size(); ++i) {
      const std::string p = block_prefix(i);
      add_bn(p + ".bn1", real_blocks[i].bn1);
      add_bn(p + ".bn2", real_blocks[i].bn2);
      if (real_blocks[i].needs_downsample()) add_bn(p + ".ds.bn", real_blocks[i].ds_bn);
    }
    return out;
  }

  std::vector<NodeP<T>> params() const {
    std::vector<NodeP<T>> out;
    out.reserve(named_params.size());
    for (auto& [name, p] : named_params) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto& [name, p] : named_params) p->zero_grad();
  }

  void freeze() {
    frozen = true;
    for (auto& [name, p] : named_params) p->requires_grad = false;
  }

  bool is_binary_family() const { return cfg.variant != NetVariant::RealTeacher; }

  Binarize binarize_kind() const {
    switch (cfg.variant) {
      case NetVariant::RealTeacher: return Binarize::None;
      case NetVariant::RealSoft: return Binarize::Tanh;
      default: return Binarize::Sign;
    }
  }
  bool binary_weights() const { return cfg.variant == NetVariant::FullBin; }

  // Names of conv weights that are sign-interpreted at forward time; the
  // trainer clamps these latents to [-1,1] and excludes them from decay.
  bool is_latent_binary_weight(const std::string& name) const {
    if (!binary_weights()) return false;
    if (name.find(".conv.w") == std::string::npos && name.find(".ds.w") == std::string::npos)
      return false;
    if (name.rfind("stem.", 0) == 0) return false;
    if (name.find(".ds.w") != std::string::npos && cfg.real_downsample) return false;
    return true;
  }

  ForwardResult<T> forward(const Ten<T>& input, BNMode mode) {
    if (frozen) mode = BNMode::Eval;
    ForwardResult<T> res;
    auto x = make_constant(input);
    x = stem_forward(x, mode);
    if (is_binary_family()) {
      for (auto& blk : blocks) {
        auto [y1, pre1] = unit_forward(blk.unit1, x, mode);
        auto [y2, pre2] = unit_forward(blk.unit2, y1, mode);
        res.prebin.push_back(pre1);
        res.transfer.push_back(y2);
        x = y2;
      }
    } else {
      for (auto& blk : real_blocks) {
        x = real_block_forward(blk, x, mode);
        res.prebin.push_back(x);
        res.transfer.push_back(x);
      }
    }
    auto pooled = ag::global_avg_pool(x);
    res.logits = ag::linear(pooled, fc_w, fc_b);
    return res;
  }

  // --- construction -------------------------------------------------------

  static Network build(const NetConfig& cfg, uint64_t seed) {
    detail::require(cfg.num_classes >= 2, "build_network: need at least 2 classes");
    detail::require(cfg.base_width >= 1 && !cfg.blocks_per_stage.empty(),
                    "build_network: invalid width config");
    Network net;
    net.cfg = cfg;
    std::mt19937 rng(static_cast<uint32_t>(seed));

    const int stem_out = cfg.base_width;
    const int64_t stem_k = cfg.stem == StemKind::Cifar ? 3 : 7;
    net.stem_w = make_param(netdetail::he_normal<T>(
        {stem_out, cfg.in_channels, stem_k, stem_k}, cfg.in_channels * stem_k * stem_k, rng));
    net.stem_bn.init(stem_out);
    net.stem_slope = make_param(
        Ten<T>({cfg.per_channel_prelu ? stem_out : 1}, T(0.25)));
    net.reg("stem.conv.w", net.stem_w);
    net.reg_bn("stem.bn", net.stem_bn);
    net.reg("stem.prelu", net.stem_slope);

    int in_c = stem_out;
    for (size_t s = 0; s < cfg.blocks_per_stage.size(); ++s) {
      const int out_c = cfg.base_width << s;
      for (int b = 0; b < cfg.blocks_per_stage[static_cast<size_t>(s)]; ++b) {
        const int stride = (s > 0 && b == 0) ? 2 : 1;
        const std::string prefix =
            "stage" + std::to_string(s) + ".block" + std::to_string(b);
        if (cfg.variant == NetVariant::RealTeacher)
          net.real_blocks.push_back(net.make_real_block(prefix, in_c, out_c, stride, rng));
        else
          net.blocks.push_back(net.make_binary_block(prefix, in_c, out_c, stride, rng));
        in_c = out_c;
      }
    }

    net.fc_w = make_param(netdetail::uniform_fan_in<T>({cfg.num_classes, in_c}, in_c, rng));
    net.fc_b = make_param(Ten<T>({cfg.num_classes}));
    net.reg("head.fc.w", net.fc_w);
    net.reg("head.fc.b", net.fc_b);
    return net;
  }

 private:
  void reg(const std::string& name, const NodeP<T>& p) { named_params.push_back({name, p}); }
  void reg_bn(const std::string& prefix, BatchNormLayer<T>& bn) {
    reg(prefix + ".gamma", bn.gamma);
    reg(prefix + ".beta", bn.beta);
  }

  ConvUnit<T> make_unit(const std::string& prefix, int in_c, int out_c, int stride,
                        std::mt19937& rng) {
    ConvUnit<T> u;
    u.in_channels = in_c;
    u.out_channels = out_c;
    u.stride = stride;
    u.bn.init(in_c);
    reg_bn(prefix + ".bn", u.bn);
    u.conv_w = make_param(netdetail::he_normal<T>({out_c, in_c, 3, 3}, in_c * 9, rng));
    reg(prefix + ".conv.w", u.conv_w);
    if (cfg.scaling) {
      u.log_gamma = make_param(Ten<T>({out_c}));  // Γ = exp(0) = 1 at init
      reg(prefix + ".log_gamma", u.log_gamma);
    }
    if (cfg.gating) {
      u.gate_p = GatingParams<T>::init(in_c, out_c, cfg.gate_r, rng);
      reg(prefix + ".gate.w1", u.gate_p->w1);
      reg(prefix + ".gate.b1", u.gate_p->b1);
      reg(prefix + ".gate.prelu", u.gate_p->slope);
      reg(prefix + ".gate.w2", u.gate_p->w2);
      reg(prefix + ".gate.b2", u.gate_p->b2);
    }
    u.slope = make_param(Ten<T>({cfg.per_channel_prelu ? out_c : 1}, T(0.25)));
    reg(prefix + ".prelu", u.slope);
    if (u.needs_downsample()) {
      u.ds_w = make_param(netdetail::he_normal<T>({out_c, in_c, 1, 1}, in_c, rng));
      reg(prefix + ".ds.w", u.ds_w);
      if (!cfg.real_downsample && cfg.scaling) {
        u.ds_log_gamma = make_param(Ten<T>({out_c}));
        reg(prefix + ".ds.log_gamma", u.ds_log_gamma);
      }
      u.ds_bn.init(out_c);
      reg_bn(prefix + ".ds.bn", u.ds_bn);
    }
    return u;
  }

  BinaryBlock<T> make_binary_block(const std::string& prefix, int in_c, int out_c, int stride,
                                   std::mt19937& rng) {
    BinaryBlock<T> blk;
    blk.unit1 = make_unit(prefix + ".unit0", in_c, out_c, stride, rng);
    blk.unit2 = make_unit(prefix + ".unit1", out_c, out_c, 1, rng);
    return blk;
  }

  RealBlock<T> make_real_block(const std::string& prefix, int in_c, int out_c, int stride,
                               std::mt19937& rng) {
    RealBlock<T> blk;
    blk.in_channels = in_c;
    blk.out_channels = out_c;
    blk.stride = stride;
    blk.conv1_w = make_param(netdetail::he_normal<T>({out_c, in_c, 3, 3}, in_c * 9, rng));
    blk.bn1.init(out_c);
    blk.conv2_w = make_param(netdetail::he_normal<T>({out_c, out_c, 3, 3}, out_c * 9, rng));
    blk.bn2.init(out_c);
    reg(prefix + ".conv1.w", blk.conv1_w);
    reg_bn(prefix + ".bn1", blk.bn1);
    reg(prefix + ".conv2.w", blk.conv2_w);
    reg_bn(prefix + ".bn2", blk.bn2);
    if (blk.needs_downsample()) {
      blk.ds_w = make_param(netdetail::he_normal<T>({out_c, in_c, 1, 1}, in_c, rng));
      reg(prefix + ".ds.w", blk.ds_w);
      blk.ds_bn.init(out_c);
      reg_bn(prefix + ".ds.bn", blk.ds_bn);
    }
    return blk;
  }

  NodeP<T> stem_forward(const NodeP<T>& x, BNMode mode) {
    const int64_t stride = cfg.stem == StemKind::Cifar ? 1 : 2;
    const int64_t pad = cfg.stem == StemKind::Cifar ? 1 : 3;
    auto y = ag::conv2d(x, stem_w, stride, pad);
    y = stem_bn.forward(y, mode);
    y = is_binary_family() ? ag::prelu(y, stem_slope) : ag::relu(y);
    if (cfg.stem == StemKind::ImageNet) y = ag::maxpool2d(y, 3, 2, 1);
    return y;
  }

  NodeP<T> apply_binarize(const NodeP<T>& a) {
    switch (binarize_kind()) {
      case Binarize::Tanh: return ag::tanh_soft_binarize(a);
      case Binarize::Sign: return ag::sign_ste(a);
      default: return a;
    }
  }

  // Returns (unit output, pre-binarization BN output).
  std::pair<NodeP<T>, NodeP<T>> unit_forward(ConvUnit<T>& u, const NodeP<T>& x, BNMode mode) {
    auto a = u.bn.forward(x, mode);
    NodeP<T> g;
    if (u.gate_p) g = gate(a, *u.gate_p);
    auto b = apply_binarize(a);
    auto w = binary_weights() ? ag::sign_ste(u.conv_w) : u.conv_w;
    auto c = ag::conv2d(b, w, u.stride, 1);
    if (u.log_gamma) c = ag::channel_scale_exp(c, u.log_gamma);
    if (g) c = ag::sample_channel_scale(c, g);
    auto p = ag::prelu(c, u.slope);
    NodeP<T> skip = x;
    if (u.needs_downsample()) {
      if (cfg.real_downsample) {
        skip = ag::conv2d(x, u.ds_w, u.stride, 0);
      } else {
        auto wds = binary_weights() ? ag::sign_ste(u.ds_w) : u.ds_w;
        skip = ag::conv2d(apply_binarize(a), wds, u.stride, 0);
        if (u.ds_log_gamma) skip = ag::channel_scale_exp(skip, u.ds_log_gamma);
      }
      skip = u.ds_bn.forward(skip, mode);
    }
    return {ag::add(p, skip), a};
  }

  NodeP<T> real_block_forward(RealBlock<T>& blk, const NodeP<T>& x, BNMode mode) {
    auto y = ag::conv2d(x, blk.conv1_w, blk.stride, 1);
    y = blk.bn1.forward(y, mode);
    y = ag::relu(y);
    y = ag::conv2d(y, blk.conv2_w, 1, 1);
    y = blk.bn2.forward(y, mode);
    NodeP<T> skip = x;
    if (blk.needs_downsample()) {
      skip = ag::conv2d(x, blk.ds_w, blk.stride, 0);
      skip = blk.ds_bn.forward(skip, mode);
    }
    return ag::relu(ag::add(y, skip));
  }
};

template <typename T = float>
Network<T> build_network(const NetConfig& cfg, uint64_t seed) {
  return Network<T>::build(cfg, seed);
}

// Logits plus per-block transfer activations, stem -> head order.
template <typename T>
ForwardResult<T> forward_with_transfer_points(Network<T>& net, const Ten<T>& x,
                                              BNMode mode = BNMode::Eval) {
  return net.forward(x, mode);
}

}  // namespace r2b
