#pragma once

#include "r2b/network.hpp"

namespace r2b {

// Static BOPs/FLOPs profiler. Counting conventions (asserted by tests):
//   - conv and fc multiply-adds count as 1 (fused MAC); binary conv MACs are
//     BOPs instead of FLOPs
//   - BatchNorm inference: 2 per element (scale + shift)
//   - sign binarization: 1 per element; hard-tanh: 1; ReLU: 1; PReLU: 2
//   - elementwise add (skip) and multiply (re-scaling): 1 per element
//   - max pool: 9 per output element (3x3 window); average pooling: 1 per
//     pooled input element; sigmoid: 4 per element
//   - the gate's per-sample factor is folded into the per-channel scaling
//     multiply (one extra product per channel, not per pixel)
// All counts are per sample.

struct LayerCount {
  std::string name;
  int64_t bops = 0;
  int64_t flops = 0;
};

struct OpCount {
  int64_t bops = 0;
  int64_t flops = 0;
  std::vector<LayerCount> layers;

  void add(const std::string& name, int64_t b, int64_t f) {
    layers.push_back({name, b, f});
    bops += b;
    flops += f;
  }
};

// Block activation used by the historical Table-1 configurations.
enum class CostAct { Relu, HardTanh, Prelu };

struct CostArch {
  StemKind stem = StemKind::ImageNet;
  int in_channels = 3;
  int base_width = 64;
  std::vector<int> blocks_per_stage = {2, 2, 2, 2};
  int num_classes = 1000;
  bool binary_convs = true;
  bool scaling = true;
  bool double_skip = true;
  bool real_downsample = true;
  bool gating = true;
  int gate_r = 8;
  CostAct act = CostAct::Prelu;

  static CostArch from_net_config(const NetConfig& c) {
    CostArch a;
    a.stem = c.stem;
    a.in_channels = c.in_channels;
    a.base_width = c.base_width;
    a.blocks_per_stage = c.blocks_per_stage;
    a.num_classes = c.num_classes;
    a.binary_convs = c.variant == NetVariant::FullBin || c.variant == NetVariant::BinAct;
    a.scaling = c.scaling;
    a.double_skip = true;
    a.real_downsample = c.real_downsample;
    a.gating = c.gating;
    a.gate_r = c.gate_r;
    a.act = c.variant == NetVariant::RealTeacher ? CostAct::Relu : CostAct::Prelu;
    return a;
  }

  // The configurations counted in the binary ResNet-18 cost comparison.
  static CostArch preset(const std::string& name) {
    CostArch a;
    if (name == "full-precision" || name == "fp") {
      a.binary_convs = false;
      a.scaling = false;
      a.double_skip = false;
      a.gating = false;
      a.act = CostAct::Relu;
    } else if (name == "bnn") {
      a.scaling = false;
      a.double_skip = false;
      a.real_downsample = false;
      a.gating = false;
      a.act = CostAct::HardTanh;
    } else if (name == "xnor-net" || name == "xnor") {
      a.double_skip = false;
      a.real_downsample = false;
      a.gating = false;
      a.act = CostAct::HardTanh;
    } else if (name == "double-skip") {
      a.real_downsample = false;
      a.gating = false;
    } else if (name == "bi-real" || name == "bireal") {
      a.gating = false;
    } else if (name == "ours" || name == "real-to-bin") {
      // defaults
    } else {
      detail::require(false, "cost preset: unknown configuration '" + name + "'");
    }
    return a;
  }
};

namespace cost_detail {

constexpr int64_t kBN = 2, kSign = 1, kHardTanh = 1, kRelu = 1, kPrelu = 2;
constexpr int64_t kAdd = 1, kMul = 1, kMaxPoolPerOut = 9, kSigmoid = 4;

inline int64_t act_cost(CostAct a) {
  switch (a) {
    case CostAct::Relu: return kRelu;
    case CostAct::HardTanh: return kHardTanh;
    case CostAct::Prelu: return kPrelu;
  }
  return 0;
}

}  // namespace cost_detail

inline OpCount count_ops(const CostArch& arch, int64_t input_hw) {
  using namespace cost_detail;
  detail::require(input_hw >= 1, "count_ops: input extent must be positive");
  OpCount oc;
  const int64_t act = act_cost(arch.act);

  // stem
  int64_t h = input_hw;
  const int64_t stem_k = arch.stem == StemKind::Cifar ? 3 : 7;
  const int64_t stem_s = arch.stem == StemKind::Cifar ? 1 : 2;
  const int64_t stem_p = arch.stem == StemKind::Cifar ? 1 : 3;
  h = conv_out_extent(h, stem_k, stem_s, stem_p);
  const int64_t w0 = arch.base_width;
  {
    int64_t f = stem_k * stem_k * arch.in_channels * w0 * h * h;  // real conv MACs
    f += (kBN + act) * w0 * h * h;
    oc.add("stem", 0, f);
  }
  if (arch.stem == StemKind::ImageNet) {
    h = conv_out_extent(h, 3, 2, 1);
    oc.add("stem.maxpool", 0, kMaxPoolPerOut * w0 * h * h);
  }

  int64_t in_c = w0;
  for (size_t s = 0; s < arch.blocks_per_stage.size(); ++s) {
    const int64_t out_c = static_cast<int64_t>(arch.base_width) << s;
    for (int b = 0; b < arch.blocks_per_stage[s]; ++b) {
      const std::string bname = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      for (int ui = 0; ui < 2; ++ui) {
        const int64_t cin = ui == 0 ? in_c : out_c;
        const int64_t stride = (ui == 0 && s > 0 && b == 0) ? 2 : 1;
        const int64_t hin = h;
        const int64_t hout = conv_out_extent(hin, 3, stride, 1);
        const int64_t macs = 9 * cin * out_c * hout * hout;
        const int64_t ein = cin * hin * hin, eout = out_c * hout * hout;
        int64_t bops = 0, flops = 0;
        if (!arch.binary_convs) {
          // standard block: conv -> BN -> act over outputs
          flops += macs + (kBN + act) * eout;
        } else {
          flops += (kBN + kSign) * ein;  // BN then binarize over inputs
          bops += macs;
          if (arch.scaling) flops += kMul * eout;
          flops += act * eout;
          if (arch.gating) {
            const int64_t cb = std::max<int64_t>(1, (cin + arch.gate_r - 1) / arch.gate_r);
            flops += ein;                       // global average pool
            flops += cin * cb + cb * out_c;     // bottleneck projections
            flops += kPrelu * cb + kSigmoid * out_c + out_c;  // act, sigmoid, fold into Γ
          }
        }
        // skip: per unit with double skips, per block otherwise
        if (arch.double_skip || ui == 1) flops += kAdd * eout;
        const bool ds = stride != 1 || cin != out_c;
        if (ds) {
          const int64_t dmacs = cin * out_c * hout * hout;
          if (!arch.binary_convs || arch.real_downsample) {
            flops += dmacs;
          } else {
            bops += dmacs;
            if (arch.scaling) flops += kMul * out_c * hout * hout;
          }
          flops += kBN * out_c * hout * hout;
        }
        oc.add(bname + ".unit" + std::to_string(ui), bops, flops);
        h = hout;
      }
      in_c = out_c;
    }
  }

  // head: global average pool + fc
  oc.add("head.avgpool", 0, in_c * h * h);
  oc.add("head.fc", 0, in_c * arch.num_classes + arch.num_classes);
  return oc;
}

template <typename T>
OpCount count_ops(const Network<T>& net, int64_t input_hw) {
  return count_ops(CostArch::from_net_config(net.cfg), input_hw);
}

}  // namespace r2b
