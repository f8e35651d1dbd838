#pragma once

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "r2b/network.hpp"

namespace r2b {

// Checkpoint container:
//   magic "R2B1", u32 version, variant tag (u32 len + bytes),
//   u64 topology digest, config JSON (u32 len + bytes), u32 entry count,
//   entries: u32 name len, name, u32 rank, u64 extents..., f32 LE data.
// All integers little-endian. Parameters are written in registration order,
// then BN buffers, so save -> load -> save is byte-identical.

inline constexpr char kCkptMagic[4] = {'R', '2', 'B', '1'};
inline constexpr uint32_t kCkptVersion = 1;

inline nlohmann::json net_config_to_json(const NetConfig& c) {
  return nlohmann::json{{"variant", variant_name(c.variant)},
                        {"num_classes", c.num_classes},
                        {"in_channels", c.in_channels},
                        {"base_width", c.base_width},
                        {"blocks_per_stage", c.blocks_per_stage},
                        {"stem", c.stem == StemKind::Cifar ? "cifar" : "imagenet"},
                        {"scaling", c.scaling},
                        {"gating", c.gating},
                        {"gate_r", c.gate_r},
                        {"real_downsample", c.real_downsample},
                        {"per_channel_prelu", c.per_channel_prelu}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  if (j.contains("variant")) {
    auto v = variant_from_name(j.at("variant").get<std::string>());
    detail::require(v.has_value(), "config: unknown variant " + j.at("variant").dump());
    c.variant = *v;
  }
  c.num_classes = j.value("num_classes", c.num_classes);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.base_width = j.value("base_width", c.base_width);
  if (j.contains("blocks_per_stage"))
    c.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
  const std::string stem = j.value("stem", std::string("cifar"));
  detail::require(stem == "cifar" || stem == "imagenet", "config: unknown stem " + stem);
  c.stem = stem == "cifar" ? StemKind::Cifar : StemKind::ImageNet;
  c.scaling = j.value("scaling", c.scaling);
  c.gating = j.value("gating", c.gating);
  c.gate_r = j.value("gate_r", c.gate_r);
  c.real_downsample = j.value("real_downsample", c.real_downsample);
  c.per_channel_prelu = j.value("per_channel_prelu", c.per_channel_prelu);
  return c;
}

namespace ckpt_detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void write_u64(std::ostream& os, uint64_t v) {
  write_u32(os, static_cast<uint32_t>(v));
  write_u32(os, static_cast<uint32_t>(v >> 32));
}
inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  detail::require(bool(is), "checkpoint: truncated file");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}
inline uint64_t read_u64(std::istream& is) {
  const uint64_t lo = read_u32(is);
  return lo | uint64_t(read_u32(is)) << 32;
}
inline void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& is) {
  const uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  detail::require(bool(is), "checkpoint: truncated string");
  return s;
}
inline void write_f32_array(std::ostream& os, const float* p, size_t n) {
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
}

inline void write_entry(std::ostream& os, const std::string& name,
                        const std::vector<int64_t>& shape, const std::vector<float>& data) {
  write_str(os, name);
  write_u32(os, static_cast<uint32_t>(shape.size()));
  for (int64_t e : shape) write_u64(os, static_cast<uint64_t>(e));
  write_f32_array(os, data.data(), data.size());
}

struct Entry {
  std::vector<int64_t> shape;
  std::vector<float> data;
};

}  // namespace ckpt_detail

struct CheckpointInfo {
  std::string variant;
  uint64_t digest = 0;
  nlohmann::json config;
  std::vector<std::pair<std::string, ckpt_detail::Entry>> entries;
};

template <typename T>
void save_checkpoint(Network<T>& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  detail::require(bool(os), "checkpoint: cannot open " + path + " for writing");
  os.write(kCkptMagic, 4);
  ckpt_detail::write_u32(os, kCkptVersion);
  ckpt_detail::write_str(os, variant_name(net.cfg.variant));
  ckpt_detail::write_u64(os, net.cfg.topology_digest());
  ckpt_detail::write_str(os, net_config_to_json(net.cfg).dump());
  auto buffers = net.named_buffers();
  ckpt_detail::write_u32(os, static_cast<uint32_t>(net.named_params.size() + buffers.size()));
  for (auto& [name, p] : net.named_params) {
    std::vector<float> data(p->value.data.begin(), p->value.data.end());
    ckpt_detail::write_entry(os, name, p->value.shape, data);
  }
  for (auto& [name, vec] : buffers) {
    std::vector<float> data(vec->begin(), vec->end());
    ckpt_detail::write_entry(os, name, {static_cast<int64_t>(vec->size())}, data);
  }
  detail::require(bool(os), "checkpoint: write failed for " + path);
}

inline CheckpointInfo read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  detail::require(bool(is), "checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  detail::require(bool(is) && std::memcmp(magic, kCkptMagic, 4) == 0,
                  "checkpoint: bad magic in " + path);
  const uint32_t version = ckpt_detail::read_u32(is);
  detail::require(version == kCkptVersion,
                  "checkpoint: unsupported version " + std::to_string(version));
  CheckpointInfo info;
  info.variant = ckpt_detail::read_str(is);
  info.digest = ckpt_detail::read_u64(is);
  info.config = nlohmann::json::parse(ckpt_detail::read_str(is));
  const uint32_t n = ckpt_detail::read_u32(is);
  for (uint32_t i = 0; i < n; ++i) {
    const std::string name = ckpt_detail::read_str(is);
    ckpt_detail::Entry e;
    const uint32_t rank = ckpt_detail::read_u32(is);
    int64_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      e.shape.push_back(static_cast<int64_t>(ckpt_detail::read_u64(is)));
      numel *= e.shape.back();
    }
    e.data.resize(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(e.data.data()), numel * 4);
    detail::require(bool(is), "checkpoint: truncated data for entry " + name);
    info.entries.push_back({name, std::move(e)});
  }
  return info;
}

// Load values into an already-built network by name. The variant tag may
// differ (that is the progressive hand-off), but the topology digest must
// match unless check_digest is disabled.
template <typename T>
void load_checkpoint_into(Network<T>& net, const std::string& path, bool check_digest = true) {
  const CheckpointInfo info = read_checkpoint(path);
  detail::require(!check_digest || info.digest == net.cfg.topology_digest(),
                  "checkpoint: topology digest mismatch for " + path);
  auto find = [&info](const std::string& name) -> const ckpt_detail::Entry* {
    for (auto& [n, e] : info.entries)
      if (n == name) return &e;
    return nullptr;
  };
  for (auto& [name, p] : net.named_params) {
    const auto* e = find(name);
    detail::require(e != nullptr, "checkpoint: missing entry " + name);
    detail::require(e->shape == p->value.shape,
                    "checkpoint: shape mismatch for " + name + ": file " +
                        Tensor::shape_str(e->shape) + " vs net " +
                        Tensor::shape_str(p->value.shape));
    for (size_t i = 0; i < e->data.size(); ++i) p->value.data[i] = static_cast<T>(e->data[i]);
  }
  for (auto& [name, vec] : net.named_buffers()) {
    const auto* e = find(name);
    detail::require(e != nullptr, "checkpoint: missing buffer " + name);
    detail::require(e->data.size() == vec->size(), "checkpoint: buffer size mismatch for " + name);
    for (size_t i = 0; i < e->data.size(); ++i) (*vec)[i] = static_cast<T>(e->data[i]);
  }
}

// Rebuild a network from the config stored in the checkpoint and load its
// values. `variant_override`, when set, reinterprets the weights (hand-off).
template <typename T = float>
Network<T> load_network(const std::string& path,
                        std::optional<NetVariant> variant_override = std::nullopt) {
  const CheckpointInfo info = read_checkpoint(path);
  NetConfig cfg = net_config_from_json(info.config);
  if (variant_override) cfg.variant = *variant_override;
  Network<T> net = build_network<T>(cfg, 0);
  load_checkpoint_into(net, path);
  return net;
}

}  // namespace r2b
