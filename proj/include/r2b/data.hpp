#pragma once

#include <filesystem>
#include <fstream>
#include <random>

#include "r2b/tensor.hpp"

namespace r2b {

struct Dataset {
  Tensor images;            // [N,3,H,W], normalized
  std::vector<int> labels;
  int class_count = 0;
  std::string split;
  // per-channel normalization constants, recorded for reproducibility
  std::vector<float> norm_mean, norm_std;

  int64_t size() const { return images.rank() ? images.dim(0) : 0; }

  Tensor sample_batch(const std::vector<int64_t>& idx) const {
    const int64_t C = images.dim(1), H = images.dim(2), W = images.dim(3);
    Tensor b({static_cast<int64_t>(idx.size()), C, H, W});
    const int64_t per = C * H * W;
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy_n(images.data.begin() + idx[i] * per, per, b.data.begin() + i * per);
    return b;
  }
};

enum class CifarVariant { Cifar10, Cifar100 };

namespace data_detail {

constexpr int64_t kCifarHW = 32;
constexpr int64_t kCifarPixels = 3 * 32 * 32;

struct RawCifar {
  std::vector<uint8_t> pixels;  // N * 3072, channel-planar
  std::vector<int> labels;
};

inline void read_cifar_file(const std::filesystem::path& path, CifarVariant variant,
                            RawCifar& out) {
  std::ifstream is(path, std::ios::binary);
  detail::require(bool(is), "load_cifar: cannot open " + path.string());
  is.seekg(0, std::ios::end);
  const int64_t file_size = is.tellg();
  is.seekg(0);
  const int64_t rec = variant == CifarVariant::Cifar10 ? 3073 : 3074;  // labels + pixels
  detail::require(file_size % rec == 0,
                  "load_cifar: " + path.string() + " has size " + std::to_string(file_size) +
                      " which is not a multiple of the " + std::to_string(rec) +
                      "-byte record (first bad byte offset " +
                      std::to_string(file_size - file_size % rec) + ")");
  const int64_t n = file_size / rec;
  std::vector<uint8_t> buf(static_cast<size_t>(rec));
  for (int64_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(buf.data()), rec);
    detail::require(bool(is), "load_cifar: short read in " + path.string());
    // CIFAR-100 records carry coarse then fine label; we keep the fine one.
    out.labels.push_back(buf[variant == CifarVariant::Cifar10 ? 0 : 1]);
    out.pixels.insert(out.pixels.end(), buf.begin() + (rec - kCifarPixels), buf.end());
  }
}

inline Dataset to_dataset(const RawCifar& raw, int class_count, const std::string& split,
                          const std::vector<float>& mean, const std::vector<float>& std) {
  const int64_t n = static_cast<int64_t>(raw.labels.size());
  Dataset ds;
  ds.class_count = class_count;
  ds.split = split;
  ds.labels = raw.labels;
  ds.norm_mean = mean;
  ds.norm_std = std;
  ds.images = Tensor({n, 3, kCifarHW, kCifarHW});
  for (int64_t i = 0; i < n * kCifarPixels; ++i) {
    const int64_t c = (i % kCifarPixels) / (kCifarHW * kCifarHW);
    ds.images[i] = (raw.pixels[static_cast<size_t>(i)] / 255.0f - mean[static_cast<size_t>(c)]) /
                   std[static_cast<size_t>(c)];
  }
  return ds;
}

}  // namespace data_detail

// Parse the standard CIFAR binary batches. Pixels are scaled to [0,1] and
// standardized with per-channel statistics computed from the training split;
// the same constants are applied to the test split and recorded on both.
inline std::pair<Dataset, Dataset> load_cifar(const std::string& dir, CifarVariant variant) {
  namespace fs = std::filesystem;
  using data_detail::RawCifar;
  RawCifar train, test;
  if (variant == CifarVariant::Cifar10) {
    for (int i = 1; i <= 5; ++i)
      data_detail::read_cifar_file(fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin"),
                                   variant, train);
    data_detail::read_cifar_file(fs::path(dir) / "test_batch.bin", variant, test);
  } else {
    data_detail::read_cifar_file(fs::path(dir) / "train.bin", variant, train);
    data_detail::read_cifar_file(fs::path(dir) / "test.bin", variant, test);
  }
  const int classes = variant == CifarVariant::Cifar10 ? 10 : 100;
  for (int l : train.labels)
    detail::require(l >= 0 && l < classes, "load_cifar: label out of range");

  std::vector<float> mean(3, 0.f), std(3, 0.f);
  const int64_t hw = data_detail::kCifarHW * data_detail::kCifarHW;
  const int64_t n = static_cast<int64_t>(train.labels.size());
  for (int c = 0; c < 3; ++c) {
    double s = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t p = 0; p < hw; ++p)
        s += train.pixels[static_cast<size_t>(i * data_detail::kCifarPixels + c * hw + p)];
    const double m = s / (255.0 * n * hw);
    double v = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t p = 0; p < hw; ++p) {
        const double d =
            train.pixels[static_cast<size_t>(i * data_detail::kCifarPixels + c * hw + p)] / 255.0 -
            m;
        v += d * d;
      }
    mean[static_cast<size_t>(c)] = static_cast<float>(m);
    std[static_cast<size_t>(c)] = static_cast<float>(std::sqrt(v / (n * hw)) + 1e-8);
  }
  return {data_detail::to_dataset(train, classes, "train", mean, std),
          data_detail::to_dataset(test, classes, "test", mean, std)};
}

enum class AugmentPolicy { CifarTrain, Eval };

namespace data_detail {

// Bilinear sample with zero fill outside the image.
inline float bilinear(const Tensor& img, int64_t n, int64_t c, double y, double x) {
  const int64_t H = img.dim(2), W = img.dim(3);
  const int64_t y0 = static_cast<int64_t>(std::floor(y)), x0 = static_cast<int64_t>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto px = [&](int64_t yy, int64_t xx) -> double {
    if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
    return img.at4(n, c, yy, xx);
  };
  return static_cast<float>(px(y0, x0) * (1 - fy) * (1 - fx) + px(y0, x0 + 1) * (1 - fy) * fx +
                            px(y0 + 1, x0) * fy * (1 - fx) + px(y0 + 1, x0 + 1) * fy * fx);
}

}  // namespace data_detail

// CIFAR training augmentation: pad-4 reflect + random crop, horizontal flip
// with p=0.5, rotation uniform in ±15° (bilinear, zero fill). Eval is the
// identity. Output shape equals input shape.
inline Tensor augment(const Tensor& batch, std::mt19937& rng, AugmentPolicy policy) {
  if (policy == AugmentPolicy::Eval) return batch;
  const int64_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  constexpr int64_t pad = 4;
  Tensor out(batch.shape);
  std::uniform_int_distribution<int64_t> off(0, 2 * pad);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-15.0, 15.0);
  for (int64_t n = 0; n < N; ++n) {
    const int64_t dy = off(rng), dx = off(rng);
    const bool flip = unit(rng) < 0.5;
    const double theta = angle(rng) * M_PI / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    // crop source with reflect padding
    auto src = [&](int64_t c, int64_t y, int64_t x) -> float {
      int64_t yy = y + dy - pad, xx = x + dx - pad;
      if (yy < 0) yy = -yy;
      if (yy >= H) yy = 2 * H - 2 - yy;
      if (xx < 0) xx = -xx;
      if (xx >= W) xx = 2 * W - 2 - xx;
      return batch.at4(n, c, yy, xx);
    };
    Tensor cropped({1, C, H, W});
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          cropped.at4(0, c, y, x) = src(c, y, flip ? W - 1 - x : x);
    if (theta == 0.0) {
      for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x = 0; x < W; ++x) out.at4(n, c, y, x) = cropped.at4(0, c, y, x);
      continue;
    }
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const double sy = cy + ct * (y - cy) - st * (x - cx);
          const double sx = cx + st * (y - cy) + ct * (x - cx);
          out.at4(n, c, y, x) = data_detail::bilinear(cropped, 0, c, sy, sx);
        }
  }
  return out;
}

// Gaussian class-template images plus noise; deterministic in the seed and
// linearly separable at low noise.
inline Dataset synthetic_dataset(uint64_t seed, int classes, int64_t n,
                                 std::vector<int64_t> image_shape = {3, 16, 16},
                                 double noise = 0.5) {
  detail::require(classes >= 2, "synthetic_dataset: need at least 2 classes");
  detail::require(image_shape.size() == 3, "synthetic_dataset: image shape must be CHW");
  std::mt19937 rng(static_cast<uint32_t>(seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int64_t per = image_shape[0] * image_shape[1] * image_shape[2];
  std::vector<std::vector<float>> templates(static_cast<size_t>(classes));
  for (auto& t : templates) {
    t.resize(static_cast<size_t>(per));
    for (auto& v : t) v = static_cast<float>(gauss(rng));
  }
  Dataset ds;
  ds.class_count = classes;
  ds.split = "synthetic";
  ds.norm_mean = {0.f, 0.f, 0.f};
  ds.norm_std = {1.f, 1.f, 1.f};
  ds.images = Tensor({n, image_shape[0], image_shape[1], image_shape[2]});
  std::uniform_int_distribution<int> cls(0, classes - 1);
  for (int64_t i = 0; i < n; ++i) {
    const int y = cls(rng);
    ds.labels.push_back(y);
    for (int64_t p = 0; p < per; ++p)
      ds.images[i * per + p] =
          templates[static_cast<size_t>(y)][static_cast<size_t>(p)] +
          static_cast<float>(noise * gauss(rng));
  }
  return ds;
}

}  // namespace r2b
