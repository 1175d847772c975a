#ifndef RVS_DATA_HPP
#define RVS_DATA_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "rvs/binio.hpp"
#include "rvs/random.hpp"

namespace rvs {

enum class Split { train, test };

/// Labelled NHWC images with pixels in [0, 1].
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  int num_classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return images.dim(1); }
  std::size_t width() const { return images.dim(2); }
  std::size_t channels() const { return images.dim(3); }
  std::size_t image_volume() const { return height() * width() * channels(); }

  void validate() const {
    if (labels.empty()) throw InputError("dataset: empty");
    if (images.rank() != 4 || images.dim(0) != labels.size())
      throw DimensionError("dataset: images " + shape_str(images.shape()) + " vs " +
                           std::to_string(labels.size()) + " labels");
    for (int y : labels)
      if (y < 0 || y >= num_classes) throw InputError("dataset: label out of range");
    for (float v : images.data())
      if (!(v >= 0.0f && v <= 1.0f)) throw InputError("dataset: pixel outside [0,1]");
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    const std::size_t vol = image_volume();
    std::vector<float> px(idx.size() * vol);
    std::vector<int> ys(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::copy_n(images.raw() + idx[k] * vol, vol, px.data() + k * vol);
      ys[k] = labels[idx[k]];
    }
    return Dataset{Tensor<float>(Shape{idx.size(), height(), width(), channels()}, std::move(px)),
                   std::move(ys), num_classes, split};
  }
};

struct Batch {
  Tensor<float> x;
  std::vector<int> y;
};

inline Batch gather(const Dataset& d, const std::vector<std::size_t>& idx) {
  Dataset s = d.subset(idx);
  return Batch{std::move(s.images), std::move(s.labels)};
}

template <typename T>
Tensor<T> one_hot(const std::vector<int>& y, int classes) {
  Tensor<T> out(Shape{y.size(), static_cast<std::size_t>(classes)});
  for (std::size_t i = 0; i < y.size(); ++i) out[i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(y[i])] = T(1);
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary version: records of 1 label byte + 3072 pixel bytes
// (1024 R, 1024 G, 1024 B, each row-major 32x32).

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

/// Parses one CIFAR-10 batch file into a dataset.
inline Dataset load_cifar10_file(const std::filesystem::path& path, Split split) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cifar10: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw FormatError("cifar10: empty file " + path.string());
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t full = bytes.size() / kCifarRecord;
    throw FormatError("cifar10: truncated record in " + path.string() + " at byte offset " +
                      std::to_string(full * kCifarRecord));
  }
  const std::size_t n = bytes.size() / kCifarRecord, plane = kCifarSide * kCifarSide;
  std::vector<float> px(n * plane * 3);
  std::vector<int> ys(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] >= 10)
      throw FormatError("cifar10: corrupt label " + std::to_string(rec[0]) + " at byte offset " +
                        std::to_string(r * kCifarRecord) + " in " + path.string());
    ys[r] = rec[0];
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < plane; ++p)
        px[(r * plane + p) * 3 + ch] = float(rec[1 + ch * plane + p]) / 255.0f;
  }
  return Dataset{Tensor<float>(Shape{n, kCifarSide, kCifarSide, 3}, std::move(px)), std::move(ys), 10, split};
}

inline Dataset concat(const std::vector<Dataset>& parts, Split split) {
  std::vector<float> px;
  std::vector<int> ys;
  for (const auto& p : parts) {
    px.insert(px.end(), p.images.vec().begin(), p.images.vec().end());
    ys.insert(ys.end(), p.labels.begin(), p.labels.end());
  }
  const auto& f = parts.front();
  return Dataset{Tensor<float>(Shape{ys.size(), f.height(), f.width(), f.channels()}, std::move(px)),
                 std::move(ys), f.num_classes, split};
}

/// Reads data_batch_{1..5}.bin and test_batch.bin from `dir`.
inline std::pair<Dataset, Dataset> load_cifar10_binary(const std::filesystem::path& dir) {
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i)
    parts.push_back(load_cifar10_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), Split::train));
  return {concat(parts, Split::train), load_cifar10_file(dir / "test_batch.bin", Split::test)};
}

// ---------------------------------------------------------------------------
// Native dataset file:
//   "RVSDATA\0" | u32 version | u64 N | u32 h | u32 w | u32 c | u32 C
//   | N x i32 labels | N*h*w*c x f32 pixels (NHWC), all little-endian.

inline constexpr char kDatasetMagic[8] = {'R', 'V', 'S', 'D', 'A', 'T', 'A', '\0'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& d, std::ostream& os) {
  os.write(kDatasetMagic, 8);
  binio::put_uint<std::uint32_t>(os, kDatasetVersion);
  binio::put_uint<std::uint64_t>(os, d.size());
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(d.height()));
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(d.width()));
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(d.channels()));
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(d.num_classes));
  for (int y : d.labels) binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(y));
  binio::put_f32_array(os, d.images.data());
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  save_dataset(d, os);
  if (!os) throw InputError("write failed for " + path.string());
}

inline Dataset load_dataset(std::istream& is, Split split = Split::test) {
  const std::string magic = binio::get_bytes(is, 8, "magic");
  if (magic != std::string(kDatasetMagic, 8)) throw FormatError("dataset: bad magic");
  const auto version = binio::get_uint<std::uint32_t>(is, "version");
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  const auto n = binio::get_uint<std::uint64_t>(is, "N");
  const auto h = binio::get_uint<std::uint32_t>(is, "h");
  const auto w = binio::get_uint<std::uint32_t>(is, "w");
  const auto c = binio::get_uint<std::uint32_t>(is, "c");
  const auto classes = binio::get_uint<std::uint32_t>(is, "C");
  if (n == 0 || h == 0 || w == 0 || c == 0) throw FormatError("dataset: empty extent in header");
  std::vector<int> ys(n);
  for (auto& y : ys) y = static_cast<int>(binio::get_uint<std::uint32_t>(is, "labels"));
  Tensor<float> images(Shape{n, h, w, c});
  binio::get_f32_array(is, images.data(), "pixels");
  Dataset d{std::move(images), std::move(ys), static_cast<int>(classes), split};
  d.validate();
  return d;
}

inline Dataset load_dataset(const std::filesystem::path& path, Split split = Split::test) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  return load_dataset(is, split);
}

// ---------------------------------------------------------------------------
// Synthetic toy images.

/// Desk-scale stand-in dataset: one geometric primitive per class drawn at a
/// random position over a random flat background.
struct ToySpec {
  int classes = 3;
  int samples_per_class = 1200;
  int image_size = 16;
  double noise_std = 0.05;
  double contrast = 0.25;  // |shape intensity - background|
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2 || classes > 6) throw ConfigError("toy: classes must be in [2, 6]");
    if (image_size < 8) throw ConfigError("toy: image_size must be >= 8");
    if (samples_per_class < 2) throw ConfigError("toy: samples_per_class must be >= 2");
    if (!(noise_std >= 0)) throw ConfigError("toy: noise_std must be >= 0");
    if (!(contrast > 0 && contrast <= 0.5)) throw ConfigError("toy: contrast must be in (0, 0.5]");
  }
};

namespace detail {

// Shape masks: 0 filled square, 1 disc, 2 cross, 3 ring, 4 horizontal bar, 5 triangle.
inline bool toy_mask(int cls, double dy, double dx, double r) {
  const double ay = std::abs(dy), ax = std::abs(dx);
  switch (cls) {
    case 0: return ay <= r && ax <= r;
    case 1: return dy * dy + dx * dx <= r * r;
    case 2: return (ay <= r * 0.3 && ax <= r) || (ax <= r * 0.3 && ay <= r);
    case 3: {
      const double d = std::sqrt(dy * dy + dx * dx);
      return d <= r && d >= r * 0.55;
    }
    case 4: return ay <= r * 0.35 && ax <= r;
    default: return dy <= r && dy >= -r && ax <= (dy + r) * 0.5;
  }
}

}  // namespace detail

inline std::pair<Dataset, Dataset> synth_toy(const ToySpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x70f));
  const std::size_t s = static_cast<std::size_t>(spec.image_size), c = 3, vol = s * s * c;
  const std::size_t per = static_cast<std::size_t>(spec.samples_per_class);
  const std::size_t total = per * static_cast<std::size_t>(spec.classes);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<float> px(total * vol);
  std::vector<int> ys(total);
  const double rmin = s * 0.18, rmax = s * 0.3;
  for (std::size_t k = 0; k < total; ++k) {
    const int cls = static_cast<int>(k % static_cast<std::size_t>(spec.classes));
    ys[k] = cls;
    const double r = rmin + (rmax - rmin) * u01(rng);
    const double cy = r + (s - 1 - 2 * r) * u01(rng), cx = r + (s - 1 - 2 * r) * u01(rng);
    double bg[3], fg[3];
    const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      bg[ch] = 0.3 + 0.4 * u01(rng);
      fg[ch] = bg[ch] + sign * spec.contrast;
    }
    float* img = px.data() + k * vol;
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const bool in = detail::toy_mask(cls, double(y) - cy, double(x) - cx, r);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double v = in ? fg[ch] : bg[ch];
          if (spec.noise_std > 0) v += spec.noise_std * noise(rng);
          img[(y * s + x) * c + ch] = float(std::clamp(v, 0.0, 1.0));
        }
      }
  }

  // per class: first 5/6 of its samples train, rest test
  std::vector<std::size_t> train_idx, test_idx;
  std::vector<std::size_t> seen(static_cast<std::size_t>(spec.classes), 0);
  const std::size_t train_per = per * 5 / 6;
  for (std::size_t k = 0; k < total; ++k) {
    auto& cnt = seen[static_cast<std::size_t>(ys[k])];
    (cnt++ < train_per ? train_idx : test_idx).push_back(k);
  }
  Dataset all{Tensor<float>(Shape{total, s, s, c}, std::move(px)), std::move(ys), spec.classes, Split::train};
  Dataset train = all.subset(train_idx);
  Dataset test = all.subset(test_idx);
  test.split = Split::test;
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Augmentation and batching.

/// Reflect-pads one HWC image by `pad`, crops back at offset (dy, dx) and
/// optionally mirrors it horizontally.
inline void crop_flip(const float* src, float* dst, std::size_t h, std::size_t w, std::size_t c,
                      std::size_t pad, std::size_t dy, std::size_t dx, bool flip) {
  auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return static_cast<std::size_t>(i);
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xo = flip ? w - 1 - x : x;
      const std::size_t sy = reflect(std::ptrdiff_t(y + dy) - std::ptrdiff_t(pad), std::ptrdiff_t(h));
      const std::size_t sx = reflect(std::ptrdiff_t(xo + dx) - std::ptrdiff_t(pad), std::ptrdiff_t(w));
      std::copy_n(src + (sy * w + sx) * c, c, dst + (y * w + x) * c);
    }
}

/// Random crop from a 4-pixel reflect pad plus a horizontal flip with p = 0.5.
inline Tensor<float> augment(const Tensor<float>& batch, Rng& rng, std::size_t pad = 4) {
  const std::size_t n = batch.dim(0), h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  const std::size_t vol = h * w * c;
  Tensor<float> out(batch.shape());
  std::uniform_int_distribution<std::size_t> off(0, 2 * pad);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t dy = off(rng), dx = off(rng);
    const bool flip = coin(rng);
    crop_flip(batch.raw() + i * vol, out.raw() + i * vol, h, w, c, pad, dy, dx, flip);
  }
  return out;
}

/// One epoch of mini-batch index lists over a seed- and epoch-derived permutation.
inline std::vector<std::vector<std::size_t>> batch_iterator(std::size_t dataset_size, std::size_t n,
                                                            std::uint64_t seed, std::uint64_t epoch,
                                                            bool drop_last) {
  if (n == 0 || n > dataset_size) throw ConfigError("batch_iterator: need 0 < batch size <= dataset size");
  std::vector<std::size_t> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0xba7c4 + epoch));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < dataset_size; b += n) {
    const std::size_t e = std::min(dataset_size, b + n);
    if (e - b < n && drop_last) break;
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b), perm.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

}  // namespace rvs

#endif  // RVS_DATA_HPP
