#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "normlab/noise.hpp"
#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

/// Labeled image set. Pixel values live in [0,255]; the /255 rescale happens
/// at batch time, after any noise degradation.
template <typename S>
struct Dataset {
  Tensor<S> images;  // [N,H,W,C]
  std::vector<int> labels;
  int class_count = 10;
  std::string split;
  std::string provenance;

  int count() const { return images.defined() ? images.extent(0) : 0; }
};

template <typename S>
void validate_dataset(const Dataset<S>& ds) {
  if (!ds.images.defined() || ds.images.rank() != 4) {
    throw std::invalid_argument("dataset: images must be [N,H,W,C]");
  }
  if (ds.images.extent(0) != static_cast<int>(ds.labels.size())) {
    throw std::invalid_argument("dataset: image/label count mismatch");
  }
  for (int y : ds.labels) {
    if (y < 0 || y >= ds.class_count) {
      throw std::invalid_argument("dataset: label " + std::to_string(y) + " out of range");
    }
  }
}

// ---------------------------------------------------------------------------
// IDX (MNIST) format
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(len));
  if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!f) throw std::runtime_error("failed reading file: " + path);
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset,
                               const std::string& path) {
  if (offset + 4 > b.size()) throw std::runtime_error("truncated header in " + path);
  return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
         (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

}  // namespace detail

/// Big-endian IDX pair: image magic 0x00000803 with dims (N,H,W), label
/// magic 0x00000801 with dim (N). Counts must agree between the files.
template <typename S>
Dataset<S> load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img_bytes = detail::read_file_bytes(images_path);
  const auto lab_bytes = detail::read_file_bytes(labels_path);

  const std::uint32_t img_magic = detail::read_be32(img_bytes, 0, images_path);
  if (img_magic != 0x00000803u) {
    throw std::runtime_error("bad magic in " + images_path + " (expected 0x00000803)");
  }
  const std::uint32_t n = detail::read_be32(img_bytes, 4, images_path);
  const std::uint32_t h = detail::read_be32(img_bytes, 8, images_path);
  const std::uint32_t w = detail::read_be32(img_bytes, 12, images_path);
  const std::size_t expected = 16 + static_cast<std::size_t>(n) * h * w;
  if (img_bytes.size() < expected) throw std::runtime_error("truncated data in " + images_path);

  const std::uint32_t lab_magic = detail::read_be32(lab_bytes, 0, labels_path);
  if (lab_magic != 0x00000801u) {
    throw std::runtime_error("bad magic in " + labels_path + " (expected 0x00000801)");
  }
  const std::uint32_t ln = detail::read_be32(lab_bytes, 4, labels_path);
  if (lab_bytes.size() < 8 + static_cast<std::size_t>(ln)) {
    throw std::runtime_error("truncated data in " + labels_path);
  }
  if (ln != n) {
    throw std::runtime_error("image/label count mismatch: " + std::to_string(n) + " images vs " +
                             std::to_string(ln) + " labels");
  }

  Dataset<S> ds;
  ds.images = Tensor<S>({static_cast<int>(n), static_cast<int>(h), static_cast<int>(w), 1});
  auto& v = ds.images.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(img_bytes[16 + i]);
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(lab_bytes[8 + i]);
  ds.class_count = 10;
  ds.provenance = "idx:" + images_path;
  validate_dataset(ds);
  return ds;
}

/// CIFAR-10 binary batches: 3073-byte records of 1 label byte plus 3072
/// channel-planar pixels, converted to NHWC.
template <typename S>
Dataset<S> load_cifar10_binary(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  constexpr std::size_t record = 3073;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw std::runtime_error("file size " + std::to_string(bytes.size()) +
                             " is not a multiple of 3073 in " + path);
  }
  const int n = static_cast<int>(bytes.size() / record);
  Dataset<S> ds;
  ds.images = Tensor<S>({n, 32, 32, 3});
  ds.labels.resize(static_cast<std::size_t>(n));
  auto& v = ds.images.mutable_data();
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + static_cast<std::size_t>(i) * record;
    const int label = rec[0];
    if (label > 9) {
      throw std::runtime_error("label " + std::to_string(label) + " out of range in record " +
                               std::to_string(i) + " of " + path);
    }
    ds.labels[static_cast<std::size_t>(i)] = label;
    for (int c = 0; c < 3; ++c) {
      const unsigned char* plane = rec + 1 + c * 1024;
      for (int hw = 0; hw < 1024; ++hw) {
        v[(static_cast<std::size_t>(i) * 1024 + hw) * 3 + c] = static_cast<S>(plane[hw]);
      }
    }
  }
  ds.class_count = 10;
  ds.provenance = "cifar10:" + path;
  validate_dataset(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic digit generator
// ---------------------------------------------------------------------------

namespace detail {

inline const std::array<std::array<std::uint8_t, 7>, 10>& digit_glyphs() {
  // 5x7 bitmap font, one byte per row, bit 4..0 = left..right column.
  static const std::array<std::array<std::uint8_t, 7>, 10> glyphs = {{
      {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
      {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
      {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
      {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
      {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
      {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
      {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
      {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
      {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
      {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
  }};
  return glyphs;
}

/// Renders one digit with randomized scale, placement and stroke intensity,
/// then softens it with a 3x3 binomial blur.
template <typename S>
void render_digit(S* out, int side, int digit, Rng& rng) {
  const auto& glyph = digit_glyphs()[static_cast<std::size_t>(digit)];
  const double scale = rng.uniform(2.6, 3.4);
  const double gw = 5.0 * scale, gh = 7.0 * scale;
  const double max_x = side - 2.0 - gw, max_y = side - 2.0 - gh;
  const double x0 = rng.uniform(2.0, std::max(2.0, max_x));
  const double y0 = rng.uniform(2.0, std::max(2.0, max_y));
  const double intensity = rng.uniform(170.0, 255.0);

  std::vector<double> canvas(static_cast<std::size_t>(side) * side, 0.0);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const int gy = static_cast<int>(std::floor((y - y0) / scale));
      const int gx = static_cast<int>(std::floor((x - x0) / scale));
      if (gy < 0 || gy >= 7 || gx < 0 || gx >= 5) continue;
      if ((glyph[static_cast<std::size_t>(gy)] >> (4 - gx)) & 1) {
        canvas[static_cast<std::size_t>(y) * side + x] = intensity * rng.uniform(0.82, 1.0);
      }
    }
  }
  // 3x3 binomial blur for anti-aliased strokes.
  static const double kernel[3] = {0.25, 0.5, 0.25};
  std::vector<double> tmp(canvas.size(), 0.0);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double acc = 0.0;
      for (int d = -1; d <= 1; ++d) {
        const int xx = x + d;
        if (xx >= 0 && xx < side) acc += kernel[d + 1] * canvas[static_cast<std::size_t>(y) * side + xx];
      }
      tmp[static_cast<std::size_t>(y) * side + x] = acc;
    }
  }
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double acc = 0.0;
      for (int d = -1; d <= 1; ++d) {
        const int yy = y + d;
        if (yy >= 0 && yy < side) acc += kernel[d + 1] * tmp[static_cast<std::size_t>(yy) * side + x];
      }
      out[static_cast<std::size_t>(y) * side + x] =
          static_cast<S>(std::min(255.0, acc));
    }
  }
}

}  // namespace detail

/// Deterministic MNIST-shaped digit set: class-balanced 28x28 single-channel
/// glyph renderings with randomized scale, position and stroke intensity.
template <typename S>
Dataset<S> make_synthetic_digits(int count, std::uint64_t seed, const std::string& split = "train",
                                 int side = 28) {
  if (count <= 0) throw std::invalid_argument("make_synthetic_digits: count must be positive");
  if (side < 24) throw std::invalid_argument("make_synthetic_digits: side must be >= 24");
  Rng rng(seed);
  Dataset<S> ds;
  ds.images = Tensor<S>({count, side, side, 1});
  ds.labels.resize(static_cast<std::size_t>(count));
  auto& v = ds.images.mutable_data();
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t image_size = static_cast<std::size_t>(side) * side;
  for (int i = 0; i < count; ++i) {
    const int digit = order[static_cast<std::size_t>(i)] % 10;
    ds.labels[static_cast<std::size_t>(i)] = digit;
    Rng image_rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    detail::render_digit(v.data() + static_cast<std::size_t>(i) * image_size, side, digit,
                         image_rng);
  }
  ds.class_count = 10;
  ds.split = split;
  ds.provenance = "synthetic-digits:seed=" + std::to_string(seed);
  return ds;
}

/// Tiny linearly separable set for smoke tests: class c lights up block c of
/// a 4x4 grid of 3x3 blocks.
template <typename S>
Dataset<S> make_block_dataset(int count, int classes, std::uint64_t seed, int side = 12) {
  if (classes < 2 || classes > 16) {
    throw std::invalid_argument("make_block_dataset: classes must be in [2,16]");
  }
  Rng rng(seed);
  Dataset<S> ds;
  ds.images = Tensor<S>({count, side, side, 1});
  ds.labels.resize(static_cast<std::size_t>(count));
  auto& v = ds.images.mutable_data();
  const int block = side / 4;
  for (int i = 0; i < count; ++i) {
    const int c = i % classes;
    ds.labels[static_cast<std::size_t>(i)] = c;
    const int by = (c / 4) * block, bx = (c % 4) * block;
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const bool on = (y >= by && y < by + block && x >= bx && x < bx + block);
        const double base = on ? rng.uniform(200.0, 255.0) : rng.uniform(0.0, 25.0);
        v[(static_cast<std::size_t>(i) * side + y) * side + x] = static_cast<S>(base);
      }
    }
  }
  ds.class_count = classes;
  ds.provenance = "synthetic-blocks:seed=" + std::to_string(seed);
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset transforms
// ---------------------------------------------------------------------------

template <typename S>
Dataset<S> dataset_take(const Dataset<S>& ds, int count) {
  validate_dataset(ds);
  if (count < 0 || count > ds.count()) {
    throw std::invalid_argument("dataset_take: count out of range");
  }
  Dataset<S> out = ds;
  Shape shape = ds.images.shape();
  shape[0] = count;
  const std::size_t row = static_cast<std::size_t>(ds.images.size() / std::max(1, ds.count()));
  std::vector<S> data(ds.images.data().begin(),
                      ds.images.data().begin() + static_cast<std::ptrdiff_t>(row * count));
  out.images = Tensor<S>(shape, std::move(data));
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + count);
  return out;
}

template <typename S>
Dataset<S> dataset_permute(const Dataset<S>& ds, const std::vector<int>& order) {
  validate_dataset(ds);
  if (static_cast<int>(order.size()) != ds.count()) {
    throw std::invalid_argument("dataset_permute: order size mismatch");
  }
  Dataset<S> out = ds;
  out.images = Tensor<S>(ds.images.shape());
  out.labels.resize(order.size());
  const std::size_t row = static_cast<std::size_t>(ds.images.size() / std::max(1, ds.count()));
  const auto& src = ds.images.data();
  auto& dst = out.images.mutable_data();
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto j = static_cast<std::size_t>(order[i]);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(j * row),
              src.begin() + static_cast<std::ptrdiff_t>((j + 1) * row),
              dst.begin() + static_cast<std::ptrdiff_t>(i * row));
    out.labels[i] = ds.labels[j];
  }
  return out;
}

/// Every image degraded under the spec, each with its own derived seed, so
/// results do not depend on processing order or batch composition.
template <typename S>
Dataset<S> degrade_dataset(const Dataset<S>& ds, const NoiseSpec& spec, bool clip = true) {
  validate_dataset(ds);
  Dataset<S> out = ds;
  out.images = Tensor<S>(ds.images.shape());
  const int n = ds.count();
  const std::size_t row = static_cast<std::size_t>(ds.images.size() / std::max(1, n));
  Shape image_shape(ds.images.shape().begin() + 1, ds.images.shape().end());
  const auto& src = ds.images.data();
  auto& dst = out.images.mutable_data();
  for (int i = 0; i < n; ++i) {
    std::vector<S> pixels(src.begin() + static_cast<std::ptrdiff_t>(i * row),
                          src.begin() + static_cast<std::ptrdiff_t>((i + 1) * row));
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    Tensor<S> noisy = apply_noise(Tensor<S>(image_shape, std::move(pixels)), spec, rng, clip);
    std::copy(noisy.data().begin(), noisy.data().end(),
              dst.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  out.provenance += "+" + std::string(noise_family_name(spec.family)) + ":" +
                    std::to_string(spec.sigma_n);
  return out;
}

/// Original dataset plus ceil(fraction*N) noise-degraded copies (labels
/// preserved), shuffled. fraction 0 returns the dataset unchanged.
template <typename S>
Dataset<S> make_noisy_trainset(const Dataset<S>& ds, const NoiseSpec& spec, double fraction) {
  validate_dataset(ds);
  if (fraction < 0.0 || fraction > 1.0) {
    throw std::invalid_argument("make_noisy_trainset: fraction must be in [0,1]");
  }
  const int n = ds.count();
  const int extra = static_cast<int>(std::ceil(fraction * n));
  if (extra == 0) return ds;

  Rng rng(derive_seed(spec.seed, 0x5EEDu));
  std::vector<int> pick_order(static_cast<std::size_t>(n));
  std::iota(pick_order.begin(), pick_order.end(), 0);
  rng.shuffle(pick_order);
  pick_order.resize(static_cast<std::size_t>(extra));

  Shape shape = ds.images.shape();
  shape[0] = n + extra;
  Dataset<S> out = ds;
  out.images = Tensor<S>(shape);
  out.labels.resize(static_cast<std::size_t>(n + extra));
  const std::size_t row = static_cast<std::size_t>(ds.images.size() / std::max(1, n));
  Shape image_shape(ds.images.shape().begin() + 1, ds.images.shape().end());
  auto& dst = out.images.mutable_data();
  const auto& src = ds.images.data();
  std::copy(src.begin(), src.end(), dst.begin());
  std::copy(ds.labels.begin(), ds.labels.end(), out.labels.begin());
  for (int i = 0; i < extra; ++i) {
    const auto j = static_cast<std::size_t>(pick_order[static_cast<std::size_t>(i)]);
    std::vector<S> pixels(src.begin() + static_cast<std::ptrdiff_t>(j * row),
                          src.begin() + static_cast<std::ptrdiff_t>((j + 1) * row));
    Rng image_rng(derive_seed(spec.seed, 0x100000ull + static_cast<std::uint64_t>(i)));
    Tensor<S> noisy = apply_noise(Tensor<S>(image_shape, std::move(pixels)), spec, image_rng);
    std::copy(noisy.data().begin(), noisy.data().end(),
              dst.begin() + static_cast<std::ptrdiff_t>((n + i) * row));
    out.labels[static_cast<std::size_t>(n + i)] = ds.labels[j];
  }
  std::vector<int> order(static_cast<std::size_t>(n + extra));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  out = dataset_permute(out, order);
  out.provenance = ds.provenance + "+augmented:" + noise_family_name(spec.family) + ":" +
                   std::to_string(spec.sigma_n) + ":frac=" + std::to_string(fraction);
  return out;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

template <typename S>
struct Batch {
  Tensor<S> images;  // [B,H,W,C], still in [0,255]
  std::vector<int> labels;
  std::vector<int> group_of_sample;  // contiguous K-way split
};

/// Epoch-shuffled batches with a contiguous K-way group split; the trailing
/// partial batch is dropped.
template <typename S>
class BatchIterator {
 public:
  BatchIterator(const Dataset<S>* ds, int batch_size, int groups, std::uint64_t seed)
      : ds_(ds), batch_(batch_size), groups_(groups), rng_(seed) {
    validate_dataset(*ds);
    if (batch_size <= 0 || batch_size > ds->count()) {
      throw std::invalid_argument("batch iterator: invalid batch size");
    }
    if (groups <= 0 || batch_size % groups != 0) {
      throw std::invalid_argument("batch iterator: group count " + std::to_string(groups) +
                                  " does not divide batch size " + std::to_string(batch_size));
    }
    order_.resize(static_cast<std::size_t>(ds->count()));
    std::iota(order_.begin(), order_.end(), 0);
  }

  int batches_per_epoch() const { return ds_->count() / batch_; }

  void start_epoch() {
    rng_.shuffle(order_);
    cursor_ = 0;
  }

  bool next(Batch<S>& out) {
    if (cursor_ + batch_ > ds_->count()) return false;
    Shape shape = ds_->images.shape();
    shape[0] = batch_;
    out.images = Tensor<S>(shape);
    out.labels.resize(static_cast<std::size_t>(batch_));
    out.group_of_sample.resize(static_cast<std::size_t>(batch_));
    const std::size_t row =
        static_cast<std::size_t>(ds_->images.size() / std::max(1, ds_->count()));
    const auto& src = ds_->images.data();
    auto& dst = out.images.mutable_data();
    const int per_group = batch_ / groups_;
    for (int i = 0; i < batch_; ++i) {
      const auto j = static_cast<std::size_t>(order_[static_cast<std::size_t>(cursor_ + i)]);
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(j * row),
                src.begin() + static_cast<std::ptrdiff_t>((j + 1) * row),
                dst.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * row));
      out.labels[static_cast<std::size_t>(i)] = ds_->labels[j];
      out.group_of_sample[static_cast<std::size_t>(i)] = i / per_group;
    }
    cursor_ += batch_;
    return true;
  }

 private:
  const Dataset<S>* ds_;
  int batch_;
  int groups_;
  Rng rng_;
  std::vector<int> order_;
  int cursor_ = 0;
};

/// Pixel preprocessing applied after noise: rescale [0,255] -> [0,1].
template <typename S>
Tensor<S> preprocess_images(const Tensor<S>& images) {
  Tensor<S> out = images.clone();
  for (auto& v : out.mutable_data()) v = static_cast<S>(v / S(255));
  return out;
}

}  // namespace normlab
