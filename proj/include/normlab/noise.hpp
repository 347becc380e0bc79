#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

enum class NoiseFamily { AGN, APN, MBN };
enum class ApnVariant { Additive, Multiplicative };

inline const char* noise_family_name(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::AGN: return "agn";
    case NoiseFamily::APN: return "apn";
    case NoiseFamily::MBN: return "mbn";
  }
  return "?";
}

inline NoiseFamily noise_family_from_name(const std::string& name) {
  if (name == "agn") return NoiseFamily::AGN;
  if (name == "apn") return NoiseFamily::APN;
  if (name == "mbn") return NoiseFamily::MBN;
  throw std::invalid_argument("unknown noise family: " + name);
}

/// A parameterized image degradation. sigma_n is the Gaussian std for AGN,
/// the Poisson rate for APN (in [0,1]) and the pixel-removal probability for
/// MBN (in [0,1]).
struct NoiseSpec {
  NoiseFamily family = NoiseFamily::AGN;
  double sigma_n = 0.0;
  ApnVariant apn_variant = ApnVariant::Additive;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename S>
void clip_pixels(std::vector<S>& v) {
  for (auto& x : v) x = std::clamp(x, S(0), S(255));
}

inline void check_pixel_shape(const Shape& shape, const char* op) {
  if (shape.size() < 3) {
    throw std::invalid_argument(std::string(op) + ": image tensor must be [...,H,W,C]");
  }
}

}  // namespace detail

/// Multiplicative Gaussian degradation x*(1+xi), xi ~ N(0, sigma_n), drawn
/// independently per pixel and channel. sigma_n = 0 is the exact identity.
template <typename S>
Tensor<S> apply_agn(const Tensor<S>& x, double sigma_n, Rng& rng, bool clip = true) {
  if (sigma_n < 0) throw std::invalid_argument("apply_agn: sigma_n must be nonnegative");
  if (sigma_n == 0.0) return x.clone();
  Tensor<S> out = x.clone();
  auto& v = out.mutable_data();
  for (auto& p : v) p = static_cast<S>(p * (1.0 + rng.normal(0.0, sigma_n)));
  if (clip) detail::clip_pixels(v);
  return out;
}

/// Zero-mean Poisson degradation: xi = k - sigma_n with k ~ Poisson(sigma_n),
/// drawn per pixel and channel; Additive adds 255*xi, Multiplicative scales
/// by (1+xi). sigma_n must lie in [0,1].
template <typename S>
Tensor<S> apply_apn(const Tensor<S>& x, double sigma_n, ApnVariant variant, Rng& rng,
                    bool clip = true) {
  if (sigma_n < 0.0 || sigma_n > 1.0) {
    throw std::invalid_argument("apply_apn: sigma_n must be in [0,1]");
  }
  if (sigma_n == 0.0) return x.clone();
  Tensor<S> out = x.clone();
  auto& v = out.mutable_data();
  for (auto& p : v) {
    const double xi = static_cast<double>(rng.poisson(sigma_n)) - sigma_n;
    p = (variant == ApnVariant::Additive) ? static_cast<S>(p + 255.0 * xi)
                                          : static_cast<S>(p * (1.0 + xi));
  }
  if (clip) detail::clip_pixels(v);
  return out;
}

/// Multiplicative Bernoulli degradation: removes pixels with probability
/// sigma_n. The mask is drawn per pixel and shared across channels.
template <typename S>
Tensor<S> apply_mbn(const Tensor<S>& x, double sigma_n, Rng& rng, bool clip = true) {
  if (sigma_n < 0.0 || sigma_n > 1.0) {
    throw std::invalid_argument("apply_mbn: sigma_n must be in [0,1]");
  }
  if (sigma_n == 0.0) return x.clone();
  detail::check_pixel_shape(x.shape(), "apply_mbn");
  const int channels = x.shape().back();
  Tensor<S> out = x.clone();
  auto& v = out.mutable_data();
  for (std::size_t pixel = 0; pixel < v.size() / static_cast<std::size_t>(channels); ++pixel) {
    const bool keep = !rng.bernoulli(sigma_n);
    if (!keep) {
      for (int c = 0; c < channels; ++c) v[pixel * channels + c] = S(0);
    }
  }
  if (clip) detail::clip_pixels(v);
  return out;
}

template <typename S>
Tensor<S> apply_noise(const Tensor<S>& x, const NoiseSpec& spec, Rng& rng, bool clip = true) {
  switch (spec.family) {
    case NoiseFamily::AGN: return apply_agn(x, spec.sigma_n, rng, clip);
    case NoiseFamily::APN: return apply_apn(x, spec.sigma_n, spec.apn_variant, rng, clip);
    case NoiseFamily::MBN: return apply_mbn(x, spec.sigma_n, rng, clip);
  }
  throw std::logic_error("apply_noise: unreachable");
}

/// Per-channel histogram and summary statistics of a pixel tensor.
struct ChannelHistogram {
  int bins = 256;
  std::vector<std::vector<std::int64_t>> counts;  // [channel][bin]
  std::vector<double> mean;                       // per channel
  std::vector<double> stddev;                     // per channel, biased
};

/// Exact integer bin counts over [0,255] plus per-channel (mean, std).
/// Values are expected in [0,255]; out-of-range values (pre-clip inputs)
/// land in the edge bins but still contribute exactly to the statistics.
template <typename S>
ChannelHistogram channel_histogram(const Tensor<S>& x, int bins = 256) {
  detail::check_pixel_shape(x.shape(), "channel_histogram");
  if (bins < 1) throw std::invalid_argument("channel_histogram: bins must be positive");
  const int channels = x.shape().back();
  ChannelHistogram h;
  h.bins = bins;
  h.counts.assign(static_cast<std::size_t>(channels),
                  std::vector<std::int64_t>(static_cast<std::size_t>(bins), 0));
  std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> sum_sq(static_cast<std::size_t>(channels), 0.0);
  const auto& v = x.data();
  const std::size_t pixels = v.size() / static_cast<std::size_t>(channels);
  if (pixels == 0) throw std::invalid_argument("channel_histogram: empty tensor");
  for (std::size_t i = 0; i < v.size(); ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(channels));
    const double val = static_cast<double>(v[i]);
    int bin = static_cast<int>(std::floor(val * bins / 256.0));
    bin = std::clamp(bin, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(bin)];
    sum[static_cast<std::size_t>(c)] += val;
    sum_sq[static_cast<std::size_t>(c)] += val * val;
  }
  h.mean.resize(static_cast<std::size_t>(channels));
  h.stddev.resize(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    const double m = sum[static_cast<std::size_t>(c)] / static_cast<double>(pixels);
    const double var =
        std::max(0.0, sum_sq[static_cast<std::size_t>(c)] / static_cast<double>(pixels) - m * m);
    h.mean[static_cast<std::size_t>(c)] = m;
    h.stddev[static_cast<std::size_t>(c)] = std::sqrt(var);
  }
  return h;
}

}  // namespace normlab
