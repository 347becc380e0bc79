#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "normlab/ops.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

enum class NormKind { Batch, Layer, Group, Instance, Local };

inline const char* norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::Batch: return "batchnorm";
    case NormKind::Layer: return "layernorm";
    case NormKind::Group: return "groupnorm";
    case NormKind::Instance: return "instancenorm";
    case NormKind::Local: return "localnorm";
  }
  return "?";
}

/// A partition of all flat tensor indices into computational groups: every
/// element belongs to exactly one group, and all elements of a group share
/// one (mean, std) pair.
///
/// Canonical group ids for a [N,H,W,C] tensor:
///   Batch      gid = c                          (G = C)
///   Layer      gid = n                          (G = N)
///   Group(K)   gid = n*K + c/(C/K)              (G = N*K)
///   Instance   gid = n*C + c                    (G = N*C)
///   Local(K)   gid = (n/(N/K))*C + c            (G = K*C)
struct GroupPartition {
  NormKind kind = NormKind::Batch;
  int K = 1;  // subgroup count for Group/Local kinds
  Shape shape;
  int group_count = 0;
  IndexMap assignments;
  std::vector<std::int64_t> group_sizes;
};

namespace detail {

inline GroupPartition finish_partition(NormKind kind, int K, Shape shape, int group_count,
                                       std::vector<std::int32_t> assignments) {
  GroupPartition p;
  p.kind = kind;
  p.K = K;
  p.shape = std::move(shape);
  p.group_count = group_count;
  p.group_sizes.assign(static_cast<std::size_t>(group_count), 0);
  for (std::int32_t g : assignments) ++p.group_sizes[static_cast<std::size_t>(g)];
  for (int g = 0; g < group_count; ++g) {
    if (p.group_sizes[static_cast<std::size_t>(g)] == 0) {
      throw std::invalid_argument("partition: degenerate group " + std::to_string(g));
    }
  }
  p.assignments = make_index_map(std::move(assignments));
  return p;
}

}  // namespace detail

/// Partition for one of the canonical norm variants over a rank-4 shape.
inline GroupPartition build_partition(NormKind kind, const Shape& shape, int K = 1) {
  if (shape.size() != 4) {
    throw std::invalid_argument("build_partition: shape must be rank 4 [N,H,W,C]");
  }
  const std::int64_t numel = shape_numel(shape);
  if (numel == 0) throw std::invalid_argument("build_partition: empty tensor");
  if (numel > std::numeric_limits<std::int32_t>::max()) {
    throw std::invalid_argument("build_partition: tensor too large for index map");
  }
  const int n = shape[0], h = shape[1], w = shape[2], c = shape[3];
  int group_count = 0;
  switch (kind) {
    case NormKind::Batch: group_count = c; break;
    case NormKind::Layer: group_count = n; break;
    case NormKind::Group:
      if (K < 1 || c % K != 0) {
        throw std::invalid_argument("build_partition: indivisible group count K=" +
                                    std::to_string(K) + " for C=" + std::to_string(c));
      }
      group_count = n * K;
      break;
    case NormKind::Instance: group_count = n * c; break;
    case NormKind::Local:
      if (K < 1 || n % K != 0) {
        throw std::invalid_argument("build_partition: indivisible group count K=" +
                                    std::to_string(K) + " for N=" + std::to_string(n));
      }
      group_count = K * c;
      break;
  }
  std::vector<std::int32_t> assign(static_cast<std::size_t>(numel));
  const int channels_per_group = (kind == NormKind::Group) ? c / K : 0;
  const int samples_per_group = (kind == NormKind::Local) ? n / K : 0;
  std::int64_t i = 0;
  for (int in = 0; in < n; ++in) {
    for (int ih = 0; ih < h; ++ih) {
      for (int iw = 0; iw < w; ++iw) {
        for (int ic = 0; ic < c; ++ic, ++i) {
          std::int32_t gid = 0;
          switch (kind) {
            case NormKind::Batch: gid = ic; break;
            case NormKind::Layer: gid = in; break;
            case NormKind::Group: gid = in * K + ic / channels_per_group; break;
            case NormKind::Instance: gid = in * c + ic; break;
            case NormKind::Local: gid = (in / samples_per_group) * c + ic; break;
          }
          assign[static_cast<std::size_t>(i)] = gid;
        }
      }
    }
  }
  return detail::finish_partition(kind, K, shape, group_count, std::move(assign));
}

/// Partition from an explicit sample -> statistics-group map: elements share
/// a group iff they share a channel and their samples share a group. This is
/// how evaluation modes pool statistics over arbitrary image sets.
inline GroupPartition build_sample_channel_partition(const Shape& shape,
                                                     const std::vector<int>& sample_group,
                                                     int sample_group_count) {
  if (shape.size() != 4) {
    throw std::invalid_argument("sample partition: shape must be rank 4 [N,H,W,C]");
  }
  const int n = shape[0], h = shape[1], w = shape[2], c = shape[3];
  if (static_cast<int>(sample_group.size()) != n) {
    throw std::invalid_argument("sample partition: group map size must equal batch size");
  }
  const std::int64_t numel = shape_numel(shape);
  if (numel > std::numeric_limits<std::int32_t>::max()) {
    throw std::invalid_argument("sample partition: tensor too large for index map");
  }
  std::vector<std::int32_t> assign(static_cast<std::size_t>(numel));
  std::int64_t i = 0;
  for (int in = 0; in < n; ++in) {
    const int sg = sample_group[static_cast<std::size_t>(in)];
    if (sg < 0 || sg >= sample_group_count) {
      throw std::invalid_argument("sample partition: group id out of range");
    }
    for (int ih = 0; ih < h; ++ih) {
      for (int iw = 0; iw < w; ++iw) {
        for (int ic = 0; ic < c; ++ic, ++i) {
          assign[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(sg) * c + ic;
        }
      }
    }
  }
  return detail::finish_partition(NormKind::Local, sample_group_count, shape,
                                  sample_group_count * c, std::move(assign));
}

/// Flat index -> channel map for per-channel parameter broadcasting.
inline IndexMap channel_map(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("channel_map: rank-0 shape");
  const std::int64_t numel = shape_numel(shape);
  const int c = shape.back();
  std::vector<std::int32_t> map(static_cast<std::size_t>(numel));
  for (std::int64_t i = 0; i < numel; ++i) {
    map[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i % c);
  }
  return make_index_map(std::move(map));
}

}  // namespace normlab
