#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "normlab/model.hpp"
#include "normlab/rng.hpp"

namespace normlab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

inline constexpr char kCheckpointMagic[8] = {'N', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  int batch_size = 0;
  std::uint64_t seed = 0;
  std::array<std::uint64_t, 4> rng_state{};
};

namespace detail {

inline std::string u64_hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t u64_from_hex(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

}  // namespace detail

inline nlohmann::json model_config_to_json(const ModelConfig& mc) {
  return nlohmann::json{{"arch", mc.arch},
                        {"norm", norm_kind_name(mc.norm_kind)},
                        {"groups", mc.norm_groups},
                        {"epsilon", mc.epsilon},
                        {"momentum", mc.momentum},
                        {"input", mc.input},
                        {"classes", mc.classes}};
}

inline NormKind norm_kind_from_name(const std::string& name) {
  if (name == "batchnorm") return NormKind::Batch;
  if (name == "layernorm") return NormKind::Layer;
  if (name == "groupnorm") return NormKind::Group;
  if (name == "instancenorm") return NormKind::Instance;
  if (name == "localnorm") return NormKind::Local;
  throw std::invalid_argument("unknown norm variant: " + name);
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig mc;
  mc.arch = j.at("arch").get<std::vector<std::string>>();
  mc.norm_kind = norm_kind_from_name(j.at("norm").get<std::string>());
  mc.norm_groups = j.at("groups").get<int>();
  mc.epsilon = j.at("epsilon").get<double>();
  mc.momentum = j.at("momentum").get<double>();
  mc.input = j.at("input").get<Shape>();
  mc.classes = j.at("classes").get<int>();
  return mc;
}

/// Writes the versioned container: 8-byte magic, u32 version, u64 header
/// length, JSON header (config, counters, rng, tensor directory), then the
/// named tensors as little-endian 32-bit floats.
template <typename S>
void save_checkpoint(const std::string& path, Model<S>& model, const CheckpointMeta& meta) {
  auto tensors = model.state_tensors();
  nlohmann::json dir = nlohmann::json::array();
  std::int64_t offset = 0;
  for (auto& [name, t] : tensors) {
    dir.push_back({{"name", name},
                   {"shape", t.shape()},
                   {"dtype", "f32"},
                   {"offset", offset},
                   {"count", t.size()}});
    offset += t.size();
  }
  std::vector<bool> running_init;
  for (auto* spec : model.norm_layers()) running_init.push_back(spec->running_init);

  nlohmann::json header{{"model", model_config_to_json(model.config())},
                        {"epoch", meta.epoch},
                        {"batch_size", meta.batch_size},
                        {"seed", detail::u64_hex(meta.seed)},
                        {"rng_state",
                         {detail::u64_hex(meta.rng_state[0]), detail::u64_hex(meta.rng_state[1]),
                          detail::u64_hex(meta.rng_state[2]), detail::u64_hex(meta.rng_state[3])}},
                        {"running_init", running_init},
                        {"tensors", dir}};
  const std::string header_str = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(kCheckpointMagic, 8);
  const std::uint32_t version = kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t len = header_str.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  std::vector<float> row;
  for (auto& [name, t] : tensors) {
    row.assign(t.data().begin(), t.data().end());
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
}

template <typename S>
struct LoadedCheckpoint {
  Model<S> model;
  CheckpointMeta meta;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path);
  }
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (!f || version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  if (!f) throw std::runtime_error("truncated checkpoint header in " + path);
  std::string header_str(len, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("truncated checkpoint header in " + path);
  const nlohmann::json header = nlohmann::json::parse(header_str);

  const ModelConfig mc = model_config_from_json(header.at("model"));
  Rng dummy(0);
  LoadedCheckpoint<S> out{Model<S>(mc, dummy), {}};
  out.meta.epoch = header.at("epoch").get<int>();
  out.meta.batch_size = header.at("batch_size").get<int>();
  out.meta.seed = detail::u64_from_hex(header.at("seed").get<std::string>());
  for (int i = 0; i < 4; ++i) {
    out.meta.rng_state[static_cast<std::size_t>(i)] =
        detail::u64_from_hex(header.at("rng_state").at(i).get<std::string>());
  }

  // Tensor directory, keyed by name.
  std::vector<float> payload;
  {
    std::int64_t total = 0;
    for (const auto& entry : header.at("tensors")) total += entry.at("count").get<std::int64_t>();
    payload.resize(static_cast<std::size_t>(total));
    f.read(reinterpret_cast<char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!f) throw std::runtime_error("truncated checkpoint payload in " + path);
  }
  auto tensors = out.model.state_tensors();
  for (auto& [name, t] : tensors) {
    bool found = false;
    for (const auto& entry : header.at("tensors")) {
      if (entry.at("name").get<std::string>() != name) continue;
      const Shape shape = entry.at("shape").get<Shape>();
      if (!same_shape(shape, t.shape())) {
        throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_str(shape) +
                                 ", expected " + shape_str(t.shape()));
      }
      const auto offset = entry.at("offset").get<std::int64_t>();
      const auto count = entry.at("count").get<std::int64_t>();
      if (count != t.size()) throw std::runtime_error("checkpoint tensor " + name + " size mismatch");
      auto& dst = t.mutable_data();
      for (std::int64_t i = 0; i < count; ++i) {
        dst[static_cast<std::size_t>(i)] =
            static_cast<S>(payload[static_cast<std::size_t>(offset + i)]);
      }
      found = true;
      break;
    }
    if (!found) throw std::runtime_error("checkpoint is missing tensor " + name);
  }
  const auto running_init = header.at("running_init").get<std::vector<bool>>();
  auto norms = out.model.norm_layers();
  if (running_init.size() != norms.size()) {
    throw std::runtime_error("checkpoint running_init count mismatch");
  }
  for (std::size_t i = 0; i < norms.size(); ++i) norms[i]->running_init = running_init[i];
  return out;
}

}  // namespace normlab
