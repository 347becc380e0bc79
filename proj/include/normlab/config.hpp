#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "normlab/checkpoint.hpp"
#include "normlab/data.hpp"
#include "normlab/model.hpp"
#include "normlab/noise.hpp"
#include "normlab/trainer.hpp"

namespace normlab {

/// Where the images come from. "synthetic" renders the built-in digit set;
/// "mnist-idx" reads an IDX image/label pair per split; "cifar10" reads
/// binary batch files. train_count/test_count cap (or, for synthetic,
/// choose) the split sizes; 0 keeps everything.
struct DatasetSpec {
  std::string kind = "synthetic";
  std::string train_images, train_labels, test_images, test_labels;  // mnist-idx
  std::string train_path, test_path;                                 // cifar10
  int train_count = 10000;
  int test_count = 2000;
  std::uint64_t data_seed = 12345;  // synthetic rendering seed
};

struct NoiseSweepSpec {
  NoiseFamily family = NoiseFamily::AGN;
  ApnVariant apn_variant = ApnVariant::Additive;
  std::vector<double> sigmas;
};

/// Optional noise-augmented training set: the original data plus
/// ceil(fraction*N) degraded copies.
struct AugmentSpec {
  bool enabled = false;
  NoiseFamily family = NoiseFamily::AGN;
  double sigma_n = 1.0;
  double fraction = 0.5;
  ApnVariant apn_variant = ApnVariant::Additive;
};

struct EvalSpecConfig {
  std::vector<std::string> modes = {"batch"};
  std::vector<NoiseSweepSpec> noise = {{NoiseFamily::AGN, ApnVariant::Additive, {0.0, 1.0}}};
  int batch_size = 100;
  int max_images = 0;  // 0 = whole test split
  bool confusion = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ModelConfig model = digits_model_config(NormKind::Local, 10);
  TrainHyper train;
  AugmentSpec augment;
  EvalSpecConfig eval;
  std::uint64_t seed = 42;
};

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"train_images", c.dataset.train_images},
                  {"train_labels", c.dataset.train_labels},
                  {"test_images", c.dataset.test_images},
                  {"test_labels", c.dataset.test_labels},
                  {"train_path", c.dataset.train_path},
                  {"test_path", c.dataset.test_path},
                  {"train_count", c.dataset.train_count},
                  {"test_count", c.dataset.test_count},
                  {"data_seed", c.dataset.data_seed}};
  j["model"] = model_config_to_json(c.model);
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"sgd_momentum", c.train.sgd_momentum}};
  j["augment"] = {{"enabled", c.augment.enabled},
                  {"family", noise_family_name(c.augment.family)},
                  {"sigma_n", c.augment.sigma_n},
                  {"fraction", c.augment.fraction},
                  {"apn_variant", c.augment.apn_variant == ApnVariant::Additive ? "additive"
                                                                                : "multiplicative"}};
  nlohmann::json sweeps = nlohmann::json::array();
  for (const auto& s : c.eval.noise) {
    sweeps.push_back({{"family", noise_family_name(s.family)},
                      {"apn_variant",
                       s.apn_variant == ApnVariant::Additive ? "additive" : "multiplicative"},
                      {"sigmas", s.sigmas}});
  }
  j["eval"] = {{"modes", c.eval.modes},
               {"noise", sweeps},
               {"batch_size", c.eval.batch_size},
               {"max_images", c.eval.max_images},
               {"confusion", c.eval.confusion}};
  j["seed"] = c.seed;
  return j;
}

inline ApnVariant apn_variant_from_name(const std::string& s) {
  if (s == "additive") return ApnVariant::Additive;
  if (s == "multiplicative") return ApnVariant::Multiplicative;
  throw std::invalid_argument("unknown apn variant: " + s);
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.contains("kind")) c.dataset.kind = d.at("kind").get<std::string>();
    if (d.contains("train_images")) c.dataset.train_images = d.at("train_images");
    if (d.contains("train_labels")) c.dataset.train_labels = d.at("train_labels");
    if (d.contains("test_images")) c.dataset.test_images = d.at("test_images");
    if (d.contains("test_labels")) c.dataset.test_labels = d.at("test_labels");
    if (d.contains("train_path")) c.dataset.train_path = d.at("train_path");
    if (d.contains("test_path")) c.dataset.test_path = d.at("test_path");
    if (d.contains("train_count")) c.dataset.train_count = d.at("train_count");
    if (d.contains("test_count")) c.dataset.test_count = d.at("test_count");
    if (d.contains("data_seed")) c.dataset.data_seed = d.at("data_seed");
  }
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.contains("epochs")) c.train.epochs = t.at("epochs");
    if (t.contains("batch_size")) c.train.batch_size = t.at("batch_size");
    if (t.contains("lr")) c.train.lr = t.at("lr");
    if (t.contains("sgd_momentum")) c.train.sgd_momentum = t.at("sgd_momentum");
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    if (a.contains("enabled")) c.augment.enabled = a.at("enabled");
    if (a.contains("family")) c.augment.family = noise_family_from_name(a.at("family"));
    if (a.contains("sigma_n")) c.augment.sigma_n = a.at("sigma_n");
    if (a.contains("fraction")) c.augment.fraction = a.at("fraction");
    if (a.contains("apn_variant")) c.augment.apn_variant = apn_variant_from_name(a.at("apn_variant"));
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("modes")) c.eval.modes = e.at("modes").get<std::vector<std::string>>();
    if (e.contains("noise")) {
      c.eval.noise.clear();
      for (const auto& s : e.at("noise")) {
        NoiseSweepSpec sweep;
        sweep.family = noise_family_from_name(s.at("family"));
        if (s.contains("apn_variant")) sweep.apn_variant = apn_variant_from_name(s.at("apn_variant"));
        sweep.sigmas = s.at("sigmas").get<std::vector<double>>();
        c.eval.noise.push_back(std::move(sweep));
      }
    }
    if (e.contains("batch_size")) c.eval.batch_size = e.at("batch_size");
    if (e.contains("max_images")) c.eval.max_images = e.at("max_images");
    if (e.contains("confusion")) c.eval.confusion = e.at("confusion");
  }
  if (j.contains("seed")) c.seed = j.at("seed");
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

/// Structural validation; with check_files, referenced dataset files must
/// exist.
inline void validate_config(const ExperimentConfig& c, bool check_files) {
  if (c.dataset.kind != "synthetic" && c.dataset.kind != "mnist-idx" &&
      c.dataset.kind != "cifar10") {
    throw std::invalid_argument("config: unknown dataset kind " + c.dataset.kind);
  }
  if (c.eval.noise.empty()) throw std::invalid_argument("config: noise sweep must be nonempty");
  for (const auto& s : c.eval.noise) {
    if (s.sigmas.empty()) throw std::invalid_argument("config: sigma grid must be nonempty");
  }
  if (c.eval.modes.empty()) throw std::invalid_argument("config: eval modes must be nonempty");
  for (const auto& m : c.eval.modes) eval_mode_from_name(m);  // throws on unknown
  if (check_files) {
    auto must_exist = [](const std::string& p) {
      if (p.empty() || !std::filesystem::exists(p)) {
        throw std::invalid_argument("config: referenced file does not exist: " +
                                    (p.empty() ? "<unset>" : p));
      }
    };
    if (c.dataset.kind == "mnist-idx") {
      must_exist(c.dataset.train_images);
      must_exist(c.dataset.train_labels);
      must_exist(c.dataset.test_images);
      must_exist(c.dataset.test_labels);
    } else if (c.dataset.kind == "cifar10") {
      must_exist(c.dataset.train_path);
      must_exist(c.dataset.test_path);
    }
  }
}

/// FNV-1a over the canonical JSON dump; embedded in every output file.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Train/test pair per the dataset spec.
template <typename S>
std::pair<Dataset<S>, Dataset<S>> load_datasets(const DatasetSpec& spec) {
  Dataset<S> train, test;
  if (spec.kind == "synthetic") {
    const int train_n = spec.train_count > 0 ? spec.train_count : 10000;
    const int test_n = spec.test_count > 0 ? spec.test_count : 2000;
    train = make_synthetic_digits<S>(train_n, derive_seed(spec.data_seed, 1), "train");
    test = make_synthetic_digits<S>(test_n, derive_seed(spec.data_seed, 2), "test");
    return {std::move(train), std::move(test)};
  }
  if (spec.kind == "mnist-idx") {
    train = load_idx<S>(spec.train_images, spec.train_labels);
    test = load_idx<S>(spec.test_images, spec.test_labels);
  } else if (spec.kind == "cifar10") {
    train = load_cifar10_binary<S>(spec.train_path);
    test = load_cifar10_binary<S>(spec.test_path);
  } else {
    throw std::invalid_argument("unknown dataset kind: " + spec.kind);
  }
  if (spec.train_count > 0 && spec.train_count < train.count()) {
    train = dataset_take(train, spec.train_count);
  }
  if (spec.test_count > 0 && spec.test_count < test.count()) {
    test = dataset_take(test, spec.test_count);
  }
  train.split = "train";
  test.split = "test";
  return {std::move(train), std::move(test)};
}

}  // namespace normlab
