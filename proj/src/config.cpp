#include "sembg/config.hpp"

#include <fstream>
#include <sstream>

#include "sembg/arch_io.hpp"
#include "sembg/errors.hpp"

namespace sembg {

bool operator==(const DataConfig& a, const DataConfig& b) {
  const auto& x = a.blobs;
  const auto& y = b.blobs;
  return a.kind == b.kind && a.path == b.path && a.holdout_fraction == b.holdout_fraction &&
         a.split_seed == b.split_seed && a.test_seed == b.test_seed && x.classes == y.classes && x.per_class == y.per_class &&
         x.image_hw == y.image_hw && x.channels == y.channels && x.noise_sigma == y.noise_sigma &&
         x.seed == y.seed;
}

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out, std::string_view context) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(context) + "." + key + " has the wrong type");
  }
}

DataKind data_kind_from(const std::string& s) {
  if (s == "blobs") return DataKind::blobs;
  if (s == "cifar10") return DataKind::cifar10;
  if (s == "cifar100") return DataKind::cifar100;
  if (s == "file") return DataKind::file;
  throw ConfigError("data.kind: unknown dataset '" + s + "' (expected blobs, cifar10, cifar100 or file)");
}

std::string to_string(DataKind k) {
  switch (k) {
    case DataKind::blobs: return "blobs";
    case DataKind::cifar10: return "cifar10";
    case DataKind::cifar100: return "cifar100";
    case DataKind::file: return "file";
  }
  return "blobs";
}

BlobsConfig blobs_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("data.blobs must be an object");
  reject_unknown_fields(j, {"classes", "per_class", "image_hw", "channels", "noise_sigma", "seed"}, "data.blobs");
  BlobsConfig b;
  read_opt(j, "classes", b.classes, "data.blobs");
  read_opt(j, "per_class", b.per_class, "data.blobs");
  read_opt(j, "image_hw", b.image_hw, "data.blobs");
  read_opt(j, "channels", b.channels, "data.blobs");
  read_opt(j, "noise_sigma", b.noise_sigma, "data.blobs");
  read_opt(j, "seed", b.seed, "data.blobs");
  return b;
}

DataConfig data_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("data must be an object");
  reject_unknown_fields(j, {"kind", "path", "blobs", "holdout_fraction", "split_seed", "test_seed"}, "data");
  DataConfig d;
  std::string kind = "blobs";
  read_opt(j, "kind", kind, "data");
  d.kind = data_kind_from(kind);
  read_opt(j, "path", d.path, "data");
  if (j.contains("blobs")) d.blobs = blobs_from_json(j.at("blobs"));
  read_opt(j, "holdout_fraction", d.holdout_fraction, "data");
  read_opt(j, "split_seed", d.split_seed, "data");
  if (j.contains("test_seed") && !j.at("test_seed").is_null()) {
    std::uint64_t seed = 0;
    read_opt(j, "test_seed", seed, "data");
    d.test_seed = seed;
  }
  if (!(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0)) {
    throw ConfigError("data.holdout_fraction must be in (0, 1)");
  }
  if (d.kind != DataKind::blobs && d.path.empty()) throw ConfigError("data.path is required for " + kind);
  if (d.kind != DataKind::blobs && d.test_seed) throw ConfigError("data.test_seed only applies to blobs");
  return d;
}

json data_config_to_json(const DataConfig& d) {
  const auto& b = d.blobs;
  return json{{"kind", to_string(d.kind)},
              {"path", d.path},
              {"blobs",
               {{"classes", b.classes},
                {"per_class", b.per_class},
                {"image_hw", b.image_hw},
                {"channels", b.channels},
                {"noise_sigma", b.noise_sigma},
                {"seed", b.seed}}},
              {"holdout_fraction", d.holdout_fraction},
              {"split_seed", d.split_seed},
              {"test_seed", d.test_seed ? json(*d.test_seed) : json(nullptr)}};
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train must be an object");
  reject_unknown_fields(j,
                        {"lr0", "momentum", "weight_decay", "epochs", "batch_size", "temperature", "alpha",
                         "detach_teacher", "seed", "deterministic", "log_diversity_every", "augment",
                         "augment_pad", "eval_batch_size"},
                        "train");
  TrainConfig c;
  read_opt(j, "lr0", c.lr0, "train");
  read_opt(j, "momentum", c.momentum, "train");
  read_opt(j, "weight_decay", c.weight_decay, "train");
  read_opt(j, "epochs", c.epochs, "train");
  read_opt(j, "batch_size", c.batch_size, "train");
  read_opt(j, "temperature", c.temperature, "train");
  read_opt(j, "alpha", c.alpha, "train");
  read_opt(j, "detach_teacher", c.detach_teacher, "train");
  read_opt(j, "seed", c.seed, "train");
  read_opt(j, "deterministic", c.deterministic, "train");
  read_opt(j, "log_diversity_every", c.log_diversity_every, "train");
  read_opt(j, "augment", c.augment, "train");
  read_opt(j, "augment_pad", c.augment_pad, "train");
  read_opt(j, "eval_batch_size", c.eval_batch_size, "train");
  c.validate();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"lr0", c.lr0},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"temperature", c.temperature},
              {"alpha", c.alpha},
              {"detach_teacher", c.detach_teacher},
              {"seed", c.seed},
              {"deterministic", c.deterministic},
              {"log_diversity_every", c.log_diversity_every},
              {"augment", c.augment},
              {"augment_pad", c.augment_pad},
              {"eval_batch_size", c.eval_batch_size}};
}

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown_fields(j, {"version", "run_id", "arch", "plan", "train", "data", "output_dir"}, "config");
  if (!j.contains("version")) throw ConfigError("config.version is required");
  ExperimentConfig c;
  read_opt(j, "version", c.version, "config");
  if (c.version != kConfigVersion) {
    throw ConfigError("config.version " + std::to_string(c.version) + " is not supported (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  read_opt(j, "run_id", c.run_id, "config");
  if (c.run_id.empty() || c.run_id.find_first_of("/\\") != std::string::npos || c.run_id == "." ||
      c.run_id == "..") {
    throw ConfigError("config.run_id must be a non-empty plain name");
  }
  if (j.contains("arch")) c.arch = j.at("arch");
  if (!c.arch.is_string() && !c.arch.is_object()) throw ConfigError("config.arch must be a preset name or an object");
  if (j.contains("plan")) c.plan = j.at("plan");
  if (!c.plan.is_null() && !c.plan.is_string() && !c.plan.is_object()) {
    throw ConfigError("config.plan must be a group notation string or an object");
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
  read_opt(j, "output_dir", c.output_dir, "config");
  // Fail early on architecture or plan mistakes.
  resolve_plan(c, resolve_arch(c));
  return c;
}

json experiment_to_json(const ExperimentConfig& c) {
  return json{{"version", c.version},
              {"run_id", c.run_id},
              {"arch", c.arch},
              {"plan", c.plan},
              {"train", train_config_to_json(c.train)},
              {"data", data_config_to_json(c.data)},
              {"output_dir", c.output_dir}};
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

int data_num_classes(const DataConfig& data) {
  switch (data.kind) {
    case DataKind::blobs: return data.blobs.classes;
    case DataKind::cifar10: return 10;
    case DataKind::cifar100: return 100;
    case DataKind::file: break;
  }
  return import_dataset(data.path).num_classes;
}

ArchSpec resolve_arch(const ExperimentConfig& cfg) {
  if (cfg.arch.is_string()) {
    return arch_preset(cfg.arch.get<std::string>(), data_num_classes(cfg.data));
  }
  return arch_spec_from_json(cfg.arch);
}

BranchPlan resolve_plan(const ExperimentConfig& cfg, const ArchSpec& arch) {
  if (cfg.plan.is_null()) return BranchPlan::default_for(arch);
  if (cfg.plan.is_string()) return parse_group_notation(cfg.plan.get<std::string>(), arch);
  return branch_plan_from_json(cfg.plan, arch);
}

ExperimentData load_experiment_data(const DataConfig& data) {
  if (data.kind == DataKind::cifar10 || data.kind == DataKind::cifar100) {
    DatasetPair pair = data.kind == DataKind::cifar10 ? load_cifar10(data.path) : load_cifar100(data.path);
    return {std::move(pair.train), std::move(pair.test)};
  }
  const Dataset all = data.kind == DataKind::blobs ? synthetic_blobs(data.blobs) : import_dataset(data.path);
  Dataset train, val;
  if (data.kind == DataKind::blobs && data.test_seed) {
    BlobsConfig fresh = data.blobs;
    fresh.seed = *data.test_seed;
    train = all;
    train.split = "train";
    val = synthetic_blobs(fresh);
    val.split = "test";
  } else {
    std::tie(train, val) = holdout_split(all, data.holdout_fraction, data.split_seed);
  }
  const Normalization norm = channel_statistics(train.images);
  normalize(train.images, norm);
  normalize(val.images, norm);
  return {std::move(train), std::move(val)};
}

std::filesystem::path run_directory(const ExperimentConfig& cfg) {
  return std::filesystem::path(cfg.output_dir) / cfg.run_id;
}

}  // namespace sembg
