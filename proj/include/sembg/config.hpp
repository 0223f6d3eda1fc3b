#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "sembg/arch.hpp"
#include "sembg/data.hpp"
#include "sembg/trainer.hpp"

namespace sembg {

inline constexpr int kConfigVersion = 1;

enum class DataKind { blobs, cifar10, cifar100, file };

struct DataConfig {
  DataKind kind = DataKind::blobs;
  std::string path;  // directory for CIFAR, container file for `file`
  BlobsConfig blobs;
  double holdout_fraction = 0.1;  // used when the source has no test split
  std::uint64_t split_seed = 0;
  // Blobs only: draw a separate test set of the same size with this seed and
  // train on the whole generated set instead of holding out a fraction.
  std::optional<std::uint64_t> test_seed;

  friend bool operator==(const DataConfig& a, const DataConfig& b);
};

// `arch` is a preset name or an architecture object; `plan` is the group
// notation string or a plan object. Both are kept as written so the config
// serializes back unchanged.
struct ExperimentConfig {
  int version = kConfigVersion;
  std::string run_id = "run";
  nlohmann::json arch = "toy";
  nlohmann::json plan = nullptr;  // null selects the default plan
  TrainConfig train;
  DataConfig data;
  std::string output_dir = "runs";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment(const std::filesystem::path& path);

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

int data_num_classes(const DataConfig& data);
ArchSpec resolve_arch(const ExperimentConfig& cfg);
BranchPlan resolve_plan(const ExperimentConfig& cfg, const ArchSpec& arch);

// Train/validation pair; synthetic and imported sets are split by
// holdout_fraction unless blobs have a test_seed, CIFAR uses its test set. Images are standardized with
// training statistics.
struct ExperimentData {
  Dataset train;
  Dataset val;
};

ExperimentData load_experiment_data(const DataConfig& data);

std::filesystem::path run_directory(const ExperimentConfig& cfg);

}  // namespace sembg
