#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "flowtopo/metrics.hpp"

namespace flowtopo {

struct DatasetConfig {
  SyntheticTask task = SyntheticTask::defaults(TaskName::kTwoMoons);
  Index n_train = 10000;
  Index n_val = 1000;
};

struct EvalConfig {
  Index kld_samples = 10000;
  OodBenchmark ood;
  Index ood_n = 1000;
};

/// Fully-resolved experiment: every default filled in.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  ModelSpec model;
  TrainConfig train;
  EvalConfig eval;

  /// Canonical JSON of the resolved config (defaults included).
  nlohmann::json to_json() const;
  /// FNV-1a over the canonical JSON, 16 hex digits.
  std::string hash() const;
};

/// Validates against the closed schema. Unknown keys and bad values raise a
/// config error whose message starts with the offending JSON path.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig parse_experiment_config_text(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Applies a seed override everywhere the seed is used.
void override_seed(ExperimentConfig& cfg, std::uint64_t seed);

std::string read_file(const std::string& path);
/// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace flowtopo
