#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowtopo/config.hpp"
#include "flowtopo/grid.hpp"

namespace flowtopo {

/// Process exit status for an error category: 2 config/usage, 3 numeric,
/// 4 I/O, parse or version.
int exit_code_for(ErrorCode code);

struct TrainSummary {
  long long steps = 0;
  double final_loss = 0.0;
  double z_min = 1.0;
  double z_max = 1.0;
  double val_nll = 0.0;  // mean negative marginal log-likelihood, NaN without a validation split
};

/// Draws the training split, builds and trains the model described by `cfg`.
TrainResult run_training(const ExperimentConfig& cfg);
TrainSummary summarize_training(const ExperimentConfig& cfg, const TrainResult& result);

/// KLD against the task plus OOD detection scores on the configured benchmark.
MetricReport run_evaluation(const FlowModel& model, const ExperimentConfig& cfg);

/// "<stem>.history.csv" / "<stem>.checkpoint.json" next to a model path.
std::string history_path_for(const std::string& model_path);
std::string checkpoint_path_for(const std::string& model_path);

/// Train from a config file and write the model and its history. On a
/// numeric abort the last good model is written as a checkpoint and the
/// error is rethrown.
TrainSummary cmd_train(const std::string& config_path, const std::string& out_path,
                       std::optional<std::uint64_t> seed = std::nullopt);
/// Evaluate a saved model and append one row (header on first write).
MetricReport cmd_eval(const std::string& model_path, const std::string& config_path, const std::string& out_csv,
                      std::optional<std::uint64_t> seed = std::nullopt);

enum class RenderMode { kDensity, kAcceptance };
RenderMode parse_render_mode(const std::string& s);

struct RenderRequest {
  RenderMode mode = RenderMode::kDensity;
  std::optional<int> y;  // marginal density when unset; acceptance needs a class (default 0)
  GridSpec grid;
};

/// Writes "<out>.pgm" and "<out>.csv"; a trailing .pgm/.csv on `out` is dropped.
DensityGrid cmd_render(const std::string& model_path, const RenderRequest& request, const std::string& out);

struct SweepCell {
  std::string label;
  std::size_t config_index = 0;
  std::uint64_t seed = 0;
  std::string dir;
};

struct SweepOutcome {
  std::vector<SweepCell> cells;
  std::vector<std::string> failures;  // "label seed: message"
};

/// Sweep spec: {"configs": [path | inline object, ...], "seeds": [...], "jobs": n}.
/// Each (config, seed) cell is trained and evaluated exactly as cmd_train +
/// cmd_eval would, in "<out>/<label>/seed_<s>/". summary.csv is rebuilt from
/// the per-cell metrics files.
SweepOutcome cmd_sweep(const std::string& sweep_path, const std::string& out_dir, int jobs = 0);

/// Parses one MetricReport CSV row.
MetricReport parse_metric_row(const std::string& line);

/// Table-shaped summary: one row per dataset, a mean and sd column per
/// flow_base_objective. sd is the sample standard deviation (n - 1).
std::string summarize_metrics(const std::vector<MetricReport>& rows);

}  // namespace flowtopo
