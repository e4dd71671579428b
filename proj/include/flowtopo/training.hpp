#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flowtopo/error.hpp"
#include "flowtopo/model.hpp"

namespace flowtopo {

enum class Objective { kMleMarginal, kMleCls, kIB };

const char* objective_name(Objective o);
Objective parse_objective(const std::string& s);

struct TrainConfig {
  Objective objective = Objective::kIB;
  double beta = 1.0;
  double sigma = 0.05;
  double lr = 1e-3;
  int batch = 256;
  long long steps = 10000;
  std::uint64_t seed = 0;
  int z_batch_samples = 1024;
  double ema_decay = 0.99;
  long long z_final_samples = 100000;

  void validate() const;
};

/// Labeled feature vectors, one per row.
struct Dataset {
  Mat u;
  std::vector<int> y;
  int classes = 1;

  Index size() const { return u.rows(); }
};

struct LossTerms {
  Var loss;
  Var ci_uz;  // compression term (the loss itself for maximum likelihood)
  Var ci_zy;  // class-information term (zero for maximum likelihood)
};

/// Negative log-likelihood, class-conditional or prior-marginalised.
LossTerms loss_mle(Tape& tape, const FlowModel& model, const Mat& u, std::span<const int> y, bool conditional,
                   std::optional<Var> normalizer = std::nullopt);

/// Information-bottleneck loss on noised inputs u + noise. `noise` is the
/// already-scaled perturbation (n x d).
LossTerms loss_ib(Tape& tape, const FlowModel& model, const Mat& u, std::span<const int> y, double beta,
                  const Mat& noise, std::optional<Var> normalizer = std::nullopt);
/// Draws noise ~ N(0, sigma^2 I) from `rng`, one row per sample.
LossTerms loss_ib(Tape& tape, const FlowModel& model, const Mat& u, std::span<const int> y, double beta,
                  double sigma, RngStream& rng, std::optional<Var> normalizer = std::nullopt);

struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  long long t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

void adam_step(std::span<ParamBlock* const> params, const std::vector<Mat>& grads, AdamState& state, double lr);

struct HistoryRow {
  long long step = 0;
  double loss = 0.0;
  double ci_uz = 0.0;
  double ci_zy = 0.0;
  double z_min = 1.0;
  double z_max = 1.0;
};

struct TrainHistory {
  std::vector<HistoryRow> rows;

  std::string to_csv() const;
};

struct TrainResult {
  FlowModel model;
  TrainHistory history;
};

/// Thrown when a step produces a non-finite loss or gradient. Carries the
/// model as it was before that step.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& message, FlowModel last_good, TrainHistory history)
      : Error(ErrorCode::kNumeric, message), last_good_(std::move(last_good)), history_(std::move(history)) {}

  const FlowModel& last_good() const { return last_good_; }
  const TrainHistory& history() const { return history_; }

 private:
  FlowModel last_good_;
  TrainHistory history_;
};

/// Stream identifiers used by training; fixed so runs are reproducible.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kBatch = 2;
inline constexpr std::uint64_t kNoise = 3;
inline constexpr std::uint64_t kProposal = 4;
inline constexpr std::uint64_t kFrozenZ = 5;
inline constexpr std::uint64_t kTrainData = 10;
inline constexpr std::uint64_t kValData = 11;
inline constexpr std::uint64_t kEvalData = 20;
inline constexpr std::uint64_t kOod = 21;
inline constexpr std::uint64_t kOodId = 22;
}  // namespace streams

/// Optimises `model` in place on `data` and freezes the offline normalizer
/// at the end for resampled bases.
TrainResult train(FlowModel model, const TrainConfig& config, const Dataset& data);

/// Freezes a high-precision normalizer estimate (no-op for other bases).
void freeze_normalizer(FlowModel& model, long long n_samples, std::uint64_t seed);

}  // namespace flowtopo
