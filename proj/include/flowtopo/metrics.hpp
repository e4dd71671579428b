#pragma once

#include <span>
#include <string>

#include "flowtopo/tasks.hpp"

namespace flowtopo {

/// P(score_id > score_ood) with ties counted one half, via mid-ranks.
double auroc(std::span<const double> scores_id, std::span<const double> scores_ood);

/// Fraction of ID scores at or above the smallest threshold that admits at
/// most `fpr_level` of the OOD scores. ID is the positive class.
double tpr_at_fpr(std::span<const double> scores_id, std::span<const double> scores_ood, double fpr_level);

struct KldEstimate {
  double kld = 0.0;
  double stderr_ = 0.0;
  Index samples = 0;
};

/// Monte-Carlo joint KL(p(u,y) || p_model(u,y)) over draws from `task`.
KldEstimate estimate_kld(const FlowModel& model, const SyntheticTask& task, Index n, RngStream& rng);

/// KLD terms from pre-drawn task samples and the model's log p(u_i, y_i).
KldEstimate kld_from_samples(const SyntheticTask& task, const Dataset& data, const Vec& model_log_joint);

/// Same estimator with an arbitrary model log density log p_model(u, y).
template <class ModelLogJoint>
KldEstimate estimate_kld_with(const SyntheticTask& task, Index n, RngStream& rng, ModelLogJoint&& model_log_joint);

/// Marginal log-likelihood scores (higher = more in-distribution).
Vec ood_scores(const FlowModel& model, const Mat& samples);

struct MetricReport {
  std::string dataset;
  std::string flow;
  std::string base;
  std::string objective;
  std::uint64_t seed = 0;
  double kld = 0.0;
  double kld_se = 0.0;
  Index kld_samples = 0;
  double auroc = 0.0;
  double tpr05 = 0.0;
  double tpr10 = 0.0;
  double tpr20 = 0.0;

  static const char* csv_header();
  std::string csv_row() const;
};

// -- implementation --

template <class ModelLogJoint>
KldEstimate estimate_kld_with(const SyntheticTask& task, Index n, RngStream& rng, ModelLogJoint&& model_log_joint) {
  const Dataset data = task_sample(task, n, rng);
  Vec model(n);
  for (Index i = 0; i < n; ++i) model(i) = model_log_joint(Vec(data.u.row(i).transpose()), data.y[static_cast<std::size_t>(i)]);
  return kld_from_samples(task, data, model);
}

}  // namespace flowtopo
