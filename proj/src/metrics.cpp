#include "flowtopo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "flowtopo/error.hpp"

namespace flowtopo {

namespace {
void require_no_nan(std::span<const double> v, const char* what) {
  for (double s : v)
    if (std::isnan(s)) throw_error(ErrorCode::kInvalidInput, std::string(what) + ": NaN score");
}
}  // namespace

double auroc(std::span<const double> scores_id, std::span<const double> scores_ood) {
  require(!scores_id.empty() && !scores_ood.empty(), ErrorCode::kInvalidInput, "auroc: empty score list");
  require_no_nan(scores_id, "auroc");
  require_no_nan(scores_ood, "auroc");
  const std::size_t n_id = scores_id.size(), n_ood = scores_ood.size();
  std::vector<std::pair<double, bool>> all;
  all.reserve(n_id + n_ood);
  for (double s : scores_id) all.emplace_back(s, true);
  for (double s : scores_ood) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Sum of doubled mid-ranks of ID scores keeps everything integral.
  long double rank_sum2 = 0.0L;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const long double mid2 = static_cast<long double>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum2 += mid2;
    i = j;
  }
  const long double u2 = rank_sum2 - static_cast<long double>(n_id) * (n_id + 1);
  // u2 is an integer (twice the Mann-Whitney U), so one rounding happens here.
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_id) * static_cast<double>(n_ood));
}

double tpr_at_fpr(std::span<const double> scores_id, std::span<const double> scores_ood, double fpr_level) {
  require(!scores_id.empty() && !scores_ood.empty(), ErrorCode::kInvalidInput, "tpr_at_fpr: empty score list");
  require_no_nan(scores_id, "tpr_at_fpr");
  require_no_nan(scores_ood, "tpr_at_fpr");
  require(fpr_level >= 0.0 && fpr_level <= 1.0, ErrorCode::kInvalidInput, "tpr_at_fpr: level must be in [0, 1]");
  std::vector<double> ood(scores_ood.begin(), scores_ood.end());
  std::sort(ood.begin(), ood.end(), std::greater<>());
  const std::size_t m = ood.size();
  // Largest admissible count of OOD scores at or above the threshold.
  const auto allowed = static_cast<std::size_t>(std::floor(fpr_level * static_cast<double>(m) + 1e-9));
  if (allowed >= m) return 1.0;
  // The threshold sits just above the (allowed+1)-th largest OOD score.
  const double bar = ood[allowed];
  const auto hits = std::count_if(scores_id.begin(), scores_id.end(), [bar](double s) { return s > bar; });
  return static_cast<double>(hits) / static_cast<double>(scores_id.size());
}

KldEstimate kld_from_samples(const SyntheticTask& task, const Dataset& data, const Vec& model_log_joint) {
  const Index n = data.size();
  require(model_log_joint.size() == n && n >= 1, ErrorCode::kInvalidInput, "kld_from_samples: size mismatch");
  Vec diff(n);
  for (Index i = 0; i < n; ++i) {
    const int y = data.y[static_cast<std::size_t>(i)];
    diff(i) = task_logpdf(task, data.u.row(i).transpose(), y) + std::log(task.class_prob(y)) - model_log_joint(i);
  }
  KldEstimate out;
  out.samples = n;
  out.kld = diff.mean();
  const double var = n > 1 ? (diff.array() - out.kld).square().sum() / static_cast<double>(n - 1) : 0.0;
  out.stderr_ = std::sqrt(var / static_cast<double>(n));
  return out;
}

KldEstimate estimate_kld(const FlowModel& model, const SyntheticTask& task, Index n, RngStream& rng) {
  require(n >= 1000, ErrorCode::kInvalidInput, "estimate_kld: n must be >= 1000");
  require(model.classes() == task.classes(), ErrorCode::kInvalidInput, "estimate_kld: class count mismatch");
  const Dataset data = task_sample(task, n, rng);
  const Mat joint = model.log_prob_all(data.u).rowwise() + model.prior.log_probs();
  Vec picked(n);
  for (Index i = 0; i < n; ++i) picked(i) = joint(i, data.y[static_cast<std::size_t>(i)]);
  return kld_from_samples(task, data, picked);
}

Vec ood_scores(const FlowModel& model, const Mat& samples) { return model.log_prob(samples); }

const char* MetricReport::csv_header() {
  return "dataset,flow,base,objective,seed,kld,kld_se,auroc,tpr05,tpr10,tpr20";
}

std::string MetricReport::csv_row() const {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", dataset.c_str(), flow.c_str(),
                base.c_str(), objective.c_str(), static_cast<unsigned long long>(seed), kld, kld_se, auroc, tpr05,
                tpr10, tpr20);
  return buf;
}

}  // namespace flowtopo
