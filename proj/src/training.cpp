#include "flowtopo/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace flowtopo {

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kMleMarginal: return "mle_marginal";
    case Objective::kMleCls: return "mle_cls";
    case Objective::kIB: return "ib";
  }
  return "?";
}

Objective parse_objective(const std::string& s) {
  if (s == "mle_marginal") return Objective::kMleMarginal;
  if (s == "mle_cls") return Objective::kMleCls;
  if (s == "ib") return Objective::kIB;
  throw_error(ErrorCode::kInvalidInput, "unknown objective '" + s + "'");
}

void TrainConfig::validate() const {
  require(beta >= 0.0, ErrorCode::kConfig, "train.beta must be >= 0");
  require(objective != Objective::kIB || sigma > 0.0, ErrorCode::kConfig, "train.sigma must be > 0 for ib");
  require(lr > 0.0, ErrorCode::kConfig, "train.lr must be > 0");
  require(batch >= 2, ErrorCode::kConfig, "train.batch must be >= 2");
  require(steps >= 0, ErrorCode::kConfig, "train.steps must be >= 0");
  require(z_batch_samples >= 1, ErrorCode::kConfig, "train.S must be >= 1");
  require(ema_decay >= 0.0 && ema_decay < 1.0, ErrorCode::kConfig, "train.ema_decay must be in [0, 1)");
  require(z_final_samples >= 1, ErrorCode::kConfig, "train.z_samples must be >= 1");
}

namespace {

void check_rows_finite(const Mat& per_sample, const char* what) {
  for (Index i = 0; i < per_sample.rows(); ++i)
    if (!std::isfinite(per_sample(i, 0)))
      throw_error(ErrorCode::kNumeric, std::string(what) + ": non-finite loss at sample " + std::to_string(i));
}

}  // namespace

LossTerms loss_mle(Tape& tape, const FlowModel& model, const Mat& u, std::span<const int> y, bool conditional,
                   std::optional<Var> normalizer) {
  require(u.rows() >= 1, ErrorCode::kInvalidInput, "loss_mle: empty batch");
  require(static_cast<Index>(y.size()) == u.rows(), ErrorCode::kInvalidInput, "loss_mle: label count mismatch");
  const auto e = model.evaluate(tape, tape.constant(u), normalizer);
  Var per = conditional ? ad::pick(e.cond, y) : e.marginal;
  check_rows_finite(per.value(), "loss_mle");
  Var loss = ad::scale(ad::mean_all(per), -1.0);
  return {loss, loss, tape.constant(Mat::Zero(1, 1))};
}

LossTerms loss_ib(Tape& tape, const FlowModel& model, const Mat& u, std::span<const int> y, double beta,
                  const Mat& noise, std::optional<Var> normalizer) {
  require(u.rows() >= 1, ErrorCode::kInvalidInput, "loss_ib: empty batch");
  require(static_cast<Index>(y.size()) == u.rows(), ErrorCode::kInvalidInput, "loss_ib: label count mismatch");
  require(noise.rows() == u.rows() && noise.cols() == u.cols(), ErrorCode::kInvalidInput, "loss_ib: noise shape");
  const auto e = model.evaluate(tape, tape.constant(u + noise), normalizer);
  // e.marginal already includes the log-det; CI(U,Z) = -E[log sum p(z|y')p(y') + log|det|].
  Var uz_per = ad::scale(e.marginal, -1.0);
  Var zy_per = ad::sub(ad::pick(e.joint, y), e.marginal);
  check_rows_finite(uz_per.value(), "loss_ib");
  check_rows_finite(zy_per.value(), "loss_ib");
  Var ci_uz = ad::mean_all(uz_per);
  Var ci_zy = ad::mean_all(zy_per);
  return {ad::sub(ci_uz, ad::scale(ci_zy, beta)), ci_uz, ci_zy};
}

LossTerms loss_ib(Tape& tape, const FlowModel& model, const Mat& u, std::span<const int> y, double beta,
                  double sigma, RngStream& rng, std::optional<Var> normalizer) {
  require(sigma > 0.0, ErrorCode::kInvalidInput, "loss_ib: sigma must be > 0");
  const Mat noise = sigma * sample_std_normal(rng, u.rows(), u.cols());
  return loss_ib(tape, model, u, y, beta, noise, normalizer);
}

void adam_step(std::span<ParamBlock* const> params, const std::vector<Mat>& grads, AdamState& state, double lr) {
  require(grads.size() == params.size(), ErrorCode::kInvalidInput, "adam_step: gradient count mismatch");
  if (state.m.empty()) {
    for (const ParamBlock* p : params) {
      state.m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  require(state.m.size() == params.size(), ErrorCode::kInvalidInput, "adam_step: state/parameter mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = grads[i];
    require(g.rows() == params[i]->value.rows() && g.cols() == params[i]->value.cols(), ErrorCode::kInvalidInput,
            "adam_step: gradient shape mismatch for " + params[i]->name);
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g;
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
    params[i]->value.array() -=
        lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + kAdamEps);
  }
}

std::string TrainHistory::to_csv() const {
  std::string out = "step,loss,ci_uz,ci_zy,z_min,z_max\n";
  char buf[256];
  for (const HistoryRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.loss, r.ci_uz, r.ci_zy, r.z_min,
                  r.z_max);
    out += buf;
  }
  return out;
}

void freeze_normalizer(FlowModel& model, long long n_samples, std::uint64_t seed) {
  if (!model.base.is_resampled()) return;
  RngStream rng(seed, streams::kFrozenZ);
  estimate_z(model.base.resampled(), n_samples, rng);
}

TrainResult train(FlowModel model, const TrainConfig& config, const Dataset& data) {
  config.validate();
  require(data.size() >= 1, ErrorCode::kInvalidInput, "train: empty dataset");
  require(data.u.cols() == model.dim(), ErrorCode::kInvalidInput, "train: data dimension mismatch");
  for (int y : data.y)
    require(y >= 0 && y < model.classes(), ErrorCode::kInvalidInput, "train: label out of range");

  TrainHistory history;
  RngStream batch_rng(config.seed, streams::kBatch);
  RngStream noise_rng(config.seed, streams::kNoise);
  RngStream proposal_rng(config.seed, streams::kProposal);
  AdamState adam;
  std::vector<double> ema;
  const bool resampled = model.base.is_resampled();
  const int d = model.dim();

  Mat u(config.batch, d);
  std::vector<int> y(static_cast<std::size_t>(config.batch));
  for (long long step = 0; step < config.steps; ++step) {
    for (int i = 0; i < config.batch; ++i) {
      const auto k = static_cast<Index>(batch_rng.below(static_cast<std::uint64_t>(data.size())));
      u.row(i) = data.u.row(k);
      y[static_cast<std::size_t>(i)] = data.y[static_cast<std::size_t>(k)];
    }
    std::vector<double> ema_next = ema;
    Tape tape;
    std::optional<Var> normalizer;
    try {
      if (resampled) {
        const Mat proposals = sample_std_normal(proposal_rng, config.z_batch_samples, d);
        normalizer = training_normalizer(tape, model.base.resampled(), proposals, ema_next, config.ema_decay);
      }
      LossTerms terms;
      switch (config.objective) {
        case Objective::kMleMarginal: terms = loss_mle(tape, model, u, y, false, normalizer); break;
        case Objective::kMleCls: terms = loss_mle(tape, model, u, y, true, normalizer); break;
        case Objective::kIB: terms = loss_ib(tape, model, u, y, config.beta, config.sigma, noise_rng, normalizer); break;
      }
      tape.backward(terms.loss);
      auto params = model.params();
      std::vector<Mat> grads;
      grads.reserve(params.size());
      for (ParamBlock* p : params) {
        grads.push_back(tape.grad(*p));
        if (!grads.back().allFinite())
          throw_error(ErrorCode::kNumeric, "non-finite gradient for parameter " + p->name);
      }
      HistoryRow row{step, terms.loss.scalar(), terms.ci_uz.scalar(), terms.ci_zy.scalar(), 1.0, 1.0};
      if (resampled) {
        row.z_min = *std::min_element(ema_next.begin(), ema_next.end());
        row.z_max = *std::max_element(ema_next.begin(), ema_next.end());
      }
      adam_step(params, grads, adam, config.lr);
      ema = std::move(ema_next);
      history.rows.push_back(row);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumeric) throw;
      if (resampled && !ema.empty()) model.base.resampled().z = ema;
      throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " + e.what(), std::move(model),
                            std::move(history));
    }
  }
  model.provenance.seed = config.seed;
  model.provenance.steps = config.steps;
  model.provenance.objective = objective_name(config.objective);
  freeze_normalizer(model, config.z_final_samples, config.seed);
  return {std::move(model), std::move(history)};
}

}  // namespace flowtopo
