#include "flowtopo/base_dists.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowtopo/error.hpp"
#include "flowtopo/flows.hpp"

namespace flowtopo {

const char* base_kind_name(BaseKind k) {
  switch (k) {
    case BaseKind::kGaussian: return "gaussian";
    case BaseKind::kMoG: return "mog";
    case BaseKind::kRSB: return "rsb";
    case BaseKind::kCRSB: return "crsb";
  }
  return "?";
}

BaseKind parse_base_kind(const std::string& s) {
  if (s == "gaussian") return BaseKind::kGaussian;
  if (s == "mog") return BaseKind::kMoG;
  if (s == "rsb") return BaseKind::kRSB;
  if (s == "crsb") return BaseKind::kCRSB;
  throw_error(ErrorCode::kInvalidInput, "unknown base kind '" + s + "'");
}

ClassPrior::ClassPrior(std::vector<double> probs) : probs_(std::move(probs)) {
  require(!probs_.empty(), ErrorCode::kInvalidInput, "ClassPrior: no classes");
  double total = 0.0;
  for (double p : probs_) {
    require(std::isfinite(p) && p >= 0.0, ErrorCode::kInvalidInput, "ClassPrior: probabilities must be >= 0");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-12, ErrorCode::kInvalidInput, "ClassPrior: probabilities must sum to 1");
}

ClassPrior ClassPrior::uniform(int classes) {
  require(classes >= 1, ErrorCode::kInvalidInput, "ClassPrior: classes must be >= 1");
  return ClassPrior(std::vector<double>(static_cast<std::size_t>(classes), 1.0 / classes));
}

ClassPrior ClassPrior::from_labels(std::span<const int> labels, int classes) {
  require(!labels.empty(), ErrorCode::kInvalidInput, "ClassPrior: no labels");
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (int y : labels) {
    require(y >= 0 && y < classes, ErrorCode::kInvalidInput, "ClassPrior: label out of range");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(labels.size());
  return ClassPrior(std::move(counts));
}

RowVec ClassPrior::log_probs() const {
  RowVec out(static_cast<Index>(probs_.size()));
  for (std::size_t i = 0; i < probs_.size(); ++i) out(static_cast<Index>(i)) = std::log(probs_[i]);
  return out;
}

Var ResampledBase::accept(Tape& tape, Var zb) const {
  Var s = acceptance.forward(tape, zb);
  if (accept_floor == 0.0) return s;
  return ad::add_scalar(ad::scale(s, 1.0 - accept_floor), accept_floor);
}

Mat ResampledBase::accept_batch(const Mat& zb) const {
  Mat out(zb.rows(), outputs());
  for (Index start = 0; start < zb.rows(); start += kEvalChunk) {
    const Index len = std::min(kEvalChunk, zb.rows() - start);
    Tape tape(false);
    out.middleRows(start, len) = accept(tape, tape.constant(zb.middleRows(start, len))).value();
  }
  return out;
}

double ResampledBase::alpha(double z_value) const { return std::pow(1.0 - z_value, truncation - 1); }

BaseDistribution::BaseDistribution(const BaseSpec& spec, int dim, int classes, RngStream& rng) : classes_(classes) {
  require(dim >= 1 && classes >= 1, ErrorCode::kInvalidInput, "BaseDistribution: dim and classes must be >= 1");
  switch (spec.kind) {
    case BaseKind::kGaussian:
      impl_ = GaussianBase{dim};
      break;
    case BaseKind::kMoG: {
      MoGBase m;
      m.dim = dim;
      m.classes = classes;
      m.means = {"base.means", Mat::Zero(classes, dim)};
      m.log_scales = {"base.log_scales", Mat::Zero(classes, dim)};
      // Spread the class means on a small circle so classes start distinct.
      if (classes > 1) {
        for (int y = 0; y < classes; ++y) {
          const double angle = 2.0 * std::numbers::pi * y / classes;
          m.means.value(y, 0) = 0.5 * std::cos(angle);
          if (dim > 1) m.means.value(y, 1) = 0.5 * std::sin(angle);
        }
      }
      impl_ = std::move(m);
      break;
    }
    case BaseKind::kRSB:
    case BaseKind::kCRSB: {
      require(spec.truncation >= 1, ErrorCode::kInvalidInput, "resampled base: truncation must be >= 1");
      require(spec.accept_floor >= 0.0 && spec.accept_floor < 1.0, ErrorCode::kInvalidInput,
              "resampled base: acceptance floor must be in [0, 1)");
      ResampledBase r;
      r.dim = dim;
      r.conditional = spec.kind == BaseKind::kCRSB;
      r.truncation = spec.truncation;
      r.accept_floor = spec.accept_floor;
      r.acceptance = DenseNet("accept", dim, spec.acceptance_hidden, r.conditional ? classes : 1, spec.activation,
                              OutputHead::kSigmoid, rng, /*zero_output=*/true);
      impl_ = std::move(r);
      break;
    }
  }
}

BaseKind BaseDistribution::kind() const {
  if (std::holds_alternative<GaussianBase>(impl_)) return BaseKind::kGaussian;
  if (std::holds_alternative<MoGBase>(impl_)) return BaseKind::kMoG;
  return std::get<ResampledBase>(impl_).conditional ? BaseKind::kCRSB : BaseKind::kRSB;
}

int BaseDistribution::dim() const {
  return std::visit([](const auto& b) { return b.dim; }, impl_);
}

ResampledBase& BaseDistribution::resampled() {
  if (!is_resampled()) throw_error(ErrorCode::kInvalidInput, "base distribution is not a resampled kind");
  return std::get<ResampledBase>(impl_);
}
const ResampledBase& BaseDistribution::resampled() const {
  if (!is_resampled()) throw_error(ErrorCode::kInvalidInput, "base distribution is not a resampled kind");
  return std::get<ResampledBase>(impl_);
}
MoGBase& BaseDistribution::mog() {
  if (!std::holds_alternative<MoGBase>(impl_)) throw_error(ErrorCode::kInvalidInput, "base distribution is not a MoG");
  return std::get<MoGBase>(impl_);
}
const MoGBase& BaseDistribution::mog() const {
  if (!std::holds_alternative<MoGBase>(impl_)) throw_error(ErrorCode::kInvalidInput, "base distribution is not a MoG");
  return std::get<MoGBase>(impl_);
}

void BaseDistribution::collect(std::vector<ParamBlock*>& out) {
  if (auto* m = std::get_if<MoGBase>(&impl_)) {
    out.push_back(&m->means);
    out.push_back(&m->log_scales);
  } else if (auto* r = std::get_if<ResampledBase>(&impl_)) {
    r->acceptance.collect(out);
  }
}

namespace {

Var std_normal_rows(Tape& tape, Var z) {
  const Mat& zv = z.value();
  Mat out = (-0.5 * zv.rowwise().squaredNorm()).array() - 0.5 * static_cast<double>(zv.cols()) * kLog2Pi;
  return tape.make(std::move(out), {z}, [z](Tape& tp, const Mat& g) {
    tp.accumulate(z, -(tp.value(z).array().colwise() * g.col(0).array()).matrix());
  });
}

// (n x d), means (C x d), log_scales (C x d) -> (n x C).
Var diag_gaussian_all(Tape& tape, Var z, Var means, Var log_scales) {
  const Mat& zv = z.value();
  const Mat& mu = means.value();
  const Mat& ls = log_scales.value();
  const Index n = zv.rows(), d = zv.cols(), c = mu.rows();
  Mat out(n, c);
  for (Index y = 0; y < c; ++y) {
    const double norm = -0.5 * static_cast<double>(d) * kLog2Pi - ls.row(y).sum();
    const RowVec inv = (-ls.row(y)).array().exp();
    for (Index i = 0; i < n; ++i) {
      const RowVec r = (zv.row(i) - mu.row(y)).cwiseProduct(inv);
      out(i, y) = norm - 0.5 * r.squaredNorm();
    }
  }
  return tape.make(std::move(out), {z, means, log_scales}, [z, means, log_scales](Tape& tp, const Mat& g) {
    const Mat& zv = tp.value(z);
    const Mat& mu = tp.value(means);
    const Mat& ls = tp.value(log_scales);
    const Index n = zv.rows(), d = zv.cols(), c = mu.rows();
    Mat gz = Mat::Zero(n, d), gmu = Mat::Zero(c, d), gls = Mat::Zero(c, d);
    for (Index y = 0; y < c; ++y) {
      const RowVec inv2 = (-2.0 * ls.row(y)).array().exp();
      for (Index i = 0; i < n; ++i) {
        const double gi = g(i, y);
        const RowVec diff = zv.row(i) - mu.row(y);
        const RowVec scaled = diff.cwiseProduct(inv2);
        gz.row(i) -= gi * scaled;
        gmu.row(y) += gi * scaled;
        gls.row(y) += gi * (diff.cwiseProduct(scaled).array() - 1.0).matrix();
      }
    }
    tp.accumulate(z, gz);
    tp.accumulate(means, gmu);
    tp.accumulate(log_scales, gls);
  });
}

}  // namespace

Var resampled_log_density(Var log_pi, Var accept, Var normalizer, int truncation) {
  Tape& tape = *log_pi.tape;
  const Mat& lp = log_pi.value();
  const Mat& a = accept.value();
  const Mat& zn = normalizer.value();
  require(normalizer.rows() == 1 && normalizer.cols() == a.cols() && lp.cols() == 1 && lp.rows() == a.rows(),
          ErrorCode::kInvalidInput, "resampled_log_density: shape mismatch");
  for (Index k = 0; k < zn.cols(); ++k)
    if (!(zn(0, k) > 0.0 && zn(0, k) <= 1.0 + 1e-12))
      throw_error(ErrorCode::kNumeric, "resampled base: normalizer estimate outside (0, 1]");
  const Index n = a.rows(), c = a.cols();
  Mat out(n, c);
  for (Index k = 0; k < c; ++k) {
    const double z = zn(0, k);
    const double alpha = std::pow(1.0 - z, truncation - 1);
    for (Index i = 0; i < n; ++i) out(i, k) = lp(i, 0) + std::log((1.0 - alpha) * a(i, k) / z + alpha);
  }
  return tape.make(std::move(out), {log_pi, accept, normalizer}, [log_pi, accept, normalizer, truncation](Tape& tp, const Mat& g) {
    const Mat& a = tp.value(accept);
    const Mat& zn = tp.value(normalizer);
    const Index n = a.rows(), c = a.cols();
    Mat ga(n, c), gz = Mat::Zero(1, c);
    for (Index k = 0; k < c; ++k) {
      const double z = zn(0, k);
      const double alpha = std::pow(1.0 - z, truncation - 1);
      const double dalpha = truncation >= 2 ? -(truncation - 1) * std::pow(1.0 - z, truncation - 2) : 0.0;
      for (Index i = 0; i < n; ++i) {
        const double q = (1.0 - alpha) * a(i, k) / z + alpha;
        ga(i, k) = g(i, k) * (1.0 - alpha) / (z * q);
        const double dq = dalpha * (1.0 - a(i, k) / z) - (1.0 - alpha) * a(i, k) / (z * z);
        gz(0, k) += g(i, k) * dq / q;
      }
    }
    tp.accumulate(log_pi, g.rowwise().sum());
    tp.accumulate(accept, ga);
    tp.accumulate(normalizer, gz);
  });
}

Var BaseDistribution::log_prob_all(Tape& tape, Var z, std::optional<Var> normalizer) const {
  if (z.cols() != dim()) throw_error(ErrorCode::kInvalidInput, "base distribution: input width mismatch");
  const std::vector<int> broadcast(static_cast<std::size_t>(classes_), 0);
  if (std::holds_alternative<GaussianBase>(impl_)) return ad::gather_cols(std_normal_rows(tape, z), broadcast);
  if (const auto* m = std::get_if<MoGBase>(&impl_))
    return diag_gaussian_all(tape, z, tape.param(m->means), tape.param(m->log_scales));
  const auto& r = std::get<ResampledBase>(impl_);
  Var zn;
  if (normalizer) {
    zn = *normalizer;
  } else {
    if (r.z.size() != static_cast<std::size_t>(r.outputs()))
      throw_error(ErrorCode::kState, "resampled base: normalizer Z has not been estimated");
    zn = tape.constant(Eigen::Map<const Mat>(r.z.data(), 1, r.outputs()));
  }
  Var lp = resampled_log_density(std_normal_rows(tape, z), r.accept(tape, z), zn, r.truncation);
  return r.conditional ? lp : ad::gather_cols(lp, broadcast);
}

Mat BaseDistribution::log_prob_all(const Mat& z) const {
  Mat out(z.rows(), classes_);
  for (Index start = 0; start < z.rows(); start += kEvalChunk) {
    const Index len = std::min(kEvalChunk, z.rows() - start);
    Tape tape(false);
    out.middleRows(start, len) = log_prob_all(tape, tape.constant(z.middleRows(start, len))).value();
  }
  return out;
}

double mog_logprob(const MoGBase& base, const Vec& z, int y) {
  require(y >= 0 && y < base.classes, ErrorCode::kInvalidInput, "mog_logprob: class index out of range");
  require(z.size() == base.dim && z.allFinite(), ErrorCode::kInvalidInput, "mog_logprob: bad input");
  Tape tape(false);
  Var out = diag_gaussian_all(tape, tape.constant(z.transpose()), tape.param(base.means), tape.param(base.log_scales));
  return out.value()(0, y);
}

double crsb_logprob(const ResampledBase& base, const Vec& z, int y) {
  const int outputs = base.outputs();
  require(y >= 0 && (outputs == 1 || y < outputs), ErrorCode::kInvalidInput, "crsb_logprob: class index out of range");
  if (base.z.size() != static_cast<std::size_t>(outputs))
    throw_error(ErrorCode::kState, "crsb_logprob: normalizer Z has not been estimated");
  require(z.size() == base.dim && z.allFinite(), ErrorCode::kInvalidInput, "crsb_logprob: bad input");
  Tape tape(false);
  Var zv = tape.constant(z.transpose());
  Var lp = resampled_log_density(std_normal_rows(tape, zv), base.accept(tape, zv),
                                 tape.constant(Eigen::Map<const Mat>(base.z.data(), 1, outputs)), base.truncation);
  return lp.value()(0, outputs == 1 ? 0 : y);
}

std::vector<double> estimate_z(ResampledBase& base, long long n_samples, RngStream& rng) {
  require(n_samples >= 1, ErrorCode::kInvalidInput, "estimate_z: n_samples must be >= 1");
  const int outputs = base.outputs();
  Mat values(static_cast<Index>(n_samples), outputs);
  for (long long start = 0; start < n_samples; start += kEvalChunk) {
    const Index len = static_cast<Index>(std::min<long long>(kEvalChunk, n_samples - start));
    values.middleRows(static_cast<Index>(start), len) = base.accept_batch(sample_std_normal(rng, len, base.dim));
  }
  // Two-pass mean in sample order: chunking-independent, and exact for a
  // constant acceptance.
  std::vector<double> sums(static_cast<std::size_t>(outputs), 0.0);
  for (int k = 0; k < outputs; ++k) {
    double s = 0.0;
    for (Index i = 0; i < values.rows(); ++i) s += values(i, k);
    const double m = s / static_cast<double>(n_samples);
    double r = 0.0;
    for (Index i = 0; i < values.rows(); ++i) r += values(i, k) - m;
    sums[static_cast<std::size_t>(k)] = m + r / static_cast<double>(n_samples);
  }
  base.z = sums;
  base.z_samples.assign(static_cast<std::size_t>(outputs), n_samples);
  return sums;
}

double estimate_z(ResampledBase& base, int y, long long n_samples, RngStream& rng) {
  require(y >= 0 && (base.outputs() == 1 || y < base.outputs()), ErrorCode::kInvalidInput,
          "estimate_z: class index out of range");
  const auto all = estimate_z(base, n_samples, rng);
  return all[static_cast<std::size_t>(base.outputs() == 1 ? 0 : y)];
}

Var training_normalizer(Tape& tape, const ResampledBase& base, const Mat& proposals, std::vector<double>& ema,
                        double decay) {
  require(decay >= 0.0 && decay < 1.0, ErrorCode::kInvalidInput, "training_normalizer: decay must be in [0, 1)");
  Var batch = ad::mean_rows(base.accept(tape, tape.constant(proposals)));
  const Index k = batch.cols();
  if (ema.size() != static_cast<std::size_t>(k)) {
    ema.assign(batch.value().data(), batch.value().data() + k);
  } else {
    for (Index j = 0; j < k; ++j)
      ema[static_cast<std::size_t>(j)] = decay * ema[static_cast<std::size_t>(j)] + (1.0 - decay) * batch.value()(0, j);
  }
  return ad::straight_through(batch, Eigen::Map<const Mat>(ema.data(), 1, k));
}

Vec crsb_sample(const ResampledBase& base, int y, RngStream& rng) {
  require(base.truncation >= 1, ErrorCode::kInvalidInput, "crsb_sample: truncation must be >= 1");
  require(y >= 0 && (base.outputs() == 1 || y < base.outputs()), ErrorCode::kInvalidInput,
          "crsb_sample: class index out of range");
  const int col = base.outputs() == 1 ? 0 : y;
  for (int draw = 1;; ++draw) {
    Vec z(base.dim);
    for (int j = 0; j < base.dim; ++j) z(j) = rng.normal();
    if (draw == base.truncation) return z;
    const double u = rng.uniform();
    if (u < base.accept_batch(z.transpose())(0, col)) return z;
  }
}

Mat crsb_sample_n(const ResampledBase& base, int y, Index n, const RngStream& rng) {
  require(base.truncation >= 1, ErrorCode::kInvalidInput, "crsb_sample: truncation must be >= 1");
  require(y >= 0 && (base.outputs() == 1 || y < base.outputs()), ErrorCode::kInvalidInput,
          "crsb_sample: class index out of range");
  const int col = base.outputs() == 1 ? 0 : y;
  std::vector<RngStream> streams;
  streams.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) streams.push_back(rng.split(static_cast<std::uint64_t>(i)));
  Mat out(n, base.dim);
  std::vector<Index> active(static_cast<std::size_t>(n));
  std::iota(active.begin(), active.end(), Index{0});
  // Each round mirrors one iteration of crsb_sample for every pending item.
  for (int draw = 1; !active.empty(); ++draw) {
    Mat z(static_cast<Index>(active.size()), base.dim);
    for (std::size_t r = 0; r < active.size(); ++r)
      for (int j = 0; j < base.dim; ++j) z(static_cast<Index>(r), j) = streams[static_cast<std::size_t>(active[r])].normal();
    if (draw == base.truncation) {
      for (std::size_t r = 0; r < active.size(); ++r) out.row(active[r]) = z.row(static_cast<Index>(r));
      break;
    }
    const Mat a = base.accept_batch(z);
    std::vector<Index> next;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const double u = streams[static_cast<std::size_t>(active[r])].uniform();
      if (u < a(static_cast<Index>(r), col)) {
        out.row(active[r]) = z.row(static_cast<Index>(r));
      } else {
        next.push_back(active[r]);
      }
    }
    active = std::move(next);
  }
  return out;
}

double marginal_logprob(const BaseDistribution& base, const ClassPrior& prior, const Vec& z) {
  return marginal_logprob_batch(base, prior, z.transpose())(0);
}

Vec marginal_logprob_batch(const BaseDistribution& base, const ClassPrior& prior, const Mat& z) {
  require(prior.classes() == base.classes(), ErrorCode::kInvalidInput, "marginal_logprob: prior/base class mismatch");
  const Mat lp = base.log_prob_all(z).rowwise() + prior.log_probs();
  return logsumexp_rows(lp);
}

}  // namespace flowtopo
