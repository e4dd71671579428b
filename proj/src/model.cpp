#include "flowtopo/model.hpp"

#include "flowtopo/error.hpp"

namespace flowtopo {

FlowModel::FlowModel(const ModelSpec& spec, ClassPrior prior_in, RngStream& init_rng)
    : flow(spec.flow, spec.dim, init_rng),
      base(spec.base, spec.dim, spec.classes, init_rng),
      prior(std::move(prior_in)),
      spec_(spec) {
  require(prior.classes() == spec.classes, ErrorCode::kInvalidInput, "FlowModel: prior has wrong class count");
}

std::vector<ParamBlock*> FlowModel::params() {
  std::vector<ParamBlock*> out;
  flow.collect(out);
  base.collect(out);
  return out;
}

FlowModel::Evaluated FlowModel::evaluate(Tape& tape, Var u, std::optional<Var> normalizer) const {
  Pushed p = flow.inverse(tape, u);
  Var cond_base = base.log_prob_all(tape, p.out, normalizer);
  Var cond = ad::add_col(cond_base, p.logdet);
  Var joint = ad::add_row(cond, tape.constant(prior.log_probs()));
  return {p.out, p.logdet, cond, joint, ad::logsumexp_cols(joint)};
}

Mat FlowModel::log_prob_all(const Mat& u) const {
  require(u.cols() == dim(), ErrorCode::kInvalidInput, "FlowModel: input width mismatch");
  Mat out(u.rows(), classes());
  for (Index start = 0; start < u.rows(); start += kEvalChunk) {
    const Index len = std::min(kEvalChunk, u.rows() - start);
    Tape tape(false);
    out.middleRows(start, len) = evaluate(tape, tape.constant(u.middleRows(start, len))).cond.value();
  }
  return out;
}

Vec FlowModel::log_prob(const Mat& u, std::optional<int> y) const {
  if (y) require(*y >= 0 && *y < classes(), ErrorCode::kInvalidInput, "log_prob: class index out of range");
  require(u.cols() == dim(), ErrorCode::kInvalidInput, "FlowModel: input width mismatch");
  Vec out(u.rows());
  for (Index start = 0; start < u.rows(); start += kEvalChunk) {
    const Index len = std::min(kEvalChunk, u.rows() - start);
    Tape tape(false);
    const Evaluated e = evaluate(tape, tape.constant(u.middleRows(start, len)));
    out.segment(start, len) = y ? Vec(e.cond.value().col(*y)) : Vec(e.marginal.value().col(0));
  }
  return out;
}

double flow_logprob(const FlowStack& flow, const BaseDistribution& base, const ClassPrior& prior, const Vec& u,
                    std::optional<int> y) {
  require(u.allFinite(), ErrorCode::kInvalidInput, "flow_logprob: non-finite input");
  require(u.size() == flow.dim(), ErrorCode::kInvalidInput, "flow_logprob: input width mismatch");
  if (y) require(*y >= 0 && *y < base.classes(), ErrorCode::kInvalidInput, "flow_logprob: class index out of range");
  Tape tape(false);
  Pushed p = flow.inverse(tape, tape.constant(u.transpose()));
  const Mat lp = base.log_prob_all(tape, p.out).value();
  const double ld = p.logdet.value()(0, 0);
  if (y) return lp(0, *y) + ld;
  const Mat joint = lp.rowwise() + prior.log_probs();
  return logsumexp_rows(joint)(0) + ld;
}

}  // namespace flowtopo
