#include "flowtopo/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "flowtopo/error.hpp"

namespace flowtopo {

const Mat& Var::value() const { return tape->value(*this); }

void Tape::check_owned(Var v, const char* what) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw_error(ErrorCode::kUsage, std::string(what) + ": variable is not recorded on this tape");
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const ParamBlock& block) {
  if (auto it = param_ids_.find(&block); it != param_ids_.end()) return Var{this, it->second};
  Node n;
  n.value = block.value;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_ids_.emplace(&block, id);
  return Var{this, id};
}

Var Tape::make(Mat value, std::initializer_list<Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& p : parents) {
      check_owned(p, "Tape::make");
      if (nodes_[static_cast<std::size_t>(p.id)].needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(Var v, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  check_owned(loss, "Tape::backward");
  if (!record_) throw_error(ErrorCode::kUsage, "Tape::backward: tape was created without recording");
  if (value(loss).rows() != 1 || value(loss).cols() != 1)
    throw_error(ErrorCode::kUsage, "Tape::backward: loss must be a 1x1 scalar");
  if (backward_done_) throw_error(ErrorCode::kUsage, "Tape::backward: already run on this tape");
  backward_done_ = true;
  accumulate(loss, Mat::Ones(1, 1));
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.backward) continue;
    // Closures accumulate into strictly earlier nodes, so n.grad is stable.
    n.backward(*this, n.grad);
  }
}

Mat Tape::grad(const ParamBlock& block) const {
  auto it = param_ids_.find(&block);
  if (it == param_ids_.end()) return Mat::Zero(block.value.rows(), block.value.cols());
  return grad(Var{const_cast<Tape*>(this), it->second});
}

Mat Tape::grad(Var v) const {
  check_owned(v, "Tape::grad");
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

namespace ad {
namespace {

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw_error(ErrorCode::kInvalidInput, std::string(op) + ": shape mismatch");
}

template <class F, class G>
Var unary(Var a, F&& f, G&& dfdx_times_grad) {
  Tape& t = *a.tape;
  Mat out = f(a.value());
  return t.make(std::move(out), {a}, [a, dfdx_times_grad](Tape& tp, const Mat& g) {
    tp.accumulate(a, dfdx_times_grad(tp, g));
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw_error(ErrorCode::kInvalidInput, "matmul: inner dimension mismatch");
  Tape& t = *a.tape;
  Mat out = a.value() * b.value();
  return t.make(std::move(out), {a, b}, [a, b](Tape& tp, const Mat& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw_error(ErrorCode::kInvalidInput, "add_row: row shape mismatch");
  Tape& t = *a.tape;
  Mat out = a.value().rowwise() + row.value().row(0);
  return t.make(std::move(out), {a, row}, [a, row](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    if (tp.needs_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

Var add_col(Var a, Var col) {
  if (col.cols() != 1 || col.rows() != a.rows())
    throw_error(ErrorCode::kInvalidInput, "add_col: column shape mismatch");
  Tape& t = *a.tape;
  Mat out = a.value().colwise() + col.value().col(0);
  return t.make(std::move(out), {a, col}, [a, col](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    if (tp.needs_grad(col)) tp.accumulate(col, g.rowwise().sum());
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tape& t = *a.tape;
  return t.make(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tape& t = *a.tape;
  return t.make(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    if (tp.needs_grad(b)) tp.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tape& t = *a.tape;
  return t.make(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tp, const Mat& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

Var scale(Var a, double c) {
  return unary(a, [c](const Mat& x) -> Mat { return x * c; },
               [c](Tape&, const Mat& g) -> Mat { return g * c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](const Mat& x) -> Mat { return x.array() + c; },
               [](Tape&, const Mat& g) -> Mat { return g; });
}

namespace {
// Vectorises where std::tanh does not: exp form away from zero, odd series
// near it (relative error below 1e-14 throughout).
Mat tanh_values(const Mat& x) {
  const auto a = x.array();
  const Eigen::ArrayXXd e = (-2.0 * a.abs()).exp();
  const Eigen::ArrayXXd far = (1.0 - e) / (1.0 + e) * a.sign();
  const Eigen::ArrayXXd x2 = a.square();
  const Eigen::ArrayXXd near = a * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0))));
  return (a.abs() < 0.02).select(near, far).matrix();
}
}  // namespace

Var tanh(Var a) {
  Tape& t = *a.tape;
  Mat out = tanh_values(a.value());
  const int out_id = static_cast<int>(t.size());
  return t.make(std::move(out), {a}, [a, out_id](Tape& tp, const Mat& g) {
    const Mat& y = tp.value(Var{&tp, out_id});
    tp.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Mat out = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  const int out_id = static_cast<int>(t.size());
  return t.make(std::move(out), {a}, [a, out_id](Tape& tp, const Mat& g) {
    const Mat& y = tp.value(Var{&tp, out_id});
    tp.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  Mat out = a.value().cwiseMax(0.0);
  return t.make(std::move(out), {a}, [a](Tape& tp, const Mat& g) {
    const Mat& x = tp.value(a);
    tp.accumulate(a, (x.array() > 0.0).select(g, 0.0).matrix());
  });
}

Var exp(Var a) {
  Tape& t = *a.tape;
  Mat out = a.value().array().exp();
  const int out_id = static_cast<int>(t.size());
  return t.make(std::move(out), {a}, [a, out_id](Tape& tp, const Mat& g) {
    tp.accumulate(a, g.cwiseProduct(tp.value(Var{&tp, out_id})));
  });
}

Var log(Var a) {
  Tape& t = *a.tape;
  Mat out = a.value().array().log();
  return t.make(std::move(out), {a}, [a](Tape& tp, const Mat& g) {
    tp.accumulate(a, g.cwiseQuotient(tp.value(a)));
  });
}

Var square(Var a) {
  Tape& t = *a.tape;
  return t.make(a.value().array().square().matrix(), {a}, [a](Tape& tp, const Mat& g) {
    tp.accumulate(a, 2.0 * g.cwiseProduct(tp.value(a)));
  });
}

Var sum_cols(Var a) {
  Tape& t = *a.tape;
  Mat out = a.value().rowwise().sum();
  const Index m = a.cols();
  return t.make(std::move(out), {a}, [a, m](Tape& tp, const Mat& g) {
    tp.accumulate(a, g.col(0).replicate(1, m));
  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const Index n = a.rows();
  Mat out = a.value().colwise().sum() / static_cast<double>(n);
  return t.make(std::move(out), {a}, [a, n](Tape& tp, const Mat& g) {
    tp.accumulate(a, (g.row(0) / static_cast<double>(n)).replicate(n, 1));
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return t.make(std::move(out), {a}, [a, r, c](Tape& tp, const Mat& g) {
    tp.accumulate(a, Mat::Constant(r, c, g(0, 0)));
  });
}

Var mean_all(Var a) {
  const double n = static_cast<double>(a.rows() * a.cols());
  return scale(sum_all(a), 1.0 / n);
}

Var logsumexp_cols(Var a) {
  Tape& t = *a.tape;
  Mat out = logsumexp_rows(a.value());
  const int out_id = static_cast<int>(t.size());
  return t.make(std::move(out), {a}, [a, out_id](Tape& tp, const Mat& g) {
    const Mat& x = tp.value(a);
    const Mat& lse = tp.value(Var{&tp, out_id});
    Mat soft = (x.colwise() - lse.col(0)).array().exp();
    tp.accumulate(a, (soft.array().colwise() * g.col(0).array()).matrix());
  });
}

Var gather_cols(Var a, std::span<const int> cols) {
  Tape& t = *a.tape;
  std::vector<int> idx(cols.begin(), cols.end());
  Mat out(a.rows(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= a.cols()) throw_error(ErrorCode::kInvalidInput, "gather_cols: index out of range");
    out.col(static_cast<Index>(j)) = a.value().col(idx[j]);
  }
  return t.make(std::move(out), {a}, [a, idx](Tape& tp, const Mat& g) {
    Mat ga = Mat::Zero(tp.value(a).rows(), tp.value(a).cols());
    for (std::size_t j = 0; j < idx.size(); ++j) ga.col(idx[j]) += g.col(static_cast<Index>(j));
    tp.accumulate(a, ga);
  });
}

Var place_cols(Index width, std::span<const std::pair<Var, std::vector<int>>> parts) {
  if (parts.empty()) throw_error(ErrorCode::kInvalidInput, "place_cols: no parts");
  Tape& t = *parts[0].first.tape;
  const Index n = parts[0].first.rows();
  Mat out = Mat::Zero(n, width);
  std::vector<std::pair<Var, std::vector<int>>> saved(parts.begin(), parts.end());
  for (const auto& [v, idx] : saved) {
    if (v.rows() != n || v.cols() != static_cast<Index>(idx.size()))
      throw_error(ErrorCode::kInvalidInput, "place_cols: part shape mismatch");
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(idx[j]) = v.value().col(static_cast<Index>(j));
  }
  // make() takes an initializer_list; chain the dependency through up to two parts.
  if (saved.size() > 2) throw_error(ErrorCode::kInvalidInput, "place_cols: at most two parts supported");
  const Var p0 = saved[0].first;
  const Var p1 = saved.size() > 1 ? saved[1].first : saved[0].first;
  return t.make(std::move(out), {p0, p1}, [saved](Tape& tp, const Mat& g) {
    for (const auto& [v, idx] : saved) {
      if (!tp.needs_grad(v)) continue;
      Mat gv(g.rows(), static_cast<Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) gv.col(static_cast<Index>(j)) = g.col(idx[j]);
      tp.accumulate(v, gv);
    }
  });
}

Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw_error(ErrorCode::kInvalidInput, "slice_cols: range out of bounds");
  Tape& t = *a.tape;
  Mat out = a.value().middleCols(start, count);
  return t.make(std::move(out), {a}, [a, start, count](Tape& tp, const Mat& g) {
    Mat ga = Mat::Zero(tp.value(a).rows(), tp.value(a).cols());
    ga.middleCols(start, count) = g;
    tp.accumulate(a, ga);
  });
}

Var pick(Var a, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != a.rows())
    throw_error(ErrorCode::kInvalidInput, "pick: label count does not match rows");
  Tape& t = *a.tape;
  std::vector<int> lab(labels.begin(), labels.end());
  Mat out(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    if (lab[i] < 0 || lab[i] >= a.cols()) throw_error(ErrorCode::kInvalidInput, "pick: class index out of range");
    out(i, 0) = a.value()(i, lab[i]);
  }
  return t.make(std::move(out), {a}, [a, lab](Tape& tp, const Mat& g) {
    Mat ga = Mat::Zero(tp.value(a).rows(), tp.value(a).cols());
    for (Index i = 0; i < ga.rows(); ++i) ga(i, lab[i]) = g(i, 0);
    tp.accumulate(a, ga);
  });
}

Var straight_through(Var a, const Mat& value) {
  if (value.rows() != a.rows() || value.cols() != a.cols())
    throw_error(ErrorCode::kInvalidInput, "straight_through: shape mismatch");
  Tape& t = *a.tape;
  return t.make(value, {a}, [a](Tape& tp, const Mat& g) { tp.accumulate(a, g); });
}

}  // namespace ad

std::size_t param_count(std::span<ParamBlock* const> blocks) {
  std::size_t n = 0;
  for (const ParamBlock* b : blocks) n += static_cast<std::size_t>(b->value.size());
  return n;
}

Vec flatten_params(std::span<ParamBlock* const> blocks) {
  Vec flat(static_cast<Index>(param_count(blocks)));
  Index k = 0;
  for (const ParamBlock* b : blocks) {
    flat.segment(k, b->value.size()) = b->value.reshaped();
    k += b->value.size();
  }
  return flat;
}

void unflatten_params(std::span<ParamBlock* const> blocks, const Vec& flat) {
  if (flat.size() != static_cast<Index>(param_count(blocks)))
    throw_error(ErrorCode::kInvalidInput, "unflatten_params: size mismatch");
  Index k = 0;
  for (ParamBlock* b : blocks) {
    b->value.reshaped() = flat.segment(k, b->value.size());
    k += b->value.size();
  }
}

Vec flatten_grads(const Tape& tape, std::span<ParamBlock* const> blocks) {
  Vec flat(static_cast<Index>(param_count(blocks)));
  Index k = 0;
  for (const ParamBlock* b : blocks) {
    const Mat g = tape.grad(*b);
    flat.segment(k, g.size()) = g.reshaped();
    k += g.size();
  }
  return flat;
}

}  // namespace flowtopo
