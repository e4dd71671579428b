#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowtopo/tensor.hpp"

namespace flowtopo {

/// A named, trainable parameter matrix.
struct ParamBlock {
  std::string name;
  Mat value;
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

/// Records matrix-valued primitive operations and replays them backwards to
/// produce exact gradients of a scalar loss. With recording disabled the tape
/// only evaluates values, which is how every inference path runs.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Mat& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Mat value);
  /// Leaf bound to `block`; repeated calls return the same node.
  Var param(const ParamBlock& block);

  /// Records a node. `backward` may be empty when no parent needs gradients;
  /// `parents` decides whether the new node is differentiable.
  Var make(Mat value, std::initializer_list<Var> parents, BackwardFn backward);
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  /// Adds `g` into the gradient buffer of `v` (no-op for constants).
  void accumulate(Var v, const Mat& g);

  /// Reverse sweep from a 1x1 loss node. Each recorded node is visited once.
  void backward(Var loss);

  /// Gradient of the last backward() loss w.r.t. a parameter block; zeros
  /// with the block's shape if the block did not influence the loss.
  Mat grad(const ParamBlock& block) const;
  Mat grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
  };

  void check_owned(Var v, const char* what) const;

  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const ParamBlock*, int> param_ids_;
};

/// Primitive differentiable operations.
namespace ad {

Var matmul(Var a, Var b);
/// a (n x m) + row (1 x m) broadcast down the rows.
Var add_row(Var a, Var row);
/// a (n x m) + col (n x 1) broadcast across the columns.
Var add_col(Var a, Var col);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
/// Row sums: n x m -> n x 1.
Var sum_cols(Var a);
/// Column means: n x m -> 1 x m.
Var mean_rows(Var a);
Var mean_all(Var a);
Var sum_all(Var a);
/// Max-shifted log-sum-exp across each row: n x m -> n x 1.
Var logsumexp_cols(Var a);
Var gather_cols(Var a, std::span<const int> cols);
/// Assembles an n x width matrix whose column parts[i].second[j] is column j
/// of parts[i].first.
Var place_cols(Index width, std::span<const std::pair<Var, std::vector<int>>> parts);
Var slice_cols(Var a, Index start, Index count);
/// Per-row column selection: out(i) = a(i, labels[i]).
Var pick(Var a, std::span<const int> labels);
/// Forward value `value`, gradient passed straight through to `a`.
Var straight_through(Var a, const Mat& value);

}  // namespace ad

/// Flattened views over a parameter list, used by optimizers and gradient
/// checks.
std::size_t param_count(std::span<ParamBlock* const> blocks);
Vec flatten_params(std::span<ParamBlock* const> blocks);
void unflatten_params(std::span<ParamBlock* const> blocks, const Vec& flat);
Vec flatten_grads(const Tape& tape, std::span<ParamBlock* const> blocks);

}  // namespace flowtopo
