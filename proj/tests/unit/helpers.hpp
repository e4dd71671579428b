#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>

#include "flowtopo/base_dists.hpp"
#include "flowtopo/flows.hpp"
#include "flowtopo/model.hpp"
#include "flowtopo/tape.hpp"

namespace flowtopo::testing {

inline constexpr double kLogTwoPi = 1.8378770664093453;

/// Relative difference with an absolute floor.
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares tape gradients of `loss_fn` with central differences over every
/// scalar in `blocks`. Returns the worst relative error.
inline double gradient_check(std::vector<ParamBlock*> blocks, const std::function<Var(Tape&)>& loss_fn,
                             double step = 1e-5, double floor = 1e-8, std::string* worst_name = nullptr,
                             double* max_abs_diff = nullptr) {
  Tape tape;
  Var loss = loss_fn(tape);
  tape.backward(loss);
  std::vector<Mat> analytic;
  for (ParamBlock* p : blocks) analytic.push_back(tape.grad(*p));

  auto eval = [&] {
    Tape t(false);
    return loss_fn(t).scalar();
  };
  double worst = 0.0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    Mat& v = blocks[b]->value;
    for (Index i = 0; i < v.size(); ++i) {
      const double orig = v.data()[i];
      v.data()[i] = orig + step;
      const double up = eval();
      v.data()[i] = orig - step;
      const double down = eval();
      v.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double e = std::abs(numeric - analytic[b].data()[i]) /
                       std::max({std::abs(numeric), std::abs(analytic[b].data()[i]), floor});
      if (max_abs_diff) *max_abs_diff = std::max(*max_abs_diff, std::abs(numeric - analytic[b].data()[i]));
      // Absolute agreement below the floor counts as a match.
      const double err = std::abs(numeric - analytic[b].data()[i]) < floor ? 0.0 : e;
      if (err > worst) {
        worst = err;
        if (worst_name) *worst_name = blocks[b]->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return worst;
}

/// Randomises every parameter of the blocks in [-scale, scale].
inline void randomize(std::vector<ParamBlock*> blocks, RngStream& rng, double scale) {
  for (ParamBlock* p : blocks)
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
}

/// Sets the last conditioner layer of `layer` to output the constant `out`.
inline void set_constant_conditioner(CouplingLayer& layer, const RowVec& out) {
  auto& params = layer.conditioner().layers();
  params[params.size() - 2].value.setZero();
  params.back().value = out;
}

/// Resampled base with a single-layer (no hidden) acceptance net.
inline BaseDistribution linear_resampled_base(int dim, int classes, bool conditional, int truncation, double floor) {
  BaseSpec spec;
  spec.kind = conditional ? BaseKind::kCRSB : BaseKind::kRSB;
  spec.truncation = truncation;
  spec.acceptance_hidden = {};
  spec.accept_floor = floor;
  RngStream rng(0, 0);
  return BaseDistribution(spec, dim, classes, rng);
}

/// a(z) = sigmoid(w . z + b) on every output.
inline void set_linear_acceptance(BaseDistribution& base, const Vec& w, double b) {
  auto& layers = base.resampled().acceptance.layers();
  for (Index k = 0; k < layers[0].value.cols(); ++k) layers[0].value.col(k) = w;
  layers[1].value.setConstant(b);
}

/// Random acceptance net with hidden layers (steep enough to matter).
inline BaseDistribution random_resampled_base(int dim, int classes, int truncation, std::uint64_t seed) {
  BaseSpec spec;
  spec.kind = classes > 1 ? BaseKind::kCRSB : BaseKind::kRSB;
  spec.truncation = truncation;
  spec.acceptance_hidden = {8, 8};
  RngStream rng(seed, 0);
  BaseDistribution base(spec, dim, classes, rng);
  std::vector<ParamBlock*> blocks;
  base.collect(blocks);
  randomize(blocks, rng, 2.0);
  return base;
}

/// Trapezoid weights on n nodes over [lo, hi].
inline std::vector<double> trapezoid(int n, double lo, double hi, std::vector<double>* nodes = nullptr) {
  std::vector<double> w(static_cast<std::size_t>(n), (hi - lo) / (n - 1));
  w.front() *= 0.5;
  w.back() *= 0.5;
  if (nodes) {
    nodes->resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) (*nodes)[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  }
  return w;
}

/// Tensor-product trapezoid nodes (rows) and weights over [lo, hi]^d, d in {1, 2}.
inline std::pair<Mat, Vec> trapezoid_grid(int dim, int n, double lo, double hi) {
  std::vector<double> x;
  const std::vector<double> w = trapezoid(n, lo, hi, &x);
  if (dim == 1) return {Eigen::Map<const Mat>(x.data(), n, 1), Eigen::Map<const Vec>(w.data(), n)};
  Mat pts(static_cast<Index>(n) * n, 2);
  Vec wt(static_cast<Index>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Index k = static_cast<Index>(i) * n + j;
      pts(k, 0) = x[static_cast<std::size_t>(i)];
      pts(k, 1) = x[static_cast<std::size_t>(j)];
      wt(k) = w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(j)];
    }
  return {pts, wt};
}

}  // namespace flowtopo::testing
