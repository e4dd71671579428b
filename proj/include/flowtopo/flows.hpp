#pragma once

#include <utility>
#include <vector>

#include "flowtopo/dense_net.hpp"

namespace flowtopo {

enum class CouplingKind { kAffine, kSpline };

const char* coupling_kind_name(CouplingKind k);

struct FlowSpec {
  CouplingKind kind = CouplingKind::kAffine;
  int layers = 4;
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::kTanh;
  int bins = 8;
  double tail_bound = 4.0;
  double scale_cap = 3.0;
};

/// Result of pushing a batch through a transform: outputs (n x d) and the
/// per-row log|det J| of the direction applied (n x 1).
struct Pushed {
  Var out;
  Var logdet;
};

/// One coupling transform. Coordinates with index parity equal to the layer
/// parity pass through unchanged and condition an elementwise bijection of
/// the remaining coordinates.
class CouplingLayer {
 public:
  CouplingLayer() = default;
  CouplingLayer(const FlowSpec& spec, int dim, int index, RngStream& rng);

  CouplingKind kind() const { return kind_; }
  int index() const { return index_; }
  int dim() const { return dim_; }
  const std::vector<int>& fixed_dims() const { return fixed_; }
  const std::vector<int>& transformed_dims() const { return transformed_; }
  int params_per_dim() const;

  /// Data direction z -> u.
  Pushed forward(Tape& tape, Var z) const;
  /// Density direction u -> z.
  Pushed inverse(Tape& tape, Var u) const;

  DenseNet& conditioner() { return conditioner_; }
  const DenseNet& conditioner() const { return conditioner_; }

 private:
  Pushed apply(Tape& tape, Var x, bool inverse) const;

  CouplingKind kind_ = CouplingKind::kAffine;
  int index_ = 0;
  int dim_ = 0;
  int bins_ = 8;
  double tail_bound_ = 4.0;
  double scale_cap_ = 3.0;
  std::vector<int> fixed_;
  std::vector<int> transformed_;
  DenseNet conditioner_;
};

/// Composition of coupling layers; forward applies layer 0 first.
class FlowStack {
 public:
  FlowStack() = default;
  FlowStack(const FlowSpec& spec, int dim, RngStream& rng);

  const FlowSpec& spec() const { return spec_; }
  int dim() const { return dim_; }
  std::vector<CouplingLayer>& layers() { return layers_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }

  Pushed forward(Tape& tape, Var z) const;
  Pushed inverse(Tape& tape, Var u) const;

  /// Single-point conveniences: (output, log|det J|).
  std::pair<Vec, double> forward(const Vec& z) const;
  std::pair<Vec, double> inverse(const Vec& u) const;
  /// Batched, evaluated in fixed-size row chunks.
  std::pair<Mat, Vec> forward_batch(const Mat& z) const;
  std::pair<Mat, Vec> inverse_batch(const Mat& u) const;

  void collect(std::vector<ParamBlock*>& out);

 private:
  FlowSpec spec_;
  int dim_ = 0;
  std::vector<CouplingLayer> layers_;
};

/// log|det J| of the inverse map at u from a central-difference Jacobian and
/// an LU factorization. Independent of the analytic log-det path.
double numeric_jacobian_logdet(const FlowStack& flow, const Vec& u, double step = 1e-5);

/// Row-chunk size used by every batched evaluation path.
inline constexpr Index kEvalChunk = 512;

}  // namespace flowtopo
