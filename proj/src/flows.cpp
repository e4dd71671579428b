#include "flowtopo/flows.hpp"

#include <Eigen/LU>
#include <cmath>
#include <string>

#include "flowtopo/coupling_kernels.hpp"
#include "flowtopo/error.hpp"

namespace flowtopo {

const char* coupling_kind_name(CouplingKind k) { return k == CouplingKind::kAffine ? "realnvp" : "nsf"; }

namespace {

// Applies `kernel` to every (row, transformed column). Output columns
// [0, m) hold transformed values, column m the row-summed log-det.
template <int N, class Kernel>
Var elementwise_op(Tape& tape, Var x, Var params, int per_dim, Kernel kernel) {
  const Index n = x.rows();
  const Index m = x.cols();
  const Mat& xv = x.value();
  const Mat& pv = params.value();
  Mat out(n, m + 1);
  const bool grads = tape.recording() && (tape.needs_grad(x) || tape.needs_grad(params));
  if (!grads) {
    std::array<double, 128> buf{};
    for (Index i = 0; i < n; ++i) {
      double sum = 0.0;
      for (Index j = 0; j < m; ++j) {
        for (int k = 0; k < per_dim; ++k) buf[static_cast<std::size_t>(k)] = pv(i, j * per_dim + k);
        double y = 0.0, ld = 0.0;
        kernel(xv(i, j), buf.data(), y, ld);
        out(i, j) = y;
        sum += ld;
      }
      out(i, m) = sum;
    }
    return tape.make(std::move(out), {x, params}, {});
  }
  // Local Jacobian rows: [d/dx, d/dp_0 .. d/dp_{P-1}] for y and for ld.
  const Index width = per_dim + 1;
  Mat jy(n, m * width), jl(n, m * width);
  std::array<Dual<N>, N> pd;
  for (Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Index j = 0; j < m; ++j) {
      const Dual<N> xd = Dual<N>::variable(xv(i, j), 0);
      for (int k = 0; k < per_dim; ++k) pd[static_cast<std::size_t>(k)] = Dual<N>::variable(pv(i, j * per_dim + k), k + 1);
      Dual<N> y, ld;
      kernel(xd, pd.data(), y, ld);
      out(i, j) = y.v;
      sum += ld.v;
      for (Index k = 0; k < width; ++k) {
        jy(i, j * width + k) = y.d[static_cast<std::size_t>(k)];
        jl(i, j * width + k) = ld.d[static_cast<std::size_t>(k)];
      }
    }
    out(i, m) = sum;
  }
  return tape.make(std::move(out), {x, params}, [x, params, per_dim, jy = std::move(jy), jl = std::move(jl)](Tape& tp, const Mat& g) {
    const Index n = g.rows();
    const Index m = g.cols() - 1;
    const Index width = per_dim + 1;
    Mat gx(n, m), gp(n, m * per_dim);
    for (Index i = 0; i < n; ++i) {
      const double gl = g(i, m);
      for (Index j = 0; j < m; ++j) {
        const double gy = g(i, j);
        gx(i, j) = gy * jy(i, j * width) + gl * jl(i, j * width);
        for (Index k = 0; k < per_dim; ++k)
          gp(i, j * per_dim + k) = gy * jy(i, j * width + 1 + k) + gl * jl(i, j * width + 1 + k);
      }
    }
    tp.accumulate(x, gx);
    tp.accumulate(params, gp);
  });
}

template <class Kernel>
Var dispatch_elementwise(Tape& tape, Var x, Var params, int per_dim, Kernel kernel) {
  const int n_dirs = per_dim + 1;
  if (n_dirs <= 4) return elementwise_op<4>(tape, x, params, per_dim, kernel);
  if (n_dirs <= 16) return elementwise_op<16>(tape, x, params, per_dim, kernel);
  if (n_dirs <= 32) return elementwise_op<32>(tape, x, params, per_dim, kernel);
  if (n_dirs <= 64) return elementwise_op<64>(tape, x, params, per_dim, kernel);
  return elementwise_op<97>(tape, x, params, per_dim, kernel);
}

}  // namespace

CouplingLayer::CouplingLayer(const FlowSpec& spec, int dim, int index, RngStream& rng)
    : kind_(spec.kind), index_(index), dim_(dim), bins_(spec.bins), tail_bound_(spec.tail_bound),
      scale_cap_(spec.scale_cap) {
  require(dim >= 2, ErrorCode::kInvalidInput, "CouplingLayer: dimension must be >= 2");
  require(spec.bins >= 1 && spec.bins <= kernels::kMaxBins, ErrorCode::kInvalidInput,
          "CouplingLayer: bins must be in [1, 32]");
  require(spec.tail_bound > 0 && spec.scale_cap > 0, ErrorCode::kInvalidInput,
          "CouplingLayer: tail bound and scale cap must be positive");
  for (int j = 0; j < dim; ++j) (j % 2 == index % 2 ? fixed_ : transformed_).push_back(j);
  conditioner_ = DenseNet("flow" + std::to_string(index), static_cast<int>(fixed_.size()), spec.hidden,
                          static_cast<int>(transformed_.size()) * params_per_dim(), spec.activation,
                          OutputHead::kLinear, rng, /*zero_output=*/true);
}

int CouplingLayer::params_per_dim() const { return kind_ == CouplingKind::kAffine ? 2 : 3 * bins_ - 1; }

Pushed CouplingLayer::apply(Tape& tape, Var x, bool inverse) const {
  if (x.cols() != dim_) throw_error(ErrorCode::kInvalidInput, "coupling layer: input width mismatch");
  if (!x.value().allFinite())
    throw_error(ErrorCode::kInvalidInput, "coupling layer " + std::to_string(index_) + ": non-finite input");
  Var fixed = ad::gather_cols(x, fixed_);
  Var moving = ad::gather_cols(x, transformed_);
  Var params = conditioner_.forward(tape, fixed);
  if (!params.value().allFinite())
    throw_error(ErrorCode::kNumeric, "coupling layer " + std::to_string(index_) + ": non-finite conditioner output");
  Var fused;
  if (kind_ == CouplingKind::kAffine) {
    const double cap = scale_cap_;
    fused = dispatch_elementwise(tape, moving, params, 2, [cap, inverse](const auto& v, const auto* p, auto& y, auto& ld) {
      kernels::affine(v, p, cap, inverse, y, ld);
    });
  } else {
    const int bins = bins_;
    const double bound = tail_bound_;
    fused = dispatch_elementwise(tape, moving, params, params_per_dim(),
                                 [bins, bound, inverse](const auto& v, const auto* p, auto& y, auto& ld) {
                                   kernels::rq_spline(v, p, bins, bound, inverse, y, ld);
                                 });
  }
  const Index m = static_cast<Index>(transformed_.size());
  Var moved = ad::slice_cols(fused, 0, m);
  Var logdet = ad::slice_cols(fused, m, 1);
  const std::pair<Var, std::vector<int>> parts[] = {{fixed, fixed_}, {moved, transformed_}};
  return {ad::place_cols(dim_, parts), logdet};
}

Pushed CouplingLayer::forward(Tape& tape, Var z) const { return apply(tape, z, false); }
Pushed CouplingLayer::inverse(Tape& tape, Var u) const { return apply(tape, u, true); }

FlowStack::FlowStack(const FlowSpec& spec, int dim, RngStream& rng) : spec_(spec), dim_(dim) {
  require(spec.layers >= 0, ErrorCode::kInvalidInput, "FlowStack: layer count must be >= 0");
  for (int l = 0; l < spec.layers; ++l) layers_.emplace_back(spec, dim, l, rng);
}

Pushed FlowStack::forward(Tape& tape, Var z) const {
  Var x = z;
  Var total = tape.constant(Mat::Zero(z.rows(), 1));
  for (const CouplingLayer& layer : layers_) {
    Pushed p = layer.forward(tape, x);
    x = p.out;
    total = ad::add(total, p.logdet);
  }
  return {x, total};
}

Pushed FlowStack::inverse(Tape& tape, Var u) const {
  Var x = u;
  Var total = tape.constant(Mat::Zero(u.rows(), 1));
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    Pushed p = it->inverse(tape, x);
    x = p.out;
    total = ad::add(total, p.logdet);
  }
  return {x, total};
}

namespace {
std::pair<Mat, Vec> push_batch(const FlowStack& flow, const Mat& in, bool inverse) {
  Mat out(in.rows(), in.cols());
  Vec ld(in.rows());
  for (Index start = 0; start < in.rows(); start += kEvalChunk) {
    const Index len = std::min(kEvalChunk, in.rows() - start);
    Tape tape(false);
    Var x = tape.constant(in.middleRows(start, len));
    Pushed p = inverse ? flow.inverse(tape, x) : flow.forward(tape, x);
    out.middleRows(start, len) = p.out.value();
    ld.segment(start, len) = p.logdet.value().col(0);
  }
  return {out, ld};
}
}  // namespace

std::pair<Mat, Vec> FlowStack::forward_batch(const Mat& z) const { return push_batch(*this, z, false); }
std::pair<Mat, Vec> FlowStack::inverse_batch(const Mat& u) const { return push_batch(*this, u, true); }

std::pair<Vec, double> FlowStack::forward(const Vec& z) const {
  auto [out, ld] = forward_batch(z.transpose());
  return {out.row(0).transpose(), ld(0)};
}

std::pair<Vec, double> FlowStack::inverse(const Vec& u) const {
  auto [out, ld] = inverse_batch(u.transpose());
  return {out.row(0).transpose(), ld(0)};
}

void FlowStack::collect(std::vector<ParamBlock*>& out) {
  for (CouplingLayer& layer : layers_) layer.conditioner().collect(out);
}

double numeric_jacobian_logdet(const FlowStack& flow, const Vec& u, double step) {
  const Index d = u.size();
  require(d >= 1 && d <= 8, ErrorCode::kInvalidInput, "numeric_jacobian_logdet: dimension must be in [1, 8]");
  require(u.allFinite(), ErrorCode::kInvalidInput, "numeric_jacobian_logdet: non-finite input");
  Mat probes(2 * d, d);
  for (Index j = 0; j < d; ++j) {
    probes.row(2 * j) = u.transpose();
    probes.row(2 * j + 1) = u.transpose();
    probes(2 * j, j) += step;
    probes(2 * j + 1, j) -= step;
  }
  const Mat images = flow.inverse_batch(probes).first;
  Mat jac(d, d);
  for (Index j = 0; j < d; ++j) jac.col(j) = (images.row(2 * j) - images.row(2 * j + 1)).transpose() / (2.0 * step);
  Eigen::FullPivLU<Mat> lu(jac);
  if (!lu.isInvertible()) throw_error(ErrorCode::kNumeric, "numeric_jacobian_logdet: singular Jacobian");
  const double det = lu.determinant();
  if (det == 0.0 || !std::isfinite(det)) throw_error(ErrorCode::kNumeric, "numeric_jacobian_logdet: singular Jacobian");
  return std::log(std::abs(det));
}

}  // namespace flowtopo
