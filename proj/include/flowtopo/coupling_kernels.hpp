#pragma once

// Scalar transforms applied to each transformed coordinate of a coupling
// layer. Written once over a generic scalar so the same code yields values
// (double) and local Jacobians (Dual<N>).

#include <array>
#include <cmath>

#include "flowtopo/dual.hpp"

namespace flowtopo::kernels {

inline constexpr int kMaxBins = 32;
inline constexpr double kMinBinWidth = 1e-3;
inline constexpr double kMinBinHeight = 1e-3;
inline constexpr double kMinDerivative = 1e-3;

template <class S>
S softplus(const S& a) {
  using std::exp;
  using std::log1p;
  if (value_of(a) > 0.0) return a + log1p(exp(-a));
  return log1p(exp(a));
}

/// y = x * exp(s) + t with s = cap * tanh(raw_s); inverse solves for x.
/// `ld` receives log|dy/dx| of the direction evaluated.
template <class S>
void affine(const S& x, const S* p, double cap, bool inverse, S& y, S& ld) {
  using std::exp;
  using std::tanh;
  const S s = cap * tanh(p[0]);
  const S& t = p[1];
  if (!inverse) {
    y = x * exp(s) + t;
    ld = s;
  } else {
    y = (x - t) * exp(-s);
    ld = -s;
  }
}

/// Monotone rational-quadratic spline on [-bound, bound] with linear (identity)
/// tails. Parameter layout: bins widths, bins heights, bins-1 interior knot
/// derivatives, all unconstrained. Zero parameters give the identity map.
template <class S>
void rq_spline(const S& x, const S* p, int bins, double bound, bool inverse, S& y, S& ld) {
  using std::exp;
  using std::log;
  using std::sqrt;
  const double xv = value_of(x);
  if (xv <= -bound || xv >= bound) {
    y = x;
    ld = S(0.0);
    return;
  }

  std::array<S, kMaxBins + 1> xk, yk, dk;
  auto knots = [&](const S* raw, double min_bin, std::array<S, kMaxBins + 1>& out) {
    double mx = value_of(raw[0]);
    for (int k = 1; k < bins; ++k) mx = std::max(mx, value_of(raw[k]));
    std::array<S, kMaxBins> e;
    S total(0.0);
    for (int k = 0; k < bins; ++k) {
      e[k] = exp(raw[k] - mx);
      total = total + e[k];
    }
    out[0] = S(-bound);
    S acc(0.0);
    for (int k = 0; k < bins - 1; ++k) {
      acc = acc + (min_bin + (1.0 - min_bin * bins) * (e[k] / total));
      out[k + 1] = -bound + 2.0 * bound * acc;
    }
    out[bins] = S(bound);
  };
  knots(p, kMinBinWidth, xk);
  knots(p + bins, kMinBinHeight, yk);

  static const double kSoftplusZero = std::log1p(1.0);
  dk[0] = S(1.0);
  dk[bins] = S(1.0);
  for (int k = 1; k < bins; ++k)
    dk[k] = kMinDerivative + (1.0 - kMinDerivative) / kSoftplusZero * softplus(p[2 * bins + k - 1]);

  const auto& search = inverse ? yk : xk;
  int k = 0;
  while (k + 1 < bins && value_of(search[k + 1]) <= xv) ++k;

  const S w = xk[k + 1] - xk[k];
  const S h = yk[k + 1] - yk[k];
  const S slope = h / w;
  const S d0 = dk[k];
  const S d1 = dk[k + 1];
  const S c1 = d1 + d0 - 2.0 * slope;

  S xi;
  if (!inverse) {
    xi = (x - xk[k]) / w;
  } else {
    const S dy = x - yk[k];
    const S a = h * (slope - d0) + dy * c1;
    const S b = h * d0 - dy * c1;
    const S c = -slope * dy;
    S disc = b * b - 4.0 * a * c;
    if (value_of(disc) < 0.0) disc = S(0.0);
    xi = (2.0 * c) / (-b - sqrt(disc));
  }
  const S om = 1.0 - xi;
  const S xo = xi * om;
  const S den = slope + c1 * xo;
  const S deriv_num = slope * slope * (d1 * xi * xi + 2.0 * slope * xo + d0 * om * om);
  const S log_fwd = log(deriv_num) - 2.0 * log(den);
  if (!inverse) {
    y = yk[k] + h * (slope * xi * xi + d0 * xo) / den;
    ld = log_fwd;
  } else {
    y = xk[k] + xi * w;
    ld = -log_fwd;
  }
}

}  // namespace flowtopo::kernels
