#include "flowtopo/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "flowtopo/error.hpp"

namespace flowtopo {

void validate_grid_spec(const GridSpec& spec) {
  require(spec.resolution >= 2, ErrorCode::kInvalidInput, "grid: resolution must be >= 2");
  require(std::isfinite(spec.lo) && std::isfinite(spec.hi) && spec.lo < spec.hi, ErrorCode::kInvalidInput,
          "grid: bounds must be finite and ordered");
}

Mat grid_points(const GridSpec& spec) {
  validate_grid_spec(spec);
  const int n = spec.resolution;
  const double step = (spec.hi - spec.lo) / (n - 1);
  Mat pts(static_cast<Index>(n) * n, 2);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      pts(static_cast<Index>(r) * n + c, 0) = spec.lo + c * step;
      pts(static_cast<Index>(r) * n + c, 1) = spec.hi - r * step;
    }
  return pts;
}

Mat DensityGrid::points() const { return grid_points(spec); }

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::kInvalidInput, "percentile: empty input");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::string DensityGrid::to_pgm() const {
  const int n = spec.resolution;
  std::string out = "P5\n" + std::to_string(n) + " " + std::to_string(n) + "\n255\n";
  const double p5 = percentile(values, 5.0);
  const double p95 = percentile(values, 95.0);
  const double span = p95 - p5;
  for (double v : values) {
    double g = span > 0.0 ? std::round(255.0 * (v - p5) / span) : 0.0;
    g = std::clamp(g, 0.0, 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(g)));
  }
  return out;
}

std::string DensityGrid::to_csv() const {
  std::string out = "x,y,logp\n";
  char buf[128];
  const int n = spec.resolution;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", x(c), y(r), at(r, c));
      out += buf;
    }
  return out;
}

DensityGrid render_density_grid(const FlowModel& model, const GridSpec& spec, std::optional<int> y) {
  validate_grid_spec(spec);
  require(model.dim() == 2, ErrorCode::kInvalidInput, "render_density_grid: model must be 2D");
  const Vec lp = model.log_prob(grid_points(spec), y);
  DensityGrid g{spec, std::vector<double>(lp.data(), lp.data() + lp.size())};
  for (double v : g.values)
    if (!std::isfinite(v)) throw_error(ErrorCode::kNumeric, "render_density_grid: non-finite log density");
  return g;
}

DensityGrid render_acceptance_grid(const BaseDistribution& base, int y, const GridSpec& spec) {
  validate_grid_spec(spec);
  if (!base.is_resampled())
    throw_error(ErrorCode::kInvalidInput, "render_acceptance_grid: base distribution is not a resampled kind");
  const ResampledBase& r = base.resampled();
  require(r.dim == 2, ErrorCode::kInvalidInput, "render_acceptance_grid: base must be 2D");
  require(y >= 0 && y < base.classes(), ErrorCode::kInvalidInput, "render_acceptance_grid: class out of range");
  const Mat a = r.accept_batch(grid_points(spec));
  const Index col = r.outputs() == 1 ? 0 : y;
  DensityGrid g{spec, {}};
  g.values.reserve(static_cast<std::size_t>(a.rows()));
  for (Index i = 0; i < a.rows(); ++i) g.values.push_back(a(i, col));
  return g;
}

}  // namespace flowtopo
