#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flowtopo/model.hpp"

namespace flowtopo {

struct GridSpec {
  double lo = -3.0;
  double hi = 3.0;
  int resolution = 200;
};

/// Values sampled on a square lattice of resolution^2 nodes spanning
/// [lo, hi]^2 (both ends included). Row 0 is the top (y = hi); columns run
/// with increasing x.
struct DensityGrid {
  GridSpec spec;
  std::vector<double> values;

  double step() const { return (spec.hi - spec.lo) / (spec.resolution - 1); }
  double x(int col) const { return spec.lo + col * step(); }
  double y(int row) const { return spec.hi - row * step(); }
  double at(int row, int col) const { return values[static_cast<std::size_t>(row * spec.resolution + col)]; }
  /// Lattice nodes in storage order, one per row.
  Mat points() const;

  /// Binary PGM: "P5\n<w> <h>\n255\n" then one byte per node, gray scaled
  /// between the 5th and 95th value percentiles.
  std::string to_pgm() const;
  /// "x,y,logp" rows with 9 significant digits.
  std::string to_csv() const;
};

void validate_grid_spec(const GridSpec& spec);
Mat grid_points(const GridSpec& spec);

/// Log density of the model at every node; class-conditional when `y` is set.
DensityGrid render_density_grid(const FlowModel& model, const GridSpec& spec, std::optional<int> y = std::nullopt);

/// Acceptance probability a(z|y) of a resampled base at every node.
DensityGrid render_acceptance_grid(const BaseDistribution& base, int y, const GridSpec& spec);

/// Linear-interpolation percentile (q in [0, 100]).
double percentile(std::vector<double> values, double q);

}  // namespace flowtopo
