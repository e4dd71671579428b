#pragma once

#include <string>
#include <vector>

#include "flowtopo/training.hpp"

namespace flowtopo {

enum class TaskName { kTwoMoons, kTwoRings, kCircleOfGaussians, kGaussian };

const char* task_name(TaskName t);
TaskName parse_task_name(const std::string& s);

/// Synthetic labeled 2D target with an analytic (or quadrature) density.
struct SyntheticTask {
  TaskName name = TaskName::kTwoMoons;
  double noise = 0.1;
  // two_rings
  std::vector<double> radii{1.0, 2.0};
  // circle_of_gaussians
  double circle_radius = 2.0;
  int components = 8;
  // gaussian (single class)
  std::vector<double> mean{0.0, 0.0};

  static SyntheticTask defaults(TaskName name);

  int classes() const;
  int dim() const { return 2; }
  double class_prob(int y) const;
  void validate() const;
};

Dataset task_sample(const SyntheticTask& task, Index n, RngStream& rng);

/// log p(u | y) of the generating process.
double task_logpdf(const SyntheticTask& task, const Vec& u, int y);
Vec task_logpdf_batch(const SyntheticTask& task, const Mat& u, int y);

/// Moon arc k (unit semicircle) point at parameter t in [0, pi].
Vec moon_arc_point(int k, double t);
/// Euclidean distance from p to moon arc k.
double distance_to_moon_arc(int k, const Vec& p);

enum class OodKind { kUniformBox, kOuterRing };

const char* ood_kind_name(OodKind k);
OodKind parse_ood_kind(const std::string& s);

struct OodBenchmark {
  OodKind kind = OodKind::kUniformBox;
  double box_half_width = 4.0;
  double ring_radius = 3.2;
  double ring_noise = 0.05;
};

Mat ood_sample(const OodBenchmark& bench, Index n, RngStream& rng);

}  // namespace flowtopo
