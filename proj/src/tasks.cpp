#include "flowtopo/tasks.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "flowtopo/error.hpp"

namespace flowtopo {

namespace {
constexpr double kPi = std::numbers::pi;
// Moons are centred so the union sits symmetric about the origin.
constexpr double kMoonShiftX = -0.5;
constexpr double kMoonShiftY = -0.25;
constexpr int kArcNodes = 512;
constexpr int kRadialNodes = 2001;

double log_normal1(double x, double mu, double sd) {
  const double r = (x - mu) / sd;
  return -0.5 * r * r - std::log(sd) - 0.5 * std::log(2.0 * kPi);
}

// Probability mass of N(r, sd) on (0, inf), by composite Simpson quadrature.
double radial_mass(double r, double sd) {
  static std::mutex mu;
  static std::map<std::pair<double, double>, double> cache;
  std::lock_guard lock(mu);
  if (auto it = cache.find({r, sd}); it != cache.end()) return it->second;
  const double hi = r + 12.0 * sd;
  const double lo = 0.0;
  const int n = kRadialNodes - 1;  // even number of intervals
  const double h = (hi - lo) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    s += w * std::exp(log_normal1(lo + i * h, r, sd));
  }
  const double mass = s * h / 3.0;
  cache.emplace(std::make_pair(r, sd), mass);
  return mass;
}

}  // namespace

const char* task_name(TaskName t) {
  switch (t) {
    case TaskName::kTwoMoons: return "two_moons";
    case TaskName::kTwoRings: return "two_rings";
    case TaskName::kCircleOfGaussians: return "circle_of_gaussians";
    case TaskName::kGaussian: return "gaussian";
  }
  return "?";
}

TaskName parse_task_name(const std::string& s) {
  if (s == "two_moons") return TaskName::kTwoMoons;
  if (s == "two_rings") return TaskName::kTwoRings;
  if (s == "circle_of_gaussians") return TaskName::kCircleOfGaussians;
  if (s == "gaussian") return TaskName::kGaussian;
  throw_error(ErrorCode::kInvalidInput, "unknown dataset '" + s + "'");
}

SyntheticTask SyntheticTask::defaults(TaskName name) {
  SyntheticTask t;
  t.name = name;
  switch (name) {
    case TaskName::kTwoMoons: t.noise = 0.1; break;
    case TaskName::kTwoRings: t.noise = 0.1; break;
    case TaskName::kCircleOfGaussians: t.noise = 0.2; break;
    case TaskName::kGaussian: t.noise = 1.0; break;
  }
  return t;
}

int SyntheticTask::classes() const {
  switch (name) {
    case TaskName::kTwoMoons: return 2;
    case TaskName::kTwoRings: return static_cast<int>(radii.size());
    case TaskName::kCircleOfGaussians: return 2;
    case TaskName::kGaussian: return 1;
  }
  return 1;
}

double SyntheticTask::class_prob(int y) const {
  require(y >= 0 && y < classes(), ErrorCode::kInvalidInput, "task: class index out of range");
  return 1.0 / classes();
}

void SyntheticTask::validate() const {
  require(noise >= 0.0 && std::isfinite(noise), ErrorCode::kInvalidInput, "task: noise must be >= 0");
  if (name == TaskName::kTwoRings) {
    require(!radii.empty(), ErrorCode::kInvalidInput, "task: two_rings needs at least one radius");
    for (double r : radii) require(r > 0.0, ErrorCode::kInvalidInput, "task: ring radii must be > 0");
  }
  if (name == TaskName::kCircleOfGaussians)
    require(components >= 2 && components % 2 == 0 && circle_radius > 0.0, ErrorCode::kInvalidInput,
            "task: circle_of_gaussians needs an even component count >= 2 and radius > 0");
  if (name == TaskName::kGaussian) require(mean.size() == 2, ErrorCode::kInvalidInput, "task: gaussian mean must be 2D");
}

Vec moon_arc_point(int k, double t) {
  Vec p(2);
  if (k == 0) {
    p << std::cos(t) + kMoonShiftX, std::sin(t) + kMoonShiftY;
  } else {
    p << 1.0 - std::cos(t) + kMoonShiftX, 0.5 - std::sin(t) + kMoonShiftY;
  }
  return p;
}

double distance_to_moon_arc(int k, const Vec& p) {
  // Arc centre and the half-plane the arc occupies.
  const double cx = (k == 0 ? 0.0 : 1.0) + kMoonShiftX;
  const double cy = (k == 0 ? 0.0 : 0.5) + kMoonShiftY;
  const double dx = p(0) - cx, dy = p(1) - cy;
  const bool on_side = k == 0 ? dy >= 0.0 : dy <= 0.0;
  if (on_side) return std::abs(std::hypot(dx, dy) - 1.0);
  const Vec a = moon_arc_point(k, 0.0), b = moon_arc_point(k, kPi);
  return std::min((p - a).norm(), (p - b).norm());
}

Dataset task_sample(const SyntheticTask& task, Index n, RngStream& rng) {
  task.validate();
  require(n >= 1, ErrorCode::kInvalidInput, "task_sample: n must be >= 1");
  Dataset out;
  out.classes = task.classes();
  out.u.resize(n, 2);
  out.y.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    int y = 0;
    Vec p(2);
    switch (task.name) {
      case TaskName::kTwoMoons: {
        y = static_cast<int>(rng.below(2));
        const double t = kPi * rng.uniform();
        p = moon_arc_point(y, t);
        p(0) += task.noise * rng.normal();
        p(1) += task.noise * rng.normal();
        break;
      }
      case TaskName::kTwoRings: {
        y = static_cast<int>(rng.below(static_cast<std::uint64_t>(task.radii.size())));
        const double angle = 2.0 * kPi * rng.uniform();
        double rho;
        do {
          rho = task.radii[static_cast<std::size_t>(y)] + task.noise * rng.normal();
        } while (rho <= 0.0);
        p << rho * std::cos(angle), rho * std::sin(angle);
        break;
      }
      case TaskName::kCircleOfGaussians: {
        const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(task.components)));
        y = k % 2;
        const double angle = 2.0 * kPi * k / task.components;
        p << task.circle_radius * std::cos(angle) + task.noise * rng.normal(),
            task.circle_radius * std::sin(angle) + task.noise * rng.normal();
        break;
      }
      case TaskName::kGaussian:
        p << task.mean[0] + task.noise * rng.normal(), task.mean[1] + task.noise * rng.normal();
        break;
    }
    out.u.row(i) = p.transpose();
    out.y[static_cast<std::size_t>(i)] = y;
  }
  return out;
}

double task_logpdf(const SyntheticTask& task, const Vec& u, int y) {
  require(y >= 0 && y < task.classes(), ErrorCode::kInvalidInput, "task_logpdf: class index out of range");
  require(u.size() == 2, ErrorCode::kInvalidInput, "task_logpdf: expected a 2D point");
  const double s = task.noise;
  switch (task.name) {
    case TaskName::kTwoMoons: {
      // Uniform arc parameter convolved with isotropic noise; midpoint rule in t.
      double mx = -INFINITY;
      std::array<double, kArcNodes> terms;
      for (int j = 0; j < kArcNodes; ++j) {
        const Vec c = moon_arc_point(y, kPi * (j + 0.5) / kArcNodes);
        terms[static_cast<std::size_t>(j)] = log_normal1(u(0), c(0), s) + log_normal1(u(1), c(1), s);
        mx = std::max(mx, terms[static_cast<std::size_t>(j)]);
      }
      double acc = 0.0;
      for (double t : terms) acc += std::exp(t - mx);
      return mx + std::log(acc / kArcNodes);
    }
    case TaskName::kTwoRings: {
      const double r = task.radii[static_cast<std::size_t>(y)];
      const double rho = std::max(u.norm(), 1e-12);
      return log_normal1(rho, r, s) - std::log(2.0 * kPi * rho) - std::log(radial_mass(r, s));
    }
    case TaskName::kCircleOfGaussians: {
      const int per_class = task.components / 2;
      double mx = -INFINITY;
      std::vector<double> terms;
      for (int k = y; k < task.components; k += 2) {
        const double angle = 2.0 * kPi * k / task.components;
        terms.push_back(log_normal1(u(0), task.circle_radius * std::cos(angle), s) +
                        log_normal1(u(1), task.circle_radius * std::sin(angle), s));
        mx = std::max(mx, terms.back());
      }
      double acc = 0.0;
      for (double t : terms) acc += std::exp(t - mx);
      return mx + std::log(acc / per_class);
    }
    case TaskName::kGaussian:
      return log_normal1(u(0), task.mean[0], s) + log_normal1(u(1), task.mean[1], s);
  }
  return -INFINITY;
}

Vec task_logpdf_batch(const SyntheticTask& task, const Mat& u, int y) {
  Vec out(u.rows());
  for (Index i = 0; i < u.rows(); ++i) out(i) = task_logpdf(task, u.row(i).transpose(), y);
  return out;
}

const char* ood_kind_name(OodKind k) { return k == OodKind::kUniformBox ? "uniform_box" : "outer_ring"; }

OodKind parse_ood_kind(const std::string& s) {
  if (s == "uniform_box") return OodKind::kUniformBox;
  if (s == "outer_ring") return OodKind::kOuterRing;
  throw_error(ErrorCode::kInvalidInput, "unknown OOD kind '" + s + "'");
}

Mat ood_sample(const OodBenchmark& bench, Index n, RngStream& rng) {
  require(n >= 1, ErrorCode::kInvalidInput, "ood_sample: n must be >= 1");
  Mat out(n, 2);
  for (Index i = 0; i < n; ++i) {
    if (bench.kind == OodKind::kUniformBox) {
      out(i, 0) = bench.box_half_width * (2.0 * rng.uniform() - 1.0);
      out(i, 1) = bench.box_half_width * (2.0 * rng.uniform() - 1.0);
    } else {
      const double angle = 2.0 * kPi * rng.uniform();
      out(i, 0) = bench.ring_radius * std::cos(angle) + bench.ring_noise * rng.normal();
      out(i, 1) = bench.ring_radius * std::sin(angle) + bench.ring_noise * rng.normal();
    }
  }
  return out;
}

}  // namespace flowtopo
