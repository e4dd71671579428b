// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
//
//   flowtopo_acceptance [--work DIR] [--only 1,4,...] [--reuse]
//
// --reuse loads previously trained models from DIR when their config hash
// matches, which makes reruns of the expensive criteria cheap.
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowtopo/error.hpp"
#include "flowtopo/experiment.hpp"
#include "flowtopo/model_io.hpp"
#include "flowtopo/tasks.hpp"
#define DOCTEST_CONFIG_DISABLE  // helpers.hpp pulls in doctest; only its utilities are used here
#include "helpers.hpp"

using namespace flowtopo;
using namespace flowtopo::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------- criterion 1

FlowStack random_stack(CouplingKind kind, std::uint64_t seed) {
  FlowSpec spec;
  spec.kind = kind;
  spec.layers = 4;
  RngStream rng(seed, 0);
  FlowStack f(spec, 2, rng);
  std::vector<ParamBlock*> blocks;
  f.collect(blocks);
  randomize(blocks, rng, 0.3);
  return f;
}

// log|det| of the inverse map from central differences; 2x2 determinant by hand.
Vec fd_inverse_logdet(const FlowStack& f, const Mat& u, double h) {
  Mat cols[2];
  for (int j = 0; j < 2; ++j) {
    Mat up = u, down = u;
    up.col(j).array() += h;
    down.col(j).array() -= h;
    cols[j] = (f.inverse_batch(up).first - f.inverse_batch(down).first) / (2.0 * h);
  }
  Vec out(u.rows());
  for (Index i = 0; i < u.rows(); ++i) {
    // cols[j](i, k) = d z_k / d u_j
    const double det = cols[0](i, 0) * cols[1](i, 1) - cols[1](i, 0) * cols[0](i, 1);
    out(i) = std::log(std::abs(det));
  }
  return out;
}

Outcome criterion_bijection() {
  double worst_rt = 0.0, worst_det = 0.0;
  for (CouplingKind kind : {CouplingKind::kAffine, CouplingKind::kSpline})
    for (std::uint64_t s = 0; s < 20; ++s) {
      const FlowStack f = random_stack(kind, 1000 + s);
      RngStream rng(2000 + s, static_cast<std::uint64_t>(kind));
      const Mat x = 1.5 * sample_std_normal(rng, 1000, 2);
      const auto [u, ld_fwd] = f.forward_batch(x);
      const auto [back, ld_inv] = f.inverse_batch(u);
      worst_rt = std::max(worst_rt, (back - x).cwiseAbs().maxCoeff());
      // Relative error of the Jacobian determinant: |det_fd / det - 1|. Random
      // spline stacks get steep (|det| ~ e^8), so the step must be small to
      // keep the O(h^2) truncation error of the oracle itself below 1e-4.
      const Vec fd = fd_inverse_logdet(f, u, 1e-6);
      for (Index i = 0; i < fd.size(); ++i) worst_det = std::max(worst_det, std::abs(std::expm1(fd(i) - ld_inv(i))));
    }
  Outcome o;
  o.pass = worst_rt < 1e-8 && worst_det < 1e-4;
  o.detail = "40 stacks x 1000 points: sup |T^-1(T(x)) - x| = " + fmt("%.2e", worst_rt) +
             ", worst det rel err = " + fmt("%.2e", worst_det);
  return o;
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion_gradients() {
  double worst = 0.0, max_abs = 0.0;
  std::string where;
  for (BaseKind kind : {BaseKind::kGaussian, BaseKind::kMoG, BaseKind::kRSB, BaseKind::kCRSB})
    for (CouplingKind flow : {CouplingKind::kAffine, CouplingKind::kSpline}) {
      ModelSpec spec;
      spec.flow.kind = flow;
      spec.flow.layers = 2;
      spec.flow.hidden = {8};
      spec.base.kind = kind;
      spec.base.acceptance_hidden = {8};
      spec.base.truncation = 5;
      RngStream rng(41, static_cast<std::uint64_t>(kind) * 2 + (flow == CouplingKind::kSpline));
      FlowModel m(spec, ClassPrior({0.45, 0.55}), rng);
      std::vector<ParamBlock*> blocks = m.params();
      randomize(blocks, rng, 0.3);
      const Mat u = sample_std_normal(rng, 4, 2);
      const Mat noise = 0.05 * sample_std_normal(rng, 4, 2);
      const Mat proposals = sample_std_normal(rng, 64, 2);
      const std::vector<int> y{1, 0, 0, 1};
      for (int which = 0; which < 3; ++which) {
        std::string name;
        const double err = gradient_check(
            blocks,
            [&](Tape& t) {
              std::optional<Var> zn;
              if (m.base.is_resampled()) {
                std::vector<double> ema;
                zn = training_normalizer(t, m.base.resampled(), proposals, ema, 0.0);
              }
              if (which == 2) return loss_ib(t, m, u, y, 1.0, noise, zn).loss;
              return loss_mle(t, m, u, y, which == 1, zn).loss;
            },
            1e-5, 1e-8, &name, &max_abs);
        if (err > worst) {
          worst = err;
          static const char* losses[] = {"mle_marginal", "mle_cls", "ib"};
          where = std::string(base_kind_name(kind)) + "/" + coupling_kind_name(flow) + "/" + losses[which] + " " + name;
        }
      }
    }
  Outcome o;
  o.pass = worst < 1e-4;
  o.detail = "4 bases x 2 flows x 3 losses: worst rel err " + fmt("%.2e", worst) +
             (where.empty() ? " (every entry within the 1e-8 absolute floor)" : " (" + where + ")") +
             ", max |fd - backward| = " + fmt("%.2e", max_abs);
  return o;
}

// ---------------------------------------------------------------- criterion 3

std::vector<double> quadrature_z(const BaseDistribution& base, int n) {
  auto [pts, w] = trapezoid_grid(base.dim(), n, -8.0, 8.0);
  const Mat a = base.resampled().accept_batch(pts);
  std::vector<double> z(static_cast<std::size_t>(a.cols()));
  for (Index k = 0; k < a.cols(); ++k) {
    double s = 0.0;
    for (Index i = 0; i < pts.rows(); ++i) {
      const double r2 = pts.row(i).squaredNorm();
      s += w(i) * a(i, k) * std::exp(-0.5 * r2 - 0.5 * base.dim() * kLogTwoPi);
    }
    z[static_cast<std::size_t>(k)] = s;
  }
  return z;
}

Vec density_mass(const BaseDistribution& base, int n) {
  auto [pts, w] = trapezoid_grid(base.dim(), n, -8.0, 8.0);
  return base.log_prob_all(pts).array().exp().matrix().transpose() * w;
}

double chi2_pvalue(const BaseDistribution& b, int y, std::uint64_t seed) {
  const int bins = 40, n = 100000;
  const Mat s = crsb_sample_n(b.resampled(), y, n, RngStream(seed, 1));
  std::vector<double> counts(bins, 0.0);
  for (Index i = 0; i < n; ++i) {
    const int k = static_cast<int>(std::floor((s(i, 0) + 4.0) / 0.2));
    if (k >= 0 && k < bins) counts[static_cast<std::size_t>(k)] += 1.0;
  }
  double chi2 = 0.0;
  for (int k = 0; k < bins; ++k) {
    const int m = 40;
    const double lo = -4.0 + 0.2 * k, h = 0.2 / m;
    Mat pts(m + 1, 1);
    for (int i = 0; i <= m; ++i) pts(i, 0) = lo + i * h;
    const Vec dens = b.log_prob_all(pts).col(y).array().exp();
    double mass = dens(0) + dens(m);
    for (int i = 1; i < m; ++i) mass += (i % 2 ? 4.0 : 2.0) * dens(i);
    const double e = n * mass * h / 3.0;
    chi2 += (counts[static_cast<std::size_t>(k)] - e) * (counts[static_cast<std::size_t>(k)] - e) / e;
  }
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(bins - 1), chi2));
}

Outcome criterion_crsb_algebra() {
  // Constant acceptance: Z equals the constant, density equals the proposal.
  double const_gap = 0.0;
  for (double c : {0.02, 0.4, 0.9}) {
    BaseDistribution b = linear_resampled_base(2, 2, true, 50, 0.0);
    set_linear_acceptance(b, Vec::Zero(2), std::log(c / (1.0 - c)));
    RngStream rng(3, 5);
    estimate_z(b.resampled(), 10000, rng);
    RngStream probe(4, 0);
    const Mat p = 2.0 * sample_std_normal(probe, 200, 2);
    const Mat lp = b.log_prob_all(p);
    for (Index i = 0; i < p.rows(); ++i) {
      const double pi = -0.5 * p.row(i).squaredNorm() - kLogTwoPi;
      const_gap = std::max({const_gap, std::abs(lp(i, 0) - pi), std::abs(lp(i, 1) - pi)});
    }
  }
  // T = 1: the first proposal is always kept.
  double t1_gap = 0.0;
  {
    BaseDistribution b = random_resampled_base(2, 2, 1, 7);
    RngStream rng(5, 5);
    estimate_z(b.resampled(), 10000, rng);
    RngStream probe(6, 0);
    const Mat p = 2.0 * sample_std_normal(probe, 200, 2);
    const Mat lp = b.log_prob_all(p);
    for (Index i = 0; i < p.rows(); ++i) {
      const double pi = -0.5 * p.row(i).squaredNorm() - kLogTwoPi;
      t1_gap = std::max({t1_gap, std::abs(lp(i, 0) - pi), std::abs(lp(i, 1) - pi)});
    }
  }
  // Normalization of random acceptance nets.
  double quad_worst = 0.0, mc_worst = 0.0;
  const int truncations[] = {2, 5, 20, 100};
  for (int dim : {1, 2})
    for (std::uint64_t s = 0; s < 10; ++s) {
      BaseDistribution b = random_resampled_base(dim, 2, truncations[s % 4], 300 + s + 100 * dim);
      const int n = dim == 1 ? 8001 : 801;
      b.resampled().z = quadrature_z(b, n);
      b.resampled().z_samples = {0, 0};
      quad_worst = std::max(quad_worst, (density_mass(b, n).array() - 1.0).abs().maxCoeff());
      RngStream rng(s, streams::kFrozenZ);
      estimate_z(b.resampled(), 100000, rng);
      mc_worst = std::max(mc_worst, (density_mass(b, n).array() - 1.0).abs().maxCoeff());
    }
  // Sampler against density.
  double p_min = 1.0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    BaseDistribution b = random_resampled_base(1, 2, truncations[s + 1], 500 + s);
    b.resampled().z = quadrature_z(b, 8001);
    b.resampled().z_samples = {0, 0};
    p_min = std::min({p_min, chi2_pvalue(b, 0, 600 + s), chi2_pvalue(b, 1, 700 + s)});
  }
  Outcome o;
  o.pass = const_gap <= 1e-12 && t1_gap <= 1e-12 && quad_worst <= 1e-2 && mc_worst <= 3e-2 && p_min > 0.01;
  o.detail = "constant-acceptance gap " + fmt("%.1e", const_gap) + ", T=1 gap " + fmt("%.1e", t1_gap) +
             ", mass error quadrature-Z " + fmt("%.1e", quad_worst) + " / MC-Z " + fmt("%.1e", mc_worst) +
             ", min chi2 p " + fmt("%.3f", p_min);
  return o;
}

// ----------------------------------------------------- trained-model criteria

struct Trained {
  std::string dataset, flow, base;
  std::uint64_t seed = 0;
  FlowModel model;
  MetricReport metrics;
};

class ModelBank {
 public:
  ModelBank(fs::path dir, bool reuse) : dir_(std::move(dir)), reuse_(reuse) { fs::create_directories(dir_); }

  const Trained& get(const std::string& dataset, const std::string& flow, const std::string& base, std::uint64_t seed) {
    const std::string name = dataset + "__" + flow + "_" + base + "_ib__seed" + std::to_string(seed);
    if (auto it = cache_.find(name); it != cache_.end()) return it->second;
    const std::string config = R"({"seed": )" + std::to_string(seed) + R"(, "dataset": {"name": ")" + dataset +
                               R"("}, "base": {"kind": ")" + base + R"("}, "flow": {"kind": ")" + flow +
                               R"("}, "train": {"objective": "ib"}})";
    const fs::path cfg_path = dir_ / (name + ".config.json");
    const fs::path model_path = dir_ / (name + ".model.json");
    write_file_atomic(cfg_path.string(), config + "\n");
    const ExperimentConfig cfg = load_experiment_config(cfg_path.string());

    Trained t{dataset, flow, base, seed, {}, {}};
    bool loaded = false;
    if (reuse_ && fs::exists(model_path)) {
      t.model = load_model(model_path.string());
      loaded = t.model.provenance.config_hash == cfg.hash();
    }
    const auto t0 = std::chrono::steady_clock::now();
    if (!loaded) {
      const TrainSummary s = cmd_train(cfg_path.string(), model_path.string());
      t.model = load_model(model_path.string());
      std::fprintf(stderr, "  trained %-48s loss %8.4f  Z [%.3f, %.3f]  %6.1fs\n", name.c_str(), s.final_loss,
                   s.z_min, s.z_max, seconds_since(t0));
    }
    t.metrics = run_evaluation(t.model, cfg);
    std::fprintf(stderr, "  eval    %-48s kld %.4f +- %.4f  auroc %.4f\n", name.c_str(), t.metrics.kld,
                 t.metrics.kld_se, t.metrics.auroc);
    return cache_.emplace(name, std::move(t)).first->second;
  }

 private:
  fs::path dir_;
  bool reuse_;
  std::map<std::string, Trained> cache_;
};

const std::uint64_t kSeeds[] = {1, 2, 3};

// ---------------------------------------------------------------- criterion 4

Outcome criterion_ordering(ModelBank& bank) {
  std::ostringstream table;
  bool strict_ok = true, band_ok = true;
  for (const char* flow : {"realnvp", "nsf"})
    for (const char* ds : {"two_moons", "two_rings", "circle_of_gaussians"}) {
      std::vector<double> mog, crsb;
      for (std::uint64_t s : kSeeds) {
        mog.push_back(bank.get(ds, flow, "mog", s).metrics.kld);
        crsb.push_back(bank.get(ds, flow, "crsb", s).metrics.kld);
      }
      const double mm = mean_of(mog), ms = sd_of(mog), cm = mean_of(crsb), cs = sd_of(crsb);
      const bool band = cm <= mm + ms;
      band_ok = band_ok && band;
      bool strict = true;
      if (std::string(flow) == "realnvp" && std::string(ds) != "two_moons") {
        strict = cm < mm;
        strict_ok = strict_ok && strict;
      }
      char buf[256];
      std::snprintf(buf, sizeof buf, "\n    %-8s %-20s MoG_IB %.3f +- %.3f   cRSB_IB %.3f +- %.3f  %s", flow, ds, mm, ms,
                    cm, cs, band && strict ? "ok" : "VIOLATED");
      table << buf;
    }
  Outcome o;
  o.pass = strict_ok && band_ok;
  o.detail = "mean KLD over 3 seeds:" + table.str();
  return o;
}

// ---------------------------------------------------------------- criterion 5

// Mean over the gaps between adjacent modes of the smallest marginal log
// density on the circle arc spanning the gap.
Mat arc_between_modes(const SyntheticTask& task, int per_gap) {
  const int k = task.components;
  Mat pts(static_cast<Index>(k) * (per_gap - 1), 2);
  Index row = 0;
  for (int g = 0; g < k; ++g)
    for (int j = 1; j < per_gap; ++j) {
      const double a = 2.0 * std::numbers::pi * (g + static_cast<double>(j) / per_gap) / k;
      pts(row, 0) = task.circle_radius * std::cos(a);
      pts(row, 1) = task.circle_radius * std::sin(a);
      ++row;
    }
  return pts;
}

// Minimum log density inside each gap.
std::vector<double> gap_minima(const Vec& lp, int k, int per_gap) {
  std::vector<double> out;
  for (int g = 0; g < k; ++g) out.push_back(lp.segment(static_cast<Index>(g) * (per_gap - 1), per_gap - 1).minCoeff());
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome criterion_filaments(ModelBank& bank) {
  const SyntheticTask task = SyntheticTask::defaults(TaskName::kCircleOfGaussians);
  const int k = task.components, per_gap = 64;
  const Mat pts = arc_between_modes(task, per_gap);
  std::vector<double> crsb, gauss;
  std::string rows;
  for (std::uint64_t s : kSeeds) {
    const auto c = gap_minima(bank.get("circle_of_gaussians", "realnvp", "crsb", s).model.log_prob(pts), k, per_gap);
    const auto g = gap_minima(bank.get("circle_of_gaussians", "realnvp", "gaussian", s).model.log_prob(pts), k, per_gap);
    crsb.push_back(mean_of(c));
    gauss.push_back(mean_of(g));
    rows += "\n    seed " + std::to_string(s) + "  cRSB_IB mean " + fmt("%.3f", crsb.back()) + " median " +
            fmt("%.3f", median_of(c)) + " range [" + fmt("%.2f", *std::min_element(c.begin(), c.end())) + ", " +
            fmt("%.2f", *std::max_element(c.begin(), c.end())) + "]   Gaussian mean " + fmt("%.3f", gauss.back()) +
            " median " + fmt("%.3f", median_of(g)) + " range [" + fmt("%.2f", *std::min_element(g.begin(), g.end())) +
            ", " + fmt("%.2f", *std::max_element(g.begin(), g.end())) + "]";
  }
  // Reference depth of the true marginal, equal class weights.
  const Vec t0 = task_logpdf_batch(task, pts, 0), t1 = task_logpdf_batch(task, pts, 1);
  Vec truth(pts.rows());
  for (Index i = 0; i < pts.rows(); ++i) {
    const double m = std::max(t0(i), t1(i));
    truth(i) = m + std::log(0.5 * (std::exp(t0(i) - m) + std::exp(t1(i) - m)));
  }
  const double gap = mean_of(gauss) - mean_of(crsb);
  Outcome o;
  o.pass = gap >= 1.0;
  o.detail = "min log density between modes: cRSB_IB " + fmt("%.3f", mean_of(crsb)) + ", Gaussian " +
             fmt("%.3f", mean_of(gauss)) + ", difference " + fmt("%.3f", gap) + " nats (true density " +
             fmt("%.3f", mean_of(gap_minima(truth, k, per_gap))) + ")" + rows;
  return o;
}

// ---------------------------------------------------------------- criterion 6

double brute_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  long long twice = 0;
  for (double a : id)
    for (double b : ood) twice += a > b ? 2 : (a == b ? 1 : 0);
  return static_cast<double>(twice) / (2.0 * static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

double brute_tpr(const std::vector<double>& id, const std::vector<double>& ood, double fpr) {
  std::vector<double> cand{INFINITY};
  for (const auto* v : {&id, &ood})
    for (double s : *v) {
      cand.push_back(s);
      cand.push_back(std::nextafter(s, INFINITY));
    }
  std::sort(cand.begin(), cand.end());
  for (double t : cand) {
    const auto fp = std::count_if(ood.begin(), ood.end(), [&](double s) { return s >= t; });
    if (static_cast<double>(fp) <= fpr * static_cast<double>(ood.size()) + 1e-9)
      return static_cast<double>(std::count_if(id.begin(), id.end(), [&](double s) { return s >= t; })) /
             static_cast<double>(id.size());
  }
  return 0.0;
}

int metric_oracle_mismatches() {
  RngStream rng(99, 0);
  int bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + rng.below(20), m = 1 + rng.below(20);
    std::vector<double> id, ood;
    for (std::uint64_t i = 0; i < n; ++i) id.push_back(static_cast<double>(rng.below(10)) * 0.5);
    for (std::uint64_t i = 0; i < m; ++i) ood.push_back(static_cast<double>(rng.below(10)) * 0.5 - 0.5);
    if (auroc(id, ood) != brute_auroc(id, ood)) ++bad;
    for (double f : {0.05, 0.1, 0.2})
      if (tpr_at_fpr(id, ood, f) != brute_tpr(id, ood, f)) ++bad;
  }
  return bad;
}

Outcome criterion_ood(ModelBank& bank) {
  int wins = 0;
  std::vector<double> crsb_auroc;
  std::ostringstream rows;
  for (std::uint64_t s : kSeeds) {
    const MetricReport& c = bank.get("two_moons", "realnvp", "crsb", s).metrics;
    const MetricReport& g = bank.get("two_moons", "realnvp", "gaussian", s).metrics;
    wins += c.auroc >= g.auroc;
    crsb_auroc.push_back(c.auroc);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "\n    seed %llu  cRSB_IB auroc %.4f tpr@5/10/20%% %.3f/%.3f/%.3f   Gaussian auroc %.4f tpr %.3f/%.3f/%.3f",
                  static_cast<unsigned long long>(s), c.auroc, c.tpr05, c.tpr10, c.tpr20, g.auroc, g.tpr05, g.tpr10,
                  g.tpr20);
    rows << buf;
  }
  const int mismatches = metric_oracle_mismatches();
  Outcome o;
  o.pass = wins >= 2 && mean_of(crsb_auroc) >= 0.95 && mismatches == 0;
  o.detail = "cRSB_IB >= Gaussian in " + std::to_string(wins) + "/3 seeds, mean cRSB_IB AUROC " +
             fmt("%.4f", mean_of(crsb_auroc)) + ", brute-force metric mismatches " + std::to_string(mismatches) +
             rows.str();
  return o;
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion_acceptance_map(ModelBank& bank) {
  const GridSpec grid{-3.0, 3.0, 121};
  int covered_runs = 0;
  std::ostringstream rows;
  for (std::uint64_t s : kSeeds) {
    const FlowModel& m = bank.get("two_moons", "realnvp", "crsb", s).model;
    double best[2] = {INFINITY, INFINITY};
    for (int y = 0; y < m.classes(); ++y) {
      const DensityGrid g = render_acceptance_grid(m.base, y, grid);
      const double cut = percentile(g.values, 90.0);
      const Mat z = g.points();
      std::vector<Index> top;
      for (Index i = 0; i < z.rows(); ++i)
        if (g.values[static_cast<std::size_t>(i)] >= cut) top.push_back(i);
      Mat zt(static_cast<Index>(top.size()), 2);
      for (std::size_t i = 0; i < top.size(); ++i) zt.row(static_cast<Index>(i)) = z.row(top[i]);
      const Mat u = m.flow.forward_batch(zt).first;
      for (Index i = 0; i < u.rows(); ++i)
        for (int k = 0; k < 2; ++k) best[k] = std::min(best[k], distance_to_moon_arc(k, u.row(i).transpose()));
    }
    const bool ok = best[0] <= 0.3 && best[1] <= 0.3;
    covered_runs += ok;
    char buf[160];
    std::snprintf(buf, sizeof buf, "\n    seed %llu  nearest top-decile cell: arc 0 %.3f, arc 1 %.3f",
                  static_cast<unsigned long long>(s), best[0], best[1]);
    rows << buf;
  }
  Outcome o;
  o.pass = covered_runs == 3;
  o.detail = "both moons covered in " + std::to_string(covered_runs) + "/3 seeds" + rows.str();
  return o;
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion_determinism(const fs::path& work) {
  const std::string config = R"({"seed": 11, "dataset": {"name": "two_moons", "n_train": 2000, "n_val": 500},
    "base": {"kind": "crsb", "acceptance_hidden": [32, 32]}, "flow": {"kind": "nsf", "hidden": [32, 32]},
    "train": {"steps": 300, "z_samples": 20000}, "eval": {"kld_samples": 2000, "ood": {"n": 500}}})";
  const char* outputs[] = {"model.json", "model.history.csv", "metrics.csv", "density.pgm", "density.csv",
                           "accept.pgm", "accept.csv"};
  std::vector<std::string> contents[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = work / ("determinism_" + std::to_string(run));
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_file_atomic((dir / "config.json").string(), config);
    cmd_train((dir / "config.json").string(), (dir / "model.json").string());
    cmd_eval((dir / "model.json").string(), (dir / "config.json").string(), (dir / "metrics.csv").string());
    RenderRequest density;
    density.grid = GridSpec{-3.0, 3.0, 100};
    cmd_render((dir / "model.json").string(), density, (dir / "density").string());
    RenderRequest accept = density;
    accept.mode = RenderMode::kAcceptance;
    accept.y = 1;
    cmd_render((dir / "model.json").string(), accept, (dir / "accept").string());
    for (const char* f : outputs) contents[run].push_back(read_file((dir / f).string()));
  }
  std::vector<std::string> differing;
  for (std::size_t i = 0; i < contents[0].size(); ++i)
    if (contents[0][i] != contents[1][i]) differing.push_back(outputs[i]);
  Outcome o;
  o.pass = differing.empty();
  o.detail = differing.empty() ? "train + eval + render repeated: all 7 outputs bitwise identical"
                               : "outputs differ between runs:";
  for (const std::string& d : differing) o.detail += " " + d;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "flowtopo_acceptance";
  std::set<int> only;
  bool reuse = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else if (a == "--reuse") {
      reuse = true;
    } else {
      std::fprintf(stderr, "usage: %s [--work DIR] [--only 1,2,...] [--reuse]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);
  ModelBank bank(work / "models", reuse);

  struct Criterion {
    int id;
    const char* title;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "bijection", 60.0, criterion_bijection},
      {2, "gradients", 120.0, criterion_gradients},
      {3, "cRSB algebra", 180.0, criterion_crsb_algebra},
      {4, "KLD ordering", 0.0, [&] { return criterion_ordering(bank); }},
      {5, "filaments", 0.0, [&] { return criterion_filaments(bank); }},
      {6, "OOD ordering", 0.0, [&] { return criterion_ood(bank); }},
      {7, "acceptance map", 0.0, [&] { return criterion_acceptance_map(bank); }},
      {8, "determinism", 0.0, [&] { return criterion_determinism(work); }},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    std::fprintf(stderr, "criterion %d (%s) ...\n", c.id, c.title);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (c.budget_s > 0.0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += " (over the " + fmt("%.0f", c.budget_s) + " s budget)";
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%s) [%.1f s]: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.title, secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
