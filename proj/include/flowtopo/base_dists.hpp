#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "flowtopo/dense_net.hpp"

namespace flowtopo {

enum class BaseKind { kGaussian, kMoG, kRSB, kCRSB };

const char* base_kind_name(BaseKind k);
BaseKind parse_base_kind(const std::string& s);

/// Class probabilities p(y).
class ClassPrior {
 public:
  ClassPrior() = default;
  explicit ClassPrior(std::vector<double> probs);

  static ClassPrior uniform(int classes);
  /// Empirical label frequencies; every class must occur at least once.
  static ClassPrior from_labels(std::span<const int> labels, int classes);

  int classes() const { return static_cast<int>(probs_.size()); }
  const std::vector<double>& probs() const { return probs_; }
  RowVec log_probs() const;

 private:
  std::vector<double> probs_;
};

struct BaseSpec {
  BaseKind kind = BaseKind::kGaussian;
  int truncation = 100;
  std::vector<int> acceptance_hidden{128, 128};
  Activation activation = Activation::kTanh;
  double accept_floor = 1e-3;
};

/// Standard normal on R^d, shared by every class.
struct GaussianBase {
  int dim = 0;
};

/// One trainable diagonal Gaussian per class.
struct MoGBase {
  int dim = 0;
  int classes = 0;
  ParamBlock means;       // classes x dim
  ParamBlock log_scales;  // classes x dim
};

/// Learned accept/reject resampling of a standard-normal proposal, truncated
/// at `truncation` draws. One acceptance output per class (conditional) or a
/// single shared output (unconditional).
struct ResampledBase {
  int dim = 0;
  bool conditional = true;
  int truncation = 100;
  double accept_floor = 1e-3;
  DenseNet acceptance;  // dim -> outputs, sigmoid head
  // Per-output normalizer estimates; empty until estimated.
  std::vector<double> z;
  std::vector<long long> z_samples;

  int outputs() const { return acceptance.output_dim(); }
  /// Acceptance probabilities a(z|.) in [floor, 1], one column per output.
  Var accept(Tape& tape, Var zb) const;
  Mat accept_batch(const Mat& zb) const;
  /// Truncation weight (1 - Z)^(T - 1).
  double alpha(double z_value) const;
};

/// Tagged union over the supported bases. Every kind reports
/// log p(z | y) for all classes at once as an (n x classes) matrix.
class BaseDistribution {
 public:
  BaseDistribution() = default;
  BaseDistribution(const BaseSpec& spec, int dim, int classes, RngStream& rng);
  explicit BaseDistribution(GaussianBase g, int classes) : classes_(classes), impl_(std::move(g)) {}
  explicit BaseDistribution(MoGBase m) : classes_(m.classes), impl_(std::move(m)) {}
  BaseDistribution(ResampledBase r, int classes) : classes_(classes), impl_(std::move(r)) {}

  BaseKind kind() const;
  int dim() const;
  int classes() const { return classes_; }

  /// log p(z|y) for every class y. For resampled bases `normalizer` (1 x
  /// outputs) overrides the stored estimates; without it they must exist.
  Var log_prob_all(Tape& tape, Var z, std::optional<Var> normalizer = std::nullopt) const;
  Mat log_prob_all(const Mat& z) const;

  bool is_resampled() const { return std::holds_alternative<ResampledBase>(impl_); }
  ResampledBase& resampled();
  const ResampledBase& resampled() const;
  MoGBase& mog();
  const MoGBase& mog() const;

  void collect(std::vector<ParamBlock*>& out);

 private:
  int classes_ = 1;
  std::variant<GaussianBase, MoGBase, ResampledBase> impl_;
};

/// Diagonal-Gaussian log density of class y.
double mog_logprob(const MoGBase& base, const Vec& z, int y);

/// log of the truncated resampled density for class y using stored Z.
double crsb_logprob(const ResampledBase& base, const Vec& z, int y);

/// Fused truncated-resampling log density: log pi + log((1-alpha) a / Z + alpha).
/// log_pi (n x 1), accept (n x k), normalizer (1 x k) -> (n x k).
Var resampled_log_density(Var log_pi, Var accept, Var normalizer, int truncation);

/// Monte-Carlo normalizer (1/n) sum a(z_i|y), z_i ~ N(0, I), for every
/// acceptance output. Stores the estimates and sample count in `base`.
std::vector<double> estimate_z(ResampledBase& base, long long n_samples, RngStream& rng);
/// Single-output variant matching the per-class operation.
double estimate_z(ResampledBase& base, int y, long long n_samples, RngStream& rng);

/// Training-time normalizer: fresh batch estimate from `proposals`, blended
/// into `ema` (decay) for its value while gradients flow through the batch
/// estimate. `ema` is initialised from the first batch when empty.
Var training_normalizer(Tape& tape, const ResampledBase& base, const Mat& proposals, std::vector<double>& ema,
                        double decay);

/// Truncated accept/reject draw for class y: at most `truncation` proposals,
/// the last one accepted unconditionally.
Vec crsb_sample(const ResampledBase& base, int y, RngStream& rng);
/// n draws, item i consuming its own split stream; vectorised over items.
Mat crsb_sample_n(const ResampledBase& base, int y, Index n, const RngStream& rng);

/// log sum_y p(z|y) p(y) with max shifting.
double marginal_logprob(const BaseDistribution& base, const ClassPrior& prior, const Vec& z);
Vec marginal_logprob_batch(const BaseDistribution& base, const ClassPrior& prior, const Mat& z);

}  // namespace flowtopo
