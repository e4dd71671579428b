#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowtopo/base_dists.hpp"
#include "flowtopo/flows.hpp"

namespace flowtopo {

struct ModelSpec {
  int dim = 2;
  int classes = 2;
  FlowSpec flow;
  BaseSpec base;
};

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  long long steps = 0;
  std::string objective;
};

/// Flow stack + base distribution + class prior: the unit that is trained,
/// saved and scored.
class FlowModel {
 public:
  FlowModel() = default;
  FlowModel(const ModelSpec& spec, ClassPrior prior, RngStream& init_rng);

  const ModelSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }
  int classes() const { return spec_.classes; }

  FlowStack flow;
  BaseDistribution base;
  ClassPrior prior;
  Provenance provenance;

  std::vector<ParamBlock*> params();

  struct Evaluated {
    Var z;         // T^-1(u), n x d
    Var logdet;    // log|det J_{T^-1}(u)|, n x 1
    Var cond;      // log p(u|y) for every y, n x C
    Var joint;     // log p(u|y) + log p(y), n x C
    Var marginal;  // log sum_y p(u|y) p(y), n x 1
  };
  Evaluated evaluate(Tape& tape, Var u, std::optional<Var> normalizer = std::nullopt) const;

  /// log p(u|y) for every class (n x C), chunked.
  Mat log_prob_all(const Mat& u) const;
  /// Class-conditional log p(u|y) when y is given, otherwise the
  /// prior-marginalised log density.
  Vec log_prob(const Mat& u, std::optional<int> y = std::nullopt) const;

 private:
  ModelSpec spec_;
};

/// log p(u [, y]) by change of variables through the inverse flow.
double flow_logprob(const FlowStack& flow, const BaseDistribution& base, const ClassPrior& prior, const Vec& u,
                    std::optional<int> y = std::nullopt);

}  // namespace flowtopo
