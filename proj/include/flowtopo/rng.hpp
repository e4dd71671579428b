#pragma once

#include <cstdint>

#include "flowtopo/tensor.hpp"

namespace flowtopo {

/// Counter-based random stream. Output i of stream (seed, stream_id) is a pure
/// function of (seed, stream_id, i), so splitting work across threads or
/// chunks never changes the drawn values.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  /// Repositions the stream; draws continue from output `counter`.
  void seek(std::uint64_t counter) { counter_ = counter; }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream keyed by this stream's identity and `tag`.
  RngStream split(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// n x d matrix of independent standard normals.
Mat sample_std_normal(RngStream& rng, Index n, Index d);

/// log density of N(0, I_d) at z.
double std_normal_logpdf(const Vec& z);

}  // namespace flowtopo
