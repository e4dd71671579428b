#include "flowtopo/rng.hpp"

#include <array>
#include <cmath>

#include "flowtopo/error.hpp"

namespace flowtopo {
namespace {

// Philox4x32-10 (Salmon et al., Random123).
constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), key_(splitmix(seed)) {}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t block = counter_ >> 1;
  const bool high = (counter_ & 1u) != 0;
  ++counter_;
  const auto out = philox(
      {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
       static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)},
      {static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)});
  return high ? (static_cast<std::uint64_t>(out[3]) << 32 | out[2])
              : (static_cast<std::uint64_t>(out[1]) << 32 | out[0]);
}

double RngStream::uniform() {
  // 53 random bits, shifted half an ulp off zero.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  // Box-Muller, one output per pair of uniforms so the stream position stays
  // a simple function of the number of normals drawn.
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  require(n > 0, ErrorCode::kInvalidInput, "RngStream::below: n must be positive");
  // Lemire's multiply-shift with rejection.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = next_u64();
    const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
    if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
  }
}

RngStream RngStream::split(std::uint64_t tag) const {
  return RngStream(splitmix(seed_ ^ splitmix(stream_id_)), splitmix(tag + 0x632BE59BD9B4E019ull));
}

Mat sample_std_normal(RngStream& rng, Index n, Index d) {
  require(n >= 1 && d >= 1, ErrorCode::kInvalidInput, "sample_std_normal: n and d must be >= 1");
  Mat out(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) out(i, j) = rng.normal();
  return out;
}

double std_normal_logpdf(const Vec& z) {
  require(z.allFinite(), ErrorCode::kInvalidInput, "std_normal_logpdf: non-finite input");
  return -0.5 * static_cast<double>(z.size()) * kLog2Pi - 0.5 * z.squaredNorm();
}

bool all_finite(const Mat& m) { return m.allFinite(); }

Vec logsumexp_rows(const Mat& m) {
  Vec out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    if (!std::isfinite(mx)) {
      out(i) = mx;
      continue;
    }
    out(i) = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

}  // namespace flowtopo
