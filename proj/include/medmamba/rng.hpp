#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace medmamba {

/// Counter-based generator: the n-th draw is a pure function of
/// (seed, stream, n), so streams are reproducible across platforms and
/// independent of the order in which other streams are consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept;

  // Child stream keyed by a tag; does not advance this stream.
  Rng fork(std::uint64_t tag) const noexcept;
  Rng fork(std::string_view tag) const noexcept;

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept;
  // Normal resampled until within `bound` standard deviations.
  double truncated_normal(double stddev, double bound = 2.0) noexcept;
  bool bernoulli(double p) noexcept;
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;
  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace medmamba
