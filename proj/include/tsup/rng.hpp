#pragma once

#include <array>
#include <cstdint>

namespace tsup {

/// Identifies a reproducible random stream.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  /// Child stream `index` of this one. Children of distinct indices (and of
  /// distinct parents) map to distinct stream ids through a bijective mixer.
  RngState split(std::uint64_t index) const;

  friend bool operator==(const RngState&, const RngState&) = default;
};

/// xoshiro256** seeded through splitmix64 from an RngState. Single owner.
class Rng {
 public:
  explicit Rng(RngState state);
  Rng(std::uint64_t seed, std::uint64_t stream = 0) : Rng(RngState{seed, stream}) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; the second variate of each pair is kept.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  const RngState& origin() const { return origin_; }
  Rng split(std::uint64_t index) const { return Rng(origin_.split(index)); }

 private:
  RngState origin_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace tsup
