#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace edp {

/// Deterministic seeded random stream with named substreams.
///
/// Substream derivation is position independent: `fork(label)` mixes the
/// stream's own seed with an FNV-1a hash of the label, so a substream's
/// draw sequence depends only on (root seed, chain of labels) and never on
/// how many values the parent has produced. All draws come from a
/// mt19937_64 engine plus hand-rolled uniform/Gaussian transforms, so the
/// sequence is bit-identical across platforms and standard libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  /// Seed a named substream would receive; stable across calls.
  std::uint64_t derive_seed(std::string_view label) const;

  /// Independent named substream.
  RngStream fork(std::string_view label) const;

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();

  /// Uniform integer in [0, bound); bound must be positive.
  std::uint64_t uniform_int(std::uint64_t bound);

  /// Standard normal draw (Box-Muller, cached spare).
  double gaussian();

  /// Fisher-Yates shuffle; consumes one uniform_int per swap.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    if (values.size() < 2) return;
    for (std::size_t i = values.size() - 1; i > 0; --i) {
      const auto j = uniform_int(i + 1);
      std::swap(values[i], values[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace edp
