#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace gmflab {

/// Counter-based splitmix64 generator.
///
/// The state is a plain 64-bit counter advanced by the golden-ratio increment;
/// each output is the splitmix64 finalizer applied to the counter. Streams are
/// derived per component with `Rng::stream(seed, "name")`, which seeds the
/// counter with mix64(seed ^ fnv1a64(name)). Trials owning distinct streams
/// therefore draw the same numbers regardless of scheduling.
///
/// Floating-point draws are built from raw bits only (no <random>
/// distributions) so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : counter_(seed) {}

  static Rng stream(std::uint64_t global_seed, std::string_view component) noexcept;
  static std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view component) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; every call consumes two uniforms.
  double normal() noexcept;
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;

  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  using result_type = std::uint64_t;
  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }
  result_type operator()() noexcept { return next_u64(); }

 private:
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

}  // namespace gmflab
