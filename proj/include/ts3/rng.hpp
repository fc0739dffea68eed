#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace ts3 {

/// Counter-based generator. Draw i of a stream is a pure function of
/// (key, i), so named substreams stay reproducible no matter how many draws
/// other streams consume.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(mix(key)) {}

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  /// Inverse-CDF draw from an unnormalized nonnegative weight vector.
  std::size_t categorical(std::span<const double> weights);

  /// Independent stream keyed by (this key, name, index).
  Rng substream(std::string_view name, std::uint64_t index = 0) const;

  std::uint64_t key() const { return key_; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  struct RawKey {};
  Rng(std::uint64_t key, RawKey) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace ts3
