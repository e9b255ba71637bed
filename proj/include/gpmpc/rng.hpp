#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace gpmpc {

/// Counter-based random stream (Philox4x32-10).
///
/// The key is derived from `seed`; the 128-bit counter holds the stream id in
/// its upper half and a block index in its lower half, so streams with
/// different ids never overlap and any stream can be created independently of
/// the others. The object is a plain value: copying it forks an identical
/// sequence.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }

  /// Independent child stream keyed by `key` (same seed, hashed stream id).
  RngStream derive(std::uint64_t key) const;

  std::uint64_t next_u64();
  /// Uniform in the open interval (0, 1).
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();

  // UniformRandomBitGenerator
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

  bool operator==(const RngStream&) const = default;

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::array<std::uint32_t, 2> key_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int buffered_ = 0;  // 64-bit words left in buffer_ (0..2)
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// The Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// SplitMix64 finalizer, used for key and stream-id derivation.
std::uint64_t mix64(std::uint64_t x);

}  // namespace gpmpc
