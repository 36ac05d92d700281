#pragma once

#include <cstdint>
#include <string_view>

namespace soma {

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Counter-based random stream: draw i is a pure function of (key, i), so a stream can be
/// replayed from any position and substreams never interfere with each other.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  std::uint64_t bits_at(std::uint64_t index) const;
  /// Uniform on the open interval (0, 1).
  double uniform_at(std::uint64_t index) const;
  /// Standard normal from the uniform pair at (2 index, 2 index + 1).
  double normal_at(std::uint64_t index) const;

  std::uint64_t next_bits() { return bits_at(counter_++); }
  double uniform() { return uniform_at(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

  RngStream substream(std::string_view name) const;
  RngStream substream(std::uint64_t index) const;

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Named substreams derived from one master seed.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t master_seed) : master_(master_seed), root_(mix64(master_seed ^ 0x5eed5eed5eedULL)) {}

  std::uint64_t master_seed() const { return master_; }
  RngStream stream(std::string_view name) const { return root_.substream(name); }
  RngStream env_noise() const { return stream("env-noise"); }
  RngStream policy_sampling() const { return stream("policy-sampling"); }
  RngStream init() const { return stream("init"); }
  RngStream probe() const { return stream("probe"); }

 private:
  std::uint64_t master_;
  RngStream root_;
};

}  // namespace soma
