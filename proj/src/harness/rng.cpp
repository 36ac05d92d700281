#include "soma/harness/rng.hpp"

#include <cmath>
#include <numbers>

namespace soma {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t RngStream::bits_at(std::uint64_t index) const {
  return mix64(mix64(key_ ^ (index * 0xd1b54a32d192ed03ULL)) + index);
}

double RngStream::uniform_at(std::uint64_t index) const {
  return (static_cast<double>(bits_at(index) >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal_at(std::uint64_t index) const {
  const double u1 = uniform_at(2 * index);
  const double u2 = uniform_at(2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::substream(std::string_view name) const { return RngStream(mix64(key_ ^ fnv1a64(name))); }

RngStream RngStream::substream(std::uint64_t index) const {
  return RngStream(mix64(key_ + mix64(index ^ 0xa0761d6478bd642fULL)));
}

}  // namespace soma
