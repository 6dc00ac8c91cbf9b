#include "deepsim/rng.hpp"

#include <cmath>
#include <numbers>

namespace deepsim {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t Rng::bits(std::uint64_t index) const {
  return mix64(mix64(seed_) ^ (index * 0xd1b54a32d192ed03ULL));
}

double Rng::uniform(std::uint64_t index) const {
  return static_cast<double>(bits(index) >> 11) * 0x1.0p-53;
}

double Rng::normal(std::uint64_t index) const {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform(2 * index);
  const double u2 = uniform(2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

__extension__ typedef unsigned __int128 Uint128;

std::uint64_t Rng::below(std::uint64_t index, std::uint64_t n) const {
  if (n == 0) return 0;
  // Lemire's multiply-shift; the bias is < n / 2^64.
  return static_cast<std::uint64_t>((static_cast<Uint128>(bits(index)) * n) >> 64);
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(mix64(seed_ ^ mix64(stream + 0x632be59bd9b4e019ULL)));
}

}  // namespace deepsim
