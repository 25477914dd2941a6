#include "hbsimex/rng.hpp"

#include <cmath>
#include <limits>

namespace hbsimex {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t tag : tags) h = splitmix64(h ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
  return h;
}

double Rng::uniform() {
  // 53 random bits mapped into the open interval (0, 1).
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double Rng::gamma(double shape, double scale) {
  if (shape >= 1.0) {
    std::gamma_distribution<double> dist(shape, 1.0);
    return scale * dist(engine_);
  }
  std::gamma_distribution<double> dist(shape + 1.0, 1.0);
  const double log_draw = std::log(dist(engine_)) + std::log(uniform()) / shape;
  const double draw = std::exp(log_draw) * scale;
  return std::max(draw, std::numeric_limits<double>::min());
}

std::int64_t Rng::poisson(double mean) {
  if (mean <= 0.0) return 0;
  std::poisson_distribution<std::int64_t> dist(mean);
  return dist(engine_);
}

std::size_t Rng::index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

}  // namespace hbsimex
