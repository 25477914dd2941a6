#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace hbsimex {

// Mixes a base seed with a path of integer tags (cohort, lambda index,
// replicate, ...) so every parallel cell owns an independent stream.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();  // (0, 1)
  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
  // shape/scale parameterisation; shape < 1 handled through the
  // Gamma(shape + 1) * U^(1/shape) identity in log space.
  double gamma(double shape, double scale);
  double chi_squared(double dof) { return gamma(0.5 * dof, 2.0); }
  std::int64_t poisson(double mean);
  std::size_t index(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace hbsimex
