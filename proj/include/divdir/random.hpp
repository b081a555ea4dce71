#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "divdir/tensor.hpp"

namespace divdir {

// Mixes a base seed with a stream id so independent consumers get independent streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }
  std::uint64_t next() { return engine_(); }

  Tensor normal_tensor(const Shape& shape);
  Tensor uniform_tensor(const Shape& shape, double lo, double hi);
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace divdir
