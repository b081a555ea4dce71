#include "divdir/random.hpp"

#include <numeric>

namespace divdir {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor Rng::normal_tensor(const Shape& shape) {
  Tensor t(shape);
  for (auto& v : t.data()) v = normal();
  return t;
}

Tensor Rng::uniform_tensor(const Shape& shape, double lo, double hi) {
  Tensor t(shape);
  for (auto& v : t.data()) v = uniform(lo, hi);
  return t;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  // Fisher-Yates with our own draws so the order does not depend on std::shuffle internals.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(next() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace divdir
