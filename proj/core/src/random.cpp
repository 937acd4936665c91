#include "moesumm/random.hpp"

namespace moesumm {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor normal_parameter(Shape shape, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor constant_parameter(Shape shape, double value) {
  std::vector<double> v(shape_size(shape), value);
  return Tensor::parameter(std::move(shape), std::move(v));
}

}  // namespace moesumm
