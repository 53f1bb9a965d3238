#pragma once

// Test-only oracles, independent of the differentiation path they verify:
// plain-loop reference computations and random tensor builders.

#include <cmath>
#include <functional>
#include <vector>

#include "metacritic/autodiff.hpp"
#include "metacritic/ops.hpp"
#include "metacritic/params.hpp"
#include "metacritic/rng.hpp"

namespace oracles {

using metacritic::ParamSet;
using metacritic::Shape;
using metacritic::Tensor;

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed,
                                         double lo = -1.0, double hi = 1.0) {
  metacritic::RandomStream rng = metacritic::derive_stream(seed, "values");
  std::vector<double> out(n);
  for (double& v : out) v = rng.uniform(lo, hi);
  return out;
}

/// Random values bounded away from zero (for kinked activations).
inline std::vector<double> random_values_off_zero(std::size_t n,
                                                  std::uint64_t seed,
                                                  double margin = 1e-2) {
  metacritic::RandomStream rng = metacritic::derive_stream(seed, "offzero");
  std::vector<double> out(n);
  for (double& v : out) {
    const double mag = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return out;
}

inline Tensor random_leaf(const Shape& shape, std::uint64_t seed, double lo = -1.0,
                          double hi = 1.0) {
  return Tensor::leaf(shape, random_values(metacritic::numel_of(shape), seed, lo, hi));
}

/// Deterministic projection of any tensor to a scalar, so every op can be
/// checked through a scalar loss.
inline Tensor probe(const Tensor& t, std::uint64_t seed = 7) {
  const Tensor weights = Tensor::from_values(
      t.shape(), random_values(t.numel(), seed ^ 0xABCDEF, -1.0, 1.0));
  return metacritic::ops::sum(metacritic::ops::mul(t, weights));
}

/// Max relative error between the engine gradient and central differences
/// for an arbitrary scalar-valued function of a ParamSet.
inline double gradcheck(const std::function<Tensor(const ParamSet&)>& f,
                        const ParamSet& at, double step = 1e-5) {
  return metacritic::finite_difference_check(f, at, step).max_rel_err;
}

}  // namespace oracles
