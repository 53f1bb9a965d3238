#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "metacritic/params.hpp"
#include "metacritic/rng.hpp"
#include "metacritic/tensor.hpp"

namespace metacritic {

/// Declared layout of one parameter tensor, enough to sample its initial
/// values and to place it in the adapted/shared partition.
struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
  std::size_t fan_out = 1;
  bool is_bias = false;
  bool is_last_linear = false;
  Partition partition = Partition::Adapted;
};

enum class InitScheme { FaninUniform, Xavier, XavierExceptLast };

inline const char* to_string(InitScheme s) {
  switch (s) {
    case InitScheme::FaninUniform: return "fanin_uniform";
    case InitScheme::Xavier: return "xavier";
    case InitScheme::XavierExceptLast: return "xavier_except_last";
  }
  return "?";
}

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "fanin_uniform") return InitScheme::FaninUniform;
  if (s == "xavier") return InitScheme::Xavier;
  if (s == "xavier_except_last") return InitScheme::XavierExceptLast;
  throw OpError("unknown init scheme '" + s + "'");
}

namespace detail {

inline std::vector<double> sample_uniform(RandomStream& rng, std::size_t n,
                                          double bound) {
  std::vector<double> out(n);
  for (double& v : out) v = rng.uniform(-bound, bound);
  return out;
}

}  // namespace detail

/// Deterministic parameter initialization. Each tensor draws from its own
/// stream keyed by (seed, "init", name), so the result depends only on
/// (specs, scheme, seed).
///
/// fanin_uniform: U(-sqrt(1/fan_in), sqrt(1/fan_in)) for weights and
/// biases alike, with fan_in = in-channels x kernel size for convolutions
/// and the input width for fully connected layers.
/// xavier: U(+-sqrt(6/(fan_in+fan_out))) for weights, zero biases.
/// xavier_except_last: xavier everywhere except the last linear layer,
/// which falls back to fanin_uniform (weight and bias).
inline ParamSet init_params(const std::vector<ParamSpec>& specs,
                            InitScheme scheme, std::uint64_t seed) {
  ParamSet out;
  for (const ParamSpec& spec : specs) {
    RandomStream rng = derive_stream(seed, "init", spec.name);
    const std::size_t n = numel_of(spec.shape);
    const bool fanin_style =
        scheme == InitScheme::FaninUniform ||
        (scheme == InitScheme::XavierExceptLast && spec.is_last_linear);
    std::vector<double> values;
    if (fanin_style) {
      values = detail::sample_uniform(
          rng, n, 1.0 / std::sqrt(static_cast<double>(spec.fan_in)));
    } else if (spec.is_bias) {
      values.assign(n, 0.0);
    } else {
      values = detail::sample_uniform(
          rng, n,
          std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out)));
    }
    out.add(spec.name, Tensor::leaf(spec.shape, std::move(values)),
            spec.partition);
  }
  return out;
}

/// All-zero parameters with the declared layout (used by tests and by
/// fixtures that need a blank network).
inline ParamSet zero_params(const std::vector<ParamSpec>& specs) {
  ParamSet out;
  for (const ParamSpec& spec : specs) {
    out.add(spec.name,
            Tensor::leaf(spec.shape,
                         std::vector<double>(numel_of(spec.shape), 0.0)),
            spec.partition);
  }
  return out;
}

}  // namespace metacritic
