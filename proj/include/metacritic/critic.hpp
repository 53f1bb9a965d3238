#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metacritic/autodiff.hpp"
#include "metacritic/init.hpp"
#include "metacritic/ops.hpp"
#include "metacritic/params.hpp"

namespace metacritic {

/// Which features feed the learned loss network.
enum class CriticFeatureVariant { Pred, PredParams };

inline const char* to_string(CriticFeatureVariant v) {
  return v == CriticFeatureVariant::Pred ? "pred" : "pred+params";
}

/// Flat feature vector handed to the critic: target-set predictions,
/// optionally followed by the flattened base parameters.
struct CriticFeatureSet {
  Tensor flat;  // shape (1, L)
  CriticFeatureVariant variant = CriticFeatureVariant::Pred;

  std::size_t length() const { return flat.numel(); }
};

/// Architecture of the learned loss network: a stack of length-preserving
/// dilated 1-D convolutions with dense connectivity, feeding a two-layer
/// fully connected head whose first weight matrix is square.
struct CriticSpec {
  std::size_t input_length = 0;  // L
  std::size_t num_conv_layers = 5;
  std::size_t kernel_size = 2;
  std::size_t kernels_per_layer = 8;
  std::size_t fc_layers = 2;

  std::size_t dilation(std::size_t layer) const { return std::size_t{1} << layer; }

  std::size_t conv_in_channels(std::size_t layer) const {
    return 1 + kernels_per_layer * layer;
  }

  /// Channels entering the fully connected head: the raw input plus every
  /// convolution output.
  std::size_t head_channels() const {
    return 1 + num_conv_layers * kernels_per_layer;
  }

  std::size_t fc_width() const { return head_channels() * input_length; }
};

/// Left/right zero padding that keeps layer `layer_index` length-preserving.
/// The total equals the layer's dilation; an odd total puts the extra zero
/// last in the feature dimension.
inline std::pair<std::size_t, std::size_t> pad_for_layer(std::size_t layer_index) {
  if (layer_index >= 5) {
    throw OpError("pad_for_layer: layer index " + std::to_string(layer_index) +
                  " outside 0..4");
  }
  const std::size_t total = std::size_t{1} << layer_index;
  const std::size_t left = total / 2;
  return {left, total - left};
}

inline std::vector<ParamSpec> critic_param_specs(const CriticSpec& spec) {
  if (spec.input_length < 2) {
    throw OpError("critic: input length must be at least 2, got " +
                  std::to_string(spec.input_length));
  }
  std::vector<ParamSpec> out;
  for (std::size_t i = 0; i < spec.num_conv_layers; ++i) {
    const std::size_t cin = spec.conv_in_channels(i);
    const std::size_t fan = cin * spec.kernel_size;
    const std::string base = "conv" + std::to_string(i);
    out.push_back({base + ".weight",
                   {spec.kernels_per_layer, cin, spec.kernel_size},
                   fan,
                   spec.kernels_per_layer * spec.kernel_size,
                   false,
                   false,
                   Partition::Shared});
    out.push_back({base + ".bias",
                   {spec.kernels_per_layer},
                   fan,
                   spec.kernels_per_layer,
                   true,
                   false,
                   Partition::Shared});
  }
  const std::size_t width = spec.fc_width();
  out.push_back({"fc1.weight", {width, width}, width, width, false, false,
                 Partition::Shared});
  out.push_back({"fc1.bias", {width}, width, width, true, false,
                 Partition::Shared});
  out.push_back({"fc2.weight", {1, width}, width, 1, false, true,
                 Partition::Shared});
  out.push_back({"fc2.bias", {1}, width, 1, true, true, Partition::Shared});
  return out;
}

inline ParamSet init_critic(const CriticSpec& spec, std::uint64_t seed,
                            InitScheme scheme = InitScheme::FaninUniform) {
  return init_params(critic_param_specs(spec), scheme, seed);
}

/// The dense dilated convolution stack: (1,1,L) in, (1, head_channels, L)
/// out. Skip connections into the head are realized by concatenating the
/// raw input and every convolution output.
inline Tensor critic_conv_stack(const CriticSpec& spec, const ParamSet& w,
                                const Tensor& input) {
  std::vector<Tensor> features{input};
  for (std::size_t i = 0; i < spec.num_conv_layers; ++i) {
    const Tensor layer_in =
        features.size() == 1 ? features[0] : ops::concat(features, 1);
    const auto [pad_left, pad_right] = pad_for_layer(i);
    ops::Conv1dOpts opts;
    opts.dilation = spec.dilation(i);
    opts.pad_left = pad_left;
    opts.pad_right = pad_right;
    const std::string base = "conv" + std::to_string(i);
    Tensor h = ops::conv1d(layer_in, w.get(base + ".weight"),
                           w.get(base + ".bias"), opts);
    features.push_back(ops::relu(h));
  }
  return ops::concat(features, 1);
}

/// Evaluate the learned loss on a feature set. Scalar output.
inline Tensor critic_forward(const CriticSpec& spec, const ParamSet& w,
                             const CriticFeatureSet& f) {
  if (f.length() != spec.input_length) {
    throw OpError("critic: feature length " + std::to_string(f.length()) +
                  " does not match configured length " +
                  std::to_string(spec.input_length));
  }
  const std::size_t width = spec.fc_width();
  if (w.get("fc1.weight").shape() != Shape{width, width}) {
    throw OpError("critic: fc1 weight " +
                  shape_str(w.get("fc1.weight").shape()) +
                  " does not match feature length " +
                  std::to_string(spec.input_length) + " (expected " +
                  shape_str({width, width}) + ")");
  }
  Tensor x = ops::reshape(f.flat, {1, 1, spec.input_length});
  Tensor stacked = critic_conv_stack(spec, w, x);
  Tensor flat = ops::reshape(stacked, {1, width});
  Tensor h = ops::relu(ops::linear(flat, w.get("fc1.weight"), w.get("fc1.bias")));
  Tensor out = ops::linear(h, w.get("fc2.weight"), w.get("fc2.bias"));
  return ops::reshape(out, {1});
}

/// Norm of the critic output's gradient with respect to its input
/// features. Diagnostic for the head's skip connections: with them in
/// place this is generically nonzero.
inline double critic_input_gradient_norm(const CriticSpec& spec,
                                         const ParamSet& w,
                                         const std::vector<double>& features) {
  Tensor flat = Tensor::leaf({1, features.size()}, features);
  CriticFeatureSet f{flat, CriticFeatureVariant::Pred};
  GradMap g = backward(critic_forward(spec, w, f), {flat});
  const Tensor grad = g.get(flat);
  double sq = 0.0;
  for (const double v : grad.values()) sq += v * v;
  return std::sqrt(sq);
}

/// Memory the square first fully-connected weight would need if the
/// flattened base parameters were part of the critic features: the feature
/// length is dominated by the parameter count, every convolution stage
/// multiplies the channel count up to head_channels(), and the first
/// fully-connected layer squares that width.
inline double estimate_critic_memory(std::int64_t base_param_count,
                                     std::int64_t bytes_per_value) {
  if (base_param_count <= 0 || bytes_per_value <= 0) {
    throw OpError("estimate_critic_memory: arguments must be positive");
  }
  const double width = static_cast<double>(base_param_count) * 41.0;
  return width * width * static_cast<double>(bytes_per_value);
}

}  // namespace metacritic
