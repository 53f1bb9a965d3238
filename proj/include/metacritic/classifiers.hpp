#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "metacritic/init.hpp"
#include "metacritic/ops.hpp"
#include "metacritic/params.hpp"

namespace metacritic {

// ---------------------------------------------------------------------------
// Running statistics for normalization layers.
//
// Normalization always divides by these exponential moving averages, never
// by batch statistics, so a batch of one is as valid as a batch of many.
// The state is updated only through `update`, by a single writer.
// ---------------------------------------------------------------------------

class RunningStats {
 public:
  struct Entry {
    std::string name;
    std::vector<double> mean;
    std::vector<double> var;
  };

  explicit RunningStats(double decay = 0.99) : decay_(decay) {}

  void add_layer(const std::string& name, std::size_t channels) {
    if (index_.count(name)) throw OpError("running stats: duplicate '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({name, std::vector<double>(channels, 0.0),
                        std::vector<double>(channels, 1.0)});
  }

  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw OpError("running stats: no layer named '" + name + "'");
    }
    return entries_[it->second];
  }

  void update(const std::string& name, const std::vector<double>& batch_mean,
              const std::vector<double>& batch_var) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw OpError("running stats: no layer named '" + name + "'");
    }
    Entry& e = entries_[it->second];
    if (batch_mean.size() != e.mean.size() || batch_var.size() != e.var.size()) {
      throw OpError("running stats: channel count mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < e.mean.size(); ++i) {
      e.mean[i] = decay_ * e.mean[i] + (1.0 - decay_) * batch_mean[i];
      e.var[i] = decay_ * e.var[i] + (1.0 - decay_) * batch_var[i];
    }
  }

  double decay() const { return decay_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Entry>& mutable_entries() { return entries_; }

 private:
  double decay_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Per-channel batch moments observed during a forward pass, keyed by
/// normalization layer name. The trainer folds these into RunningStats.
class BatchStats {
 public:
  void observe(const std::string& name, const Tensor& x) {
    const std::size_t channels = x.shape()[1];
    const std::size_t outer = x.shape()[0];
    std::size_t inner = 1;
    for (std::size_t d = 2; d < x.ndim(); ++d) inner *= x.shape()[d];
    std::vector<double> mean(channels, 0.0), var(channels, 0.0);
    const auto& v = x.values();
    const double n = static_cast<double>(outer * inner);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < channels; ++c) {
        const double* p = v.data() + (o * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) mean[c] += p[i];
      }
    for (double& m : mean) m /= n;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < channels; ++c) {
        const double* p = v.data() + (o * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - mean[c];
          var[c] += d * d;
        }
      }
    for (double& s : var) s /= n;
    moments_[name] = {std::move(mean), std::move(var)};
  }

  void fold_into(RunningStats& stats) const {
    for (const auto& [name, mv] : moments_) {
      stats.update(name, mv.first, mv.second);
    }
  }

  bool empty() const { return moments_.empty(); }

 private:
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      moments_;
};

namespace detail {

inline Tensor bn_layer(const ParamSet& params, const RunningStats& stats,
                       const std::string& name, const Tensor& x,
                       BatchStats* collect) {
  if (collect) collect->observe(name, x);
  const RunningStats::Entry& e = stats.at(name);
  const Tensor mean = Tensor::from_values({e.mean.size()},
                                          std::vector<double>(e.mean));
  const Tensor var =
      Tensor::from_values({e.var.size()}, std::vector<double>(e.var));
  return ops::batch_norm_running(x, params.get(name + ".gamma"),
                                 params.get(name + ".beta"), mean, var);
}

inline void expect_input(const char* who, const Tensor& x, const Shape& tail) {
  if (x.ndim() != tail.size() + 1) {
    throw OpError(std::string(who) + ": input rank " +
                  std::to_string(x.ndim()) + " does not match expected " +
                  shape_str(tail) + " per sample");
  }
  for (std::size_t d = 0; d < tail.size(); ++d) {
    if (x.shape()[d + 1] != tail[d]) {
      throw OpError(std::string(who) + ": input " + shape_str(x.shape()) +
                    " does not match expected per-sample shape " +
                    shape_str(tail));
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense classifier for vector tasks
// ---------------------------------------------------------------------------

struct MlpSpec {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden = {32};
  std::size_t num_classes = 5;
  bool with_norm = true;
};

inline std::vector<ParamSpec> param_specs(const MlpSpec& spec) {
  std::vector<ParamSpec> out;
  std::size_t in = spec.input_dim;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    const std::size_t h = spec.hidden[i];
    const std::string base = "layer" + std::to_string(i);
    out.push_back({base + ".weight", {h, in}, in, h, false, false});
    out.push_back({base + ".bias", {h}, in, h, true, false});
    if (spec.with_norm) {
      const std::string bn = "norm" + std::to_string(i);
      out.push_back({bn + ".gamma", {h}, h, h, false, false});
      out.push_back({bn + ".beta", {h}, h, h, true, false});
    }
    in = h;
  }
  out.push_back({"head.weight", {spec.num_classes, in}, in, spec.num_classes,
                 false, true});
  out.push_back({"head.bias", {spec.num_classes}, in, spec.num_classes, true,
                 true});
  return out;
}

inline void register_norm_layers(const MlpSpec& spec, RunningStats& stats) {
  if (!spec.with_norm) return;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    stats.add_layer("norm" + std::to_string(i), spec.hidden[i]);
  }
}

inline Tensor forward(const MlpSpec& spec, const ParamSet& params,
                      const Tensor& x, const RunningStats& stats,
                      BatchStats* collect = nullptr) {
  detail::expect_input("mlp", x, {spec.input_dim});
  Tensor h = x;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    const std::string base = "layer" + std::to_string(i);
    h = ops::linear(h, params.get(base + ".weight"), params.get(base + ".bias"));
    if (spec.with_norm) {
      h = detail::bn_layer(params, stats, "norm" + std::to_string(i), h, collect);
    }
    h = ops::relu(h);
  }
  return ops::linear(h, params.get("head.weight"), params.get("head.bias"));
}

// ---------------------------------------------------------------------------
// Small convolutional classifier (conv-norm-relu-pool blocks + linear head)
// ---------------------------------------------------------------------------

struct LowEndSpec {
  std::size_t in_channels = 1;
  std::size_t height = 14;
  std::size_t width = 14;
  std::size_t filters = 8;
  std::size_t blocks = 3;
  std::size_t num_classes = 5;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> lowend_final_spatial(
    const LowEndSpec& spec) {
  std::size_t h = spec.height, w = spec.width;
  for (std::size_t b = 0; b < spec.blocks; ++b) {
    if (h < 2 || w < 2) {
      throw OpError("lowend: input " + std::to_string(spec.height) + "x" +
                    std::to_string(spec.width) + " too small for " +
                    std::to_string(spec.blocks) + " pooling blocks");
    }
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

}  // namespace detail

inline std::vector<ParamSpec> param_specs(const LowEndSpec& spec) {
  std::vector<ParamSpec> out;
  std::size_t cin = spec.in_channels;
  for (std::size_t b = 0; b < spec.blocks; ++b) {
    const std::string conv = "conv" + std::to_string(b);
    const std::string norm = "norm" + std::to_string(b);
    const std::size_t fan = cin * 9;
    out.push_back({conv + ".weight", {spec.filters, cin, 3, 3}, fan,
                   spec.filters * 9, false, false});
    out.push_back({conv + ".bias", {spec.filters}, fan, spec.filters, true,
                   false});
    out.push_back({norm + ".gamma", {spec.filters}, spec.filters, spec.filters,
                   false, false});
    out.push_back({norm + ".beta", {spec.filters}, spec.filters, spec.filters,
                   true, false});
    cin = spec.filters;
  }
  const auto [fh, fw] = detail::lowend_final_spatial(spec);
  const std::size_t feat = spec.filters * fh * fw;
  out.push_back({"head.weight", {spec.num_classes, feat}, feat,
                 spec.num_classes, false, true});
  out.push_back({"head.bias", {spec.num_classes}, feat, spec.num_classes, true,
                 true});
  return out;
}

inline void register_norm_layers(const LowEndSpec& spec, RunningStats& stats) {
  for (std::size_t b = 0; b < spec.blocks; ++b) {
    stats.add_layer("norm" + std::to_string(b), spec.filters);
  }
}

inline Tensor forward(const LowEndSpec& spec, const ParamSet& params,
                      const Tensor& x, const RunningStats& stats,
                      BatchStats* collect = nullptr) {
  detail::expect_input("lowend", x, {spec.in_channels, spec.height, spec.width});
  Tensor h = x;
  for (std::size_t b = 0; b < spec.blocks; ++b) {
    const std::string conv = "conv" + std::to_string(b);
    h = ops::conv2d(h, params.get(conv + ".weight"), params.get(conv + ".bias"),
                    {1, 1});
    h = detail::bn_layer(params, stats, "norm" + std::to_string(b), h, collect);
    h = ops::relu(h);
    h = ops::max_pool2d(h, 2, 2);
  }
  h = ops::flatten_rows(h);
  return ops::linear(h, params.get("head.weight"), params.get("head.bias"));
}

// ---------------------------------------------------------------------------
// Dense-stage classifier: two dense stages of (squeeze-excite + bottleneck)
// units with one transition layer between them. Only the last dense block
// unit and the final linear layer are adapted per task; everything else is
// shared feature embedding.
// ---------------------------------------------------------------------------

struct HighEndSpec {
  std::size_t in_channels = 1;
  std::size_t height = 14;
  std::size_t width = 14;
  std::size_t num_dense_stages = 2;
  std::size_t units_per_stage = 2;
  std::size_t growth_rate = 8;       // k (64 at full scale)
  double transition_compression = 0.5;
  std::size_t se_reduction = 16;
  std::size_t bottleneck_mult = 4;
  std::size_t num_classes = 5;
};

namespace detail {

struct HighEndLayout {
  std::size_t stem_channels;
  // channels entering each unit, per stage
  std::vector<std::vector<std::size_t>> unit_in;
  std::vector<std::size_t> stage_out;
  std::vector<std::size_t> transition_out;
  std::size_t final_channels;
};

inline HighEndLayout highend_layout(const HighEndSpec& spec) {
  if (spec.num_dense_stages != 2) {
    throw OpError("highend: exactly two dense stages are supported");
  }
  if (spec.transition_compression <= 0.0 || spec.transition_compression > 1.0) {
    throw OpError("highend: transition compression must be in (0,1]");
  }
  HighEndLayout lay;
  lay.stem_channels = 2 * spec.growth_rate;
  std::size_t c = lay.stem_channels;
  for (std::size_t s = 0; s < spec.num_dense_stages; ++s) {
    lay.unit_in.emplace_back();
    for (std::size_t u = 0; u < spec.units_per_stage; ++u) {
      lay.unit_in[s].push_back(c);
      c += spec.growth_rate;
    }
    lay.stage_out.push_back(c);
    if (s + 1 < spec.num_dense_stages) {
      c = static_cast<std::size_t>(
          static_cast<double>(c) * spec.transition_compression);
      if (c == 0) c = 1;
      lay.transition_out.push_back(c);
    }
  }
  lay.final_channels = c;
  return lay;
}

}  // namespace detail

inline std::vector<ParamSpec> param_specs(const HighEndSpec& spec) {
  const detail::HighEndLayout lay = detail::highend_layout(spec);
  std::vector<ParamSpec> out;
  const auto conv = [&](const std::string& name, std::size_t cout,
                        std::size_t cin, std::size_t k, Partition part) {
    const std::size_t fan = cin * k * k;
    out.push_back({name + ".weight", {cout, cin, k, k}, fan, cout * k * k,
                   false, false, part});
    out.push_back({name + ".bias", {cout}, fan, cout, true, false, part});
  };
  const auto norm = [&](const std::string& name, std::size_t c, Partition part) {
    out.push_back({name + ".gamma", {c}, c, c, false, false, part});
    out.push_back({name + ".beta", {c}, c, c, true, false, part});
  };
  const auto fc = [&](const std::string& name, std::size_t o, std::size_t i,
                      bool last, Partition part) {
    out.push_back({name + ".weight", {o, i}, i, o, false, last, part});
    out.push_back({name + ".bias", {o}, i, o, true, last, part});
  };

  conv("stem", lay.stem_channels, spec.in_channels, 3, Partition::Shared);
  norm("stem_norm", lay.stem_channels, Partition::Shared);
  for (std::size_t s = 0; s < spec.num_dense_stages; ++s) {
    for (std::size_t u = 0; u < spec.units_per_stage; ++u) {
      const bool last_unit = (s == spec.num_dense_stages - 1) &&
                             (u == spec.units_per_stage - 1);
      const Partition part = last_unit ? Partition::Adapted : Partition::Shared;
      const std::string base =
          "stage" + std::to_string(s) + ".unit" + std::to_string(u);
      const std::size_t cin = lay.unit_in[s][u];
      const std::size_t squeezed =
          std::max<std::size_t>(1, cin / spec.se_reduction);
      fc(base + ".se.fc1", squeezed, cin, false, part);
      fc(base + ".se.fc2", cin, squeezed, false, part);
      norm(base + ".norm1", cin, part);
      conv(base + ".conv1", spec.bottleneck_mult * spec.growth_rate, cin, 1,
           part);
      norm(base + ".norm2", spec.bottleneck_mult * spec.growth_rate, part);
      conv(base + ".conv2", spec.growth_rate,
           spec.bottleneck_mult * spec.growth_rate, 3, part);
    }
    if (s + 1 < spec.num_dense_stages) {
      norm("transition.norm", lay.stage_out[s], Partition::Shared);
      conv("transition.conv", lay.transition_out[s], lay.stage_out[s], 1,
           Partition::Shared);
    }
  }
  norm("final_norm", lay.final_channels, Partition::Shared);
  fc("head", spec.num_classes, lay.final_channels, true, Partition::Adapted);
  return out;
}

inline void register_norm_layers(const HighEndSpec& spec, RunningStats& stats) {
  const detail::HighEndLayout lay = detail::highend_layout(spec);
  stats.add_layer("stem_norm", lay.stem_channels);
  for (std::size_t s = 0; s < spec.num_dense_stages; ++s) {
    for (std::size_t u = 0; u < spec.units_per_stage; ++u) {
      const std::string base =
          "stage" + std::to_string(s) + ".unit" + std::to_string(u);
      stats.add_layer(base + ".norm1", lay.unit_in[s][u]);
      stats.add_layer(base + ".norm2",
                      spec.bottleneck_mult * spec.growth_rate);
    }
    if (s + 1 < spec.num_dense_stages) {
      stats.add_layer("transition.norm", lay.stage_out[s]);
    }
  }
  stats.add_layer("final_norm", lay.final_channels);
}

namespace detail {

inline Tensor se_gate(const ParamSet& params, const std::string& base,
                      const Tensor& x) {
  Tensor squeezed = ops::global_avg_pool(x);  // (n, c)
  Tensor h = ops::relu(ops::linear(squeezed, params.get(base + ".se.fc1.weight"),
                                   params.get(base + ".se.fc1.bias")));
  Tensor gate = ops::sigmoid(ops::linear(h, params.get(base + ".se.fc2.weight"),
                                         params.get(base + ".se.fc2.bias")));
  Shape gshape = x.shape();
  for (std::size_t d = 2; d < gshape.size(); ++d) gshape[d] = 1;
  return ops::mul(x, ops::reshape(gate, gshape));
}

}  // namespace detail

inline Tensor forward(const HighEndSpec& spec, const ParamSet& params,
                      const Tensor& x, const RunningStats& stats,
                      BatchStats* collect = nullptr) {
  detail::expect_input("highend", x,
                       {spec.in_channels, spec.height, spec.width});
  Tensor h = ops::conv2d(x, params.get("stem.weight"), params.get("stem.bias"),
                         {1, 1});
  h = ops::relu(detail::bn_layer(params, stats, "stem_norm", h, collect));
  for (std::size_t s = 0; s < spec.num_dense_stages; ++s) {
    std::vector<Tensor> features{h};
    for (std::size_t u = 0; u < spec.units_per_stage; ++u) {
      const std::string base =
          "stage" + std::to_string(s) + ".unit" + std::to_string(u);
      Tensor unit_in =
          features.size() == 1 ? features[0] : ops::concat(features, 1);
      Tensor attended = detail::se_gate(params, base, unit_in);
      Tensor b = ops::relu(
          detail::bn_layer(params, stats, base + ".norm1", attended, collect));
      b = ops::conv2d(b, params.get(base + ".conv1.weight"),
                      params.get(base + ".conv1.bias"), {1, 0});
      b = ops::relu(
          detail::bn_layer(params, stats, base + ".norm2", b, collect));
      b = ops::conv2d(b, params.get(base + ".conv2.weight"),
                      params.get(base + ".conv2.bias"), {1, 1});
      features.push_back(b);
    }
    h = ops::concat(features, 1);
    if (s + 1 < spec.num_dense_stages) {
      h = ops::relu(
          detail::bn_layer(params, stats, "transition.norm", h, collect));
      h = ops::conv2d(h, params.get("transition.conv.weight"),
                      params.get("transition.conv.bias"), {1, 0});
      h = ops::avg_pool2d(h, 2, 2);
    }
  }
  h = ops::relu(detail::bn_layer(params, stats, "final_norm", h, collect));
  h = ops::global_avg_pool(h);
  return ops::linear(h, params.get("head.weight"), params.get("head.bias"));
}

// ---------------------------------------------------------------------------
// Uniform handle over the three classifier families
// ---------------------------------------------------------------------------

using ModelSpec = std::variant<MlpSpec, LowEndSpec, HighEndSpec>;

inline std::vector<ParamSpec> model_param_specs(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return param_specs(s); }, spec);
}

inline RunningStats init_running_stats(const ModelSpec& spec,
                                       double decay = 0.99) {
  RunningStats stats(decay);
  std::visit([&](const auto& s) { register_norm_layers(s, stats); }, spec);
  return stats;
}

inline Tensor forward_model(const ModelSpec& spec, const ParamSet& params,
                            const Tensor& x, const RunningStats& stats,
                            BatchStats* collect = nullptr) {
  return std::visit(
      [&](const auto& s) { return forward(s, params, x, stats, collect); },
      spec);
}

inline std::size_t model_num_classes(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.num_classes; }, spec);
}

}  // namespace metacritic
