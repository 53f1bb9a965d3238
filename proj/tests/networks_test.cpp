#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "metacritic/classifiers.hpp"
#include "metacritic/critic.hpp"
#include "metacritic/init.hpp"
#include "oracles.hpp"

using namespace metacritic;
namespace o = oracles;

namespace {

// Straight-line recomputation of the critic with plain loops; shares no
// code with the graph implementation.
double straight_line_critic(const CriticSpec& spec, const ParamSet& w,
                            const std::vector<double>& input) {
  const std::size_t L = spec.input_length;
  std::vector<std::vector<double>> rows;  // one vector of length L per channel
  rows.push_back(input);
  for (std::size_t i = 0; i < spec.num_conv_layers; ++i) {
    const std::size_t cin = rows.size();
    const std::size_t dil = std::size_t{1} << i;
    const auto [pad_l, pad_r] = pad_for_layer(i);
    const auto& wv = w.get("conv" + std::to_string(i) + ".weight").values();
    const auto& bv = w.get("conv" + std::to_string(i) + ".bias").values();
    std::vector<std::vector<double>> next;
    for (std::size_t oc = 0; oc < spec.kernels_per_layer; ++oc) {
      std::vector<double> row(L, 0.0);
      for (std::size_t t = 0; t < L; ++t) {
        double acc = bv[oc];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t k = 0; k < spec.kernel_size; ++k) {
            const std::int64_t pos = static_cast<std::int64_t>(t + k * dil) -
                                     static_cast<std::int64_t>(pad_l);
            if (pos < 0 || pos >= static_cast<std::int64_t>(L)) continue;
            acc += wv[(oc * cin + c) * spec.kernel_size + k] * rows[c][pos];
          }
        row[t] = std::max(0.0, acc);
      }
      next.push_back(std::move(row));
    }
    for (auto& r : next) rows.push_back(std::move(r));
    (void)pad_r;
  }
  // flatten channel-major, then two dense layers
  std::vector<double> flat;
  flat.reserve(rows.size() * L);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  const std::size_t width = spec.fc_width();
  REQUIRE(flat.size() == width);
  const auto& w1 = w.get("fc1.weight").values();
  const auto& b1 = w.get("fc1.bias").values();
  std::vector<double> h(width, 0.0);
  for (std::size_t j = 0; j < width; ++j) {
    double acc = b1[j];
    for (std::size_t i = 0; i < width; ++i) acc += w1[j * width + i] * flat[i];
    h[j] = std::max(0.0, acc);
  }
  const auto& w2 = w.get("fc2.weight").values();
  double out = w.get("fc2.bias").values()[0];
  for (std::size_t i = 0; i < width; ++i) out += w2[i] * h[i];
  return out;
}

}  // namespace

TEST_CASE("padding table keeps every critic layer length-preserving") {
  CHECK(pad_for_layer(0) == std::pair<std::size_t, std::size_t>{0, 1});
  CHECK(pad_for_layer(1) == std::pair<std::size_t, std::size_t>{1, 1});
  CHECK(pad_for_layer(2) == std::pair<std::size_t, std::size_t>{2, 2});
  CHECK(pad_for_layer(3) == std::pair<std::size_t, std::size_t>{4, 4});
  CHECK(pad_for_layer(4) == std::pair<std::size_t, std::size_t>{8, 8});
  CHECK_THROWS_AS(pad_for_layer(5), OpError);
}

TEST_CASE("critic conv stack preserves sequence length for random lengths") {
  RandomStream rng = derive_stream(99, "lengths");
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t L = 2 + rng.below(260);
    CriticSpec spec;
    spec.input_length = L;
    ParamSet w = init_critic(spec, 17);
    Tensor x = Tensor::from_values({1, 1, L}, o::random_values(L, trial + 1));
    Tensor stacked = critic_conv_stack(spec, w, x);
    REQUIRE(stacked.shape() == Shape{1, spec.head_channels(), L});
  }
}

TEST_CASE("critic layer channel counts and head width follow the dense rule") {
  CriticSpec spec;
  spec.input_length = 100;
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(spec.conv_in_channels(i) == 1 + 8 * i);
    CHECK(spec.dilation(i) == (std::size_t{1} << i));
  }
  CHECK(spec.head_channels() == 41);
  CHECK(spec.fc_width() == 4100);
  ParamSet w = init_critic(spec, 3);
  CHECK(w.get("fc1.weight").shape() == Shape{4100, 4100});
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(w.get("conv" + std::to_string(i) + ".weight").shape() ==
          Shape{8, 1 + 8 * i, 2});
  }
}

TEST_CASE("all-zero critic outputs exactly zero") {
  CriticSpec spec;
  spec.input_length = 6;
  ParamSet w = zero_params(critic_param_specs(spec));
  CriticFeatureSet f{Tensor::from_values({1, 6}, o::random_values(6, 5, -3, 3)),
                     CriticFeatureVariant::Pred};
  CHECK(critic_forward(spec, w, f).item() == 0.0);
}

TEST_CASE("critic matches an independent straight-line recomputation") {
  CriticSpec spec;
  spec.input_length = 4;
  ParamSet w = init_critic(spec, 1234);
  const std::vector<double> input = o::random_values(4, 77, -1.5, 1.5);
  CriticFeatureSet f{Tensor::from_values({1, 4}, input),
                     CriticFeatureVariant::Pred};
  const double engine = critic_forward(spec, w, f).item();
  const double reference = straight_line_critic(spec, w, input);
  CHECK(engine == Catch::Approx(reference).margin(1e-12));
}

TEST_CASE("critic rejects a feature length mismatch") {
  CriticSpec spec;
  spec.input_length = 8;
  ParamSet w = init_critic(spec, 2);
  CriticFeatureSet f{Tensor::from_values({1, 9}, o::random_values(9, 6)),
                     CriticFeatureVariant::Pred};
  CHECK_THROWS_AS(critic_forward(spec, w, f), OpError);
}

TEST_CASE("critic output responds to its input for several seeds") {
  CriticSpec spec;
  spec.input_length = 12;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ParamSet w = init_critic(spec, seed);
    const double norm = critic_input_gradient_norm(
        spec, w, o::random_values(12, seed * 31 + 1, -1.0, 1.0));
    CHECK(norm > 0.0);
  }
}

TEST_CASE("memory estimate reproduces the full-scale blow-up") {
  const double bytes = estimate_critic_memory(70000, 4);
  CHECK(std::fabs(bytes - 32e12) / 32e12 < 0.05);
  CHECK(estimate_critic_memory(1, 4) == 6724.0);
  CHECK(estimate_critic_memory(100, 4) == 67240000.0);
  CHECK_THROWS_AS(estimate_critic_memory(0, 4), OpError);
  CHECK_THROWS_AS(estimate_critic_memory(10, -1), OpError);
}

TEST_CASE("memory estimate is exactly quadratic in the parameter count") {
  RandomStream rng = derive_stream(5, "quad");
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t p = 1 + static_cast<std::int64_t>(rng.below(1000000));
    CHECK(estimate_critic_memory(2 * p, 8) == 4.0 * estimate_critic_memory(p, 8));
  }
}

TEST_CASE("initialization is deterministic in (spec, scheme, seed)") {
  MlpSpec spec;
  const auto specs = param_specs(spec);
  ParamSet a = init_params(specs, InitScheme::Xavier, 42);
  ParamSet b = init_params(specs, InitScheme::Xavier, 42);
  ParamSet c = init_params(specs, InitScheme::Xavier, 43);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.entry(i).tensor.values() == b.entry(i).tensor.values());
  }
  CHECK(a.get("layer0.weight").values() != c.get("layer0.weight").values());
}

TEST_CASE("xavier_except_last zeroes every bias but the final layer's") {
  HighEndSpec spec;
  spec.growth_rate = 8;
  spec.height = 4;
  spec.width = 4;
  ParamSet p = init_params(param_specs(spec), InitScheme::XavierExceptLast, 7);
  for (const auto& e : p.entries()) {
    if (e.name.ends_with(".bias")) {
      const bool all_zero = std::all_of(e.tensor.values().begin(),
                                        e.tensor.values().end(),
                                        [](double v) { return v == 0.0; });
      if (e.name == "head.bias") {
        CHECK_FALSE(all_zero);
      } else {
        CHECK(all_zero);
      }
    }
  }
}

TEST_CASE("fanin_uniform respects the fan-in bound") {
  CriticSpec spec;
  spec.input_length = 4;
  ParamSet w = init_critic(spec, 11, InitScheme::FaninUniform);
  // conv1 takes 9 channels with kernel 2: bound sqrt(1/18)
  const double bound = std::sqrt(1.0 / 18.0);
  for (const double v : w.get("conv1.weight").values()) {
    CHECK(std::fabs(v) <= bound);
  }
  for (const double v : w.get("conv1.bias").values()) {
    CHECK(std::fabs(v) <= bound);
  }
  CHECK(parse_init_scheme("xavier") == InitScheme::Xavier);
  CHECK_THROWS_AS(parse_init_scheme("kaiming"), OpError);
}

TEST_CASE("mlp with zero head gives a uniform softmax") {
  MlpSpec spec;
  spec.input_dim = 6;
  spec.hidden = {10};
  spec.num_classes = 4;
  ParamSet p = init_params(param_specs(spec), InitScheme::Xavier, 3);
  p = p.with("head.weight", Tensor::zeros({4, 10}));
  p = p.with("head.bias", Tensor::zeros({4}));
  RunningStats stats = init_running_stats(MlpSpec{spec});
  Tensor x = Tensor::from_values({2, 6}, o::random_values(12, 9));
  Tensor probs = ops::softmax(forward(spec, p, x, stats));
  for (const double v : probs.values()) CHECK(v == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("lowend accepts a batch of one and matches its batched output") {
  LowEndSpec spec;
  spec.height = 14;
  spec.width = 14;
  ParamSet p = init_params(param_specs(spec), InitScheme::Xavier, 21);
  RunningStats stats = init_running_stats(ModelSpec{spec});
  // random running statistics, not the initial ones
  for (auto& e : stats.mutable_entries()) {
    for (auto& m : e.mean) m = 0.1;
    for (auto& v : e.var) v = 1.7;
  }
  const std::size_t n = 7, d = 14 * 14;
  std::vector<double> batch = o::random_values(n * d, 31);
  Tensor xb = Tensor::from_values({n, 1, 14, 14}, std::vector<double>(batch));
  Tensor yb = forward(spec, p, xb, stats);
  REQUIRE(yb.shape() == Shape{n, 5});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> one(batch.begin() + i * d, batch.begin() + (i + 1) * d);
    Tensor x1 = Tensor::from_values({1, 1, 14, 14}, std::move(one));
    Tensor y1 = forward(spec, p, x1, stats);
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(std::fabs(y1[c] - yb[i * 5 + c]) <= 1e-12);
    }
  }
}

TEST_CASE("forward passes are pure functions of parameters and input") {
  MlpSpec spec;
  ParamSet p = init_params(param_specs(spec), InitScheme::Xavier, 5);
  RunningStats stats = init_running_stats(ModelSpec{spec});
  Tensor x = Tensor::from_values({3, 16}, o::random_values(48, 55));
  Tensor y1 = forward(spec, p, x, stats);
  Tensor y2 = forward(spec, p, x, stats);
  CHECK(y1.values() == y2.values());
}

TEST_CASE("lowend rejects a wrongly shaped input") {
  LowEndSpec spec;
  ParamSet p = init_params(param_specs(spec), InitScheme::Xavier, 5);
  RunningStats stats = init_running_stats(ModelSpec{spec});
  Tensor bad = Tensor::from_values({2, 1, 7, 7}, o::random_values(98, 8));
  CHECK_THROWS_AS(forward(spec, p, bad, stats), OpError);
}

TEST_CASE("highend adapted partition is the last unit plus the head") {
  HighEndSpec spec;
  spec.growth_rate = 8;
  spec.height = 4;
  spec.width = 4;
  ParamSet p = init_params(param_specs(spec), InitScheme::XavierExceptLast, 1);
  std::set<std::string> adapted;
  for (const std::string& n : p.names_in(Partition::Adapted)) {
    adapted.insert(n);
  }
  for (const std::string& n : adapted) {
    const bool expected = n.starts_with("stage1.unit1.") || n.starts_with("head.");
    CHECK(expected);
  }
  // every last-unit and head entry really is adapted
  for (const auto& e : p.entries()) {
    if (e.name.starts_with("stage1.unit1.") || e.name.starts_with("head.")) {
      CHECK(adapted.count(e.name) == 1);
    }
  }
  // partitions are disjoint and cover everything
  const auto shared = p.names_in(Partition::Shared);
  CHECK(adapted.size() + shared.size() == p.size());
  for (const std::string& n : shared) CHECK(adapted.count(n) == 0);
}

TEST_CASE("dense stages grow channels by one growth rate per unit") {
  HighEndSpec spec;
  spec.growth_rate = 8;
  spec.height = 4;
  spec.width = 4;
  ParamSet p = init_params(param_specs(spec), InitScheme::XavierExceptLast, 1);
  // stage input is the stem (2k); after two units the transition sees 2k+2k.
  CHECK(p.get("transition.conv.weight").shape()[1] ==
        2 * spec.growth_rate + 2 * spec.growth_rate);
  // second stage enters with compressed channels and again adds 2k.
  const std::size_t compressed = 2 * spec.growth_rate;
  CHECK(p.get("head.weight").shape()[1] ==
        compressed + 2 * spec.growth_rate);
}

TEST_CASE("tiny highend forward produces finite logits of the right shape") {
  HighEndSpec spec;
  spec.growth_rate = 8;
  spec.height = 4;
  spec.width = 4;
  spec.num_classes = 3;
  ParamSet p = init_params(param_specs(spec), InitScheme::XavierExceptLast, 9);
  RunningStats stats = init_running_stats(ModelSpec{spec});
  Tensor x = Tensor::from_values({2, 1, 4, 4}, o::random_values(32, 13));
  Tensor y = forward(spec, p, x, stats);
  REQUIRE(y.shape() == Shape{2, 3});
  for (const double v : y.values()) CHECK(std::isfinite(v));
}

TEST_CASE("batch statistics collection feeds the running averages") {
  MlpSpec spec;
  spec.input_dim = 4;
  spec.hidden = {6};
  ParamSet p = init_params(param_specs(spec), InitScheme::Xavier, 2);
  RunningStats stats = init_running_stats(ModelSpec{spec});
  BatchStats collect;
  Tensor x = Tensor::from_values({5, 4}, o::random_values(20, 3, 1.0, 2.0));
  forward(spec, p, x, stats, &collect);
  CHECK_FALSE(collect.empty());
  const auto before = stats.at("norm0").mean;
  collect.fold_into(stats);
  CHECK(stats.at("norm0").mean != before);
}
