#pragma once

#include <functional>
#include <string>
#include <vector>

#include "metacritic/autodiff.hpp"
#include "metacritic/metalearn.hpp"
#include "metacritic/rng.hpp"

namespace metacritic {

/// One gradient verification row: the op (or composite) checked, the worst
/// relative error against central finite differences, and its tolerance.
struct GradCheckRow {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-6;

  bool passed() const { return max_rel_err <= tolerance; }
};

namespace gradcheck_detail {

inline std::vector<double> uniform_values(std::size_t n, std::uint64_t seed,
                                          double lo, double hi) {
  RandomStream rng = derive_stream(seed, "gradcheck");
  std::vector<double> out(n);
  for (double& v : out) v = rng.uniform(lo, hi);
  return out;
}

inline std::vector<double> off_zero_values(std::size_t n, std::uint64_t seed) {
  RandomStream rng = derive_stream(seed, "gradcheck-offzero");
  std::vector<double> out(n);
  for (double& v : out) {
    const double mag = rng.uniform(1e-3, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return out;
}

inline Tensor rand_leaf(const Shape& shape, std::uint64_t seed,
                        double lo = -1.0, double hi = 1.0) {
  return Tensor::leaf(shape, uniform_values(numel_of(shape), seed, lo, hi));
}

inline Tensor to_scalar(const Tensor& t, std::uint64_t seed) {
  const Tensor weights = Tensor::from_values(
      t.shape(), uniform_values(t.numel(), seed ^ 0x51ED, -1.0, 1.0));
  return ops::sum(ops::mul(t, weights));
}

using OpFn = std::function<Tensor(const ParamSet&)>;

inline GradCheckRow check(const std::string& name, const OpFn& fn,
                          const ParamSet& at, double tolerance,
                          double step = 1e-5) {
  GradCheckRow row;
  row.name = name;
  row.tolerance = tolerance;
  row.max_rel_err = finite_difference_check(fn, at, step).max_rel_err;
  return row;
}

inline ParamSet one(const char* name, Tensor t) {
  ParamSet p;
  p.add(name, std::move(t));
  return p;
}

inline ParamSet two(Tensor a, Tensor b) {
  ParamSet p;
  p.add("a", std::move(a));
  p.add("b", std::move(b));
  return p;
}

}  // namespace gradcheck_detail

/// Per-primitive gradient checks at tolerance 1e-6.
inline std::vector<GradCheckRow> gradcheck_primitives() {
  namespace d = gradcheck_detail;
  using ops::apply;
  std::vector<GradCheckRow> rows;
  const auto check1 = [&](const std::string& name, auto fn, Tensor x,
                          double tol = 1e-6) {
    rows.push_back(d::check(
        name,
        [fn](const ParamSet& p) {
          return d::to_scalar(fn(p.get("x")), 17);
        },
        d::one("x", std::move(x)), tol));
  };
  const auto check2 = [&](const std::string& name, auto fn, Tensor a, Tensor b,
                          double tol = 1e-6) {
    rows.push_back(d::check(
        name,
        [fn](const ParamSet& p) {
          return d::to_scalar(fn(p.get("a"), p.get("b")), 19);
        },
        d::two(std::move(a), std::move(b)), tol));
  };

  check2("add", [](auto a, auto b) { return ops::add(a, b); },
         d::rand_leaf({3, 4}, 1), d::rand_leaf({3, 4}, 2));
  check2("add_broadcast", [](auto a, auto b) { return ops::add(a, b); },
         d::rand_leaf({3, 4}, 3), d::rand_leaf({4}, 4));
  check2("sub", [](auto a, auto b) { return ops::sub(a, b); },
         d::rand_leaf({2, 3}, 5), d::rand_leaf({1, 3}, 6));
  check2("mul", [](auto a, auto b) { return ops::mul(a, b); },
         d::rand_leaf({2, 5}, 7), d::rand_leaf({2, 5}, 8));
  check1("neg", [](auto x) { return ops::neg(x); }, d::rand_leaf({4}, 9));
  check1("scale", [](auto x) { return ops::scale(x, -1.7); },
         d::rand_leaf({4}, 10));
  check1("add_scalar", [](auto x) { return ops::add_scalar(x, 2.0); },
         d::rand_leaf({4}, 11));
  check1("reciprocal", [](auto x) { return ops::reciprocal(x); },
         Tensor::leaf({4}, d::off_zero_values(4, 12)));
  check1("exp", [](auto x) { return ops::exp(x); }, d::rand_leaf({4}, 13));
  check1("log", [](auto x) { return ops::log(x); },
         d::rand_leaf({4}, 14, 0.2, 2.0));
  check1("sqrt", [](auto x) { return ops::sqrt(x); },
         d::rand_leaf({4}, 15, 0.2, 2.0));
  check1("relu", [](auto x) { return ops::relu(x); },
         Tensor::leaf({8}, d::off_zero_values(8, 16)), 1e-6);
  check1("sigmoid", [](auto x) { return ops::sigmoid(x); },
         d::rand_leaf({6}, 17, -2.0, 2.0));
  check2("matmul", [](auto a, auto b) { return ops::matmul(a, b); },
         d::rand_leaf({3, 4}, 18), d::rand_leaf({4, 2}, 19));
  check2("matmul_bt", [](auto a, auto b) { return ops::matmul_bt(a, b); },
         d::rand_leaf({3, 4}, 181), d::rand_leaf({2, 4}, 191));
  check2("matmul_ta", [](auto a, auto b) { return ops::matmul_ta(a, b); },
         d::rand_leaf({4, 3}, 182), d::rand_leaf({4, 2}, 192));
  check1("transpose", [](auto x) { return ops::transpose(x); },
         d::rand_leaf({3, 5}, 20));
  check1("softmax", [](auto x) { return ops::softmax(x); },
         d::rand_leaf({3, 5}, 21, -2.0, 2.0));
  check1("log_softmax", [](auto x) { return ops::log_softmax(x); },
         d::rand_leaf({3, 5}, 22, -2.0, 2.0));
  {
    const std::vector<std::int64_t> labels{1, 0, 3};
    check1("nll_loss", [labels](auto x) { return ops::nll_loss(x, labels); },
           d::rand_leaf({3, 4}, 23, -2.0, 2.0));
  }
  check2("mse_loss", [](auto a, auto b) { return ops::mse_loss(a, b); },
         d::rand_leaf({3, 4}, 24), d::rand_leaf({3, 4}, 25));
  check1("sum", [](auto x) { return ops::sum(x); }, d::rand_leaf({3, 4}, 26));
  check1("mean", [](auto x) { return ops::mean(x); }, d::rand_leaf({7}, 27));
  check1("sum_axis", [](auto x) { return ops::sum_axis(x, 1, true); },
         d::rand_leaf({3, 4, 2}, 28));
  check1("broadcast_to", [](auto x) { return ops::broadcast_to(x, {4, 3, 2}); },
         d::rand_leaf({3, 1}, 29));
  check1("sum_to_shape", [](auto x) { return ops::sum_to_shape(x, {1, 4}); },
         d::rand_leaf({3, 4}, 30));
  check1("reshape", [](auto x) { return ops::reshape(x, {2, 6}); },
         d::rand_leaf({3, 4}, 31));
  check2("concat", [](auto a, auto b) { return ops::concat({a, b}, 1); },
         d::rand_leaf({2, 3}, 32), d::rand_leaf({2, 5}, 33));
  check1("slice_axis", [](auto x) { return ops::slice_axis(x, 1, 1, 2); },
         d::rand_leaf({3, 4}, 34));
  check1("pad_axis", [](auto x) { return ops::pad_axis(x, 0, 2, 1); },
         d::rand_leaf({3, 4}, 35));
  {
    const std::vector<std::int64_t> idx{3, -1, 0, 0, 5, -1};
    check1("gather_pad",
           [idx](auto x) { return ops::gather_pad(x, idx, {2, 3}); },
           d::rand_leaf({6}, 36));
    check1("scatter_pad",
           [idx](auto x) { return ops::scatter_pad(x, idx, {7}); },
           d::rand_leaf({6}, 37));
  }
  check2("conv1d_dilated",
         [](auto x, auto w) {
           return ops::conv1d(x, w, std::nullopt, {1, 4, 2, 2});
         },
         d::rand_leaf({2, 2, 9}, 38), d::rand_leaf({3, 2, 2}, 39));
  check2("conv2d",
         [](auto x, auto w) { return ops::conv2d(x, w, std::nullopt, {1, 1}); },
         d::rand_leaf({2, 2, 5, 5}, 40), d::rand_leaf({3, 2, 3, 3}, 41));
  check1("max_pool2d", [](auto x) { return ops::max_pool2d(x, 2, 2); },
         d::rand_leaf({1, 2, 4, 4}, 42));
  check1("avg_pool2d", [](auto x) { return ops::avg_pool2d(x, 2, 2); },
         d::rand_leaf({1, 2, 5, 5}, 43));
  check1("global_avg_pool", [](auto x) { return ops::global_avg_pool(x); },
         d::rand_leaf({2, 3, 4, 4}, 44));
  {
    const Tensor mean = Tensor::from_values({3}, {0.1, -0.2, 0.3});
    const Tensor var = Tensor::from_values({3}, {0.9, 1.1, 0.5});
    ParamSet at;
    at.add("x", d::rand_leaf({2, 3, 4}, 45));
    at.add("gamma", d::rand_leaf({3}, 46, 0.5, 1.5));
    at.add("beta", d::rand_leaf({3}, 47));
    rows.push_back(d::check(
        "batch_norm_running",
        [mean, var](const ParamSet& p) {
          return d::to_scalar(
              ops::batch_norm_running(p.get("x"), p.get("gamma"),
                                      p.get("beta"), mean, var),
              23);
        },
        at, 1e-6));
  }
  return rows;
}

/// Exhaustive finite-difference verification of the composed outer loss of
/// the critic variant: gradients with respect to the base parameters, the
/// learned step sizes and every critic parameter, on small networks. The
/// per-coordinate tolerance is 1e-4.
inline std::vector<GradCheckRow> gradcheck_full_pipeline() {
  namespace d = gradcheck_detail;

  MetaConfig cfg;
  cfg.variant = MetaVariant::ScaPred;
  cfg.support_steps = 2;
  cfg.target_steps = 1;
  cfg.meta_batch = 1;
  cfg.first_order_epochs = 0;
  // Large inner step sizes condition the check point: they amplify the
  // second-order signal into the critic so no gradient coordinate falls
  // below what central differences can resolve in double precision.
  cfg.lslr_init = 0.3;
  cfg.finalize();

  const std::size_t way = 2, query = 1, dim = 2;
  CriticSpec cspec;
  cspec.input_length = way * query * way;  // 4

  // base model: linear classifier with 6 parameters
  ParamSet theta;
  theta.add("w", d::rand_leaf({way, dim}, 101, -0.5, 0.5));
  theta.add("b", d::rand_leaf({way}, 102, -0.1, 0.1));

  GaussianBlobsConfig blobs;
  blobs.dimension = dim;
  blobs.noise_scale = 0.2;
  TaskFamily fam = TaskFamily::gaussian_blobs(blobs, {4, 2, 2}, 303);
  const Episode ep = fam.sample_episode(MetaSplit::Train, 0, way, 1, query);

  MetaState base = make_meta_state(theta, cfg, &cspec, 404);

  const auto fwd = [](const ParamSet& p, const Tensor& x) {
    return ops::linear(x, p.get("w"), p.get("b"));
  };
  const auto outer_of = [&](const MetaState& state) {
    InnerTrajectory traj = detail::run_inner_loops(fwd, state, cfg, &cspec, ep,
                                                   /*create_graph=*/true);
    return outer_loss_sca(fwd, traj, ep.x_target, ep.y_target,
                          cfg.support_weights, cfg.target_weights, state.critic,
                          cfg.multi_step_critic_loss);
  };

  std::vector<GradCheckRow> rows;
  rows.push_back(d::check(
      "sca_outer_loss/d_theta",
      [&](const ParamSet& p) {
        MetaState probe = base;
        probe.theta = p;
        return outer_of(probe);
      },
      base.theta, 1e-4, 3e-5));

  ParamSet lslr_params;
  {
    std::size_t idx = 0;
    for (const Tensor& t : base.lslr.tensors()) {
      lslr_params.add("s" + std::to_string(idx++), t);
    }
  }
  rows.push_back(d::check(
      "sca_outer_loss/d_step_sizes",
      [&](const ParamSet& p) {
        MetaState probe = base;
        std::vector<Tensor> entries;
        for (std::size_t i = 0; i < p.size(); ++i) {
          entries.push_back(p.get("s" + std::to_string(i)));
        }
        probe.lslr.replace_all(std::move(entries));
        return outer_of(probe);
      },
      lslr_params, 1e-4, 3e-5));

  rows.push_back(d::check(
      "sca_outer_loss/d_critic",
      [&](const ParamSet& p) {
        MetaState probe = base;
        probe.critic = p;
        return outer_of(probe);
      },
      base.critic, 1e-4, 3e-5));
  return rows;
}

inline std::vector<GradCheckRow> run_gradcheck_suite() {
  std::vector<GradCheckRow> rows = gradcheck_primitives();
  for (GradCheckRow& row : gradcheck_full_pipeline()) {
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace metacritic
