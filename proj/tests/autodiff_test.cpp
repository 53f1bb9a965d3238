#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "metacritic/autodiff.hpp"
#include "metacritic/ops.hpp"
#include "oracles.hpp"

using namespace metacritic;
namespace o = oracles;

TEST_CASE("relu clamps negatives") {
  Tensor x = Tensor::from_values({3}, {-1.0, 0.0, 2.0});
  Tensor y = ops::relu(x);
  CHECK(y.values() == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("softmax of equal logits is uniform and sums to one") {
  Tensor x = Tensor::from_values({1, 5}, {0, 0, 0, 0, 0});
  Tensor y = ops::softmax(x);
  double total = 0.0;
  for (const double v : y.values()) {
    CHECK(v == Catch::Approx(0.2).margin(1e-15));
    total += v;
  }
  CHECK(total == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("softmax rows are non-negative and normalized at random points") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor x = Tensor::from_values({4, 7}, o::random_values(28, seed, -30.0, 30.0));
    Tensor y = ops::softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(y[r * 7 + c] >= 0.0);
        total += y[r * 7 + c];
      }
      CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("conv1d output length follows the sliding-window formula") {
  // floor((L + pad_l + pad_r - dilation*(k-1) - 1) / stride) + 1, computed
  // here independently of the implementation.
  const std::size_t L = 100, k = 2, dilation = 4, pad = 2, stride = 1;
  const std::size_t expected =
      (L + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  CHECK(expected == 100);

  Tensor x = Tensor::from_values({1, 1, L}, o::random_values(L, 3));
  Tensor w = Tensor::from_values({1, 1, k}, {0.5, -0.25});
  Tensor y = ops::conv1d(x, w, std::nullopt, {stride, dilation, pad, pad});
  REQUIRE(y.shape() == Shape{1, 1, expected});
}

TEST_CASE("conv1d values match a plain sliding-window loop") {
  const std::size_t B = 2, Cin = 3, L = 9, Cout = 2, K = 2;
  const std::size_t dilation = 2, pad_l = 1, pad_r = 2, stride = 2;
  Tensor x = Tensor::from_values({B, Cin, L}, o::random_values(B * Cin * L, 11));
  Tensor w = Tensor::from_values({Cout, Cin, K}, o::random_values(Cout * Cin * K, 12));
  Tensor b = Tensor::from_values({Cout}, o::random_values(Cout, 13));
  Tensor y = ops::conv1d(x, w, b, {stride, dilation, pad_l, pad_r});

  const std::size_t out_len = (L + pad_l + pad_r - dilation * (K - 1) - 1) / stride + 1;
  REQUIRE(y.shape() == Shape{B, Cout, out_len});
  for (std::size_t bb = 0; bb < B; ++bb)
    for (std::size_t oc = 0; oc < Cout; ++oc)
      for (std::size_t t = 0; t < out_len; ++t) {
        double acc = b[oc];
        for (std::size_t c = 0; c < Cin; ++c)
          for (std::size_t kk = 0; kk < K; ++kk) {
            const std::int64_t pos =
                static_cast<std::int64_t>(t * stride + kk * dilation) -
                static_cast<std::int64_t>(pad_l);
            if (pos < 0 || pos >= static_cast<std::int64_t>(L)) continue;
            acc += x[(bb * Cin + c) * L + pos] * w[(oc * Cin + c) * K + kk];
          }
        CHECK(y[(bb * Cout + oc) * out_len + t] == Catch::Approx(acc).margin(1e-12));
      }
}

TEST_CASE("backward of sum gives ones") {
  Tensor theta = Tensor::leaf({3}, {4.0, -1.0, 0.5});
  GradMap g = backward(ops::sum(theta), {theta});
  CHECK(g.get(theta).values() == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("backward of half squared norm returns the point itself") {
  Tensor theta = Tensor::leaf({2}, {2.0, -1.0});
  Tensor loss = ops::scale(ops::sum(ops::mul(theta, theta)), 0.5);
  GradMap g = backward(loss, {theta});
  CHECK(g.get(theta)[0] == Catch::Approx(2.0));
  CHECK(g.get(theta)[1] == Catch::Approx(-1.0));
}

TEST_CASE("parameter off every path to the loss has exactly zero gradient") {
  Tensor used = Tensor::leaf({2}, {1.0, 2.0});
  Tensor unused = Tensor::leaf({2}, {3.0, 4.0});
  GradMap g = backward(ops::sum(used), {used, unused});
  CHECK(g.get(unused).values() == std::vector<double>{0.0, 0.0});
  CHECK_FALSE(g.contains(unused));
}

TEST_CASE("backward rejects a non-scalar root") {
  Tensor theta = Tensor::leaf({2}, {1.0, 2.0});
  CHECK_THROWS_AS(backward(ops::mul(theta, theta), {theta}), OpError);
}

TEST_CASE("constant tensors act as constants") {
  Tensor c = Tensor::from_values({2}, {5.0, 6.0});
  GradMap g = backward(ops::sum(c), {c});
  CHECK(g.get(c).values() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("shape mismatches are rejected with the op named") {
  Tensor a = Tensor::from_values({2, 3}, o::random_values(6, 1));
  Tensor b = Tensor::from_values({4, 5}, o::random_values(20, 2));
  CHECK_THROWS_WITH(ops::matmul(a, b),
                    Catch::Matchers::ContainsSubstring("matmul"));
  CHECK_THROWS_AS(ops::matmul(a, b), OpError);
  Tensor c = Tensor::from_values({3}, {1, 2, 3});
  Tensor d = Tensor::from_values({4}, {1, 2, 3, 4});
  CHECK_THROWS_AS(ops::add(c, d), OpError);
}

// ---------------------------------------------------------------------------
// First-order gradient checks for every primitive
// ---------------------------------------------------------------------------

namespace {

double check1(const std::function<Tensor(const Tensor&)>& fn, Tensor x,
              double step = 1e-5) {
  ParamSet at;
  at.add("x", std::move(x));
  return o::gradcheck(
      [&](const ParamSet& p) { return o::probe(fn(p.get("x"))); }, at, step);
}

double check2(const std::function<Tensor(const Tensor&, const Tensor&)>& fn,
              Tensor a, Tensor b, double step = 1e-5) {
  ParamSet at;
  at.add("a", std::move(a));
  at.add("b", std::move(b));
  return o::gradcheck(
      [&](const ParamSet& p) { return o::probe(fn(p.get("a"), p.get("b"))); },
      at, step);
}

}  // namespace

TEST_CASE("elementwise primitive gradients match central differences") {
  const double tol = 1e-6;
  CHECK(check2([](auto a, auto b) { return ops::add(a, b); },
               o::random_leaf({3, 4}, 1), o::random_leaf({3, 4}, 2)) < tol);
  CHECK(check2([](auto a, auto b) { return ops::add(a, b); },
               o::random_leaf({3, 4}, 3), o::random_leaf({4}, 4)) < tol);
  CHECK(check2([](auto a, auto b) { return ops::sub(a, b); },
               o::random_leaf({2, 3}, 5), o::random_leaf({1, 3}, 6)) < tol);
  CHECK(check2([](auto a, auto b) { return ops::mul(a, b); },
               o::random_leaf({2, 5}, 7), o::random_leaf({2, 5}, 8)) < tol);
  CHECK(check2([](auto a, auto b) { return ops::mul(a, b); },
               o::random_leaf({2, 5}, 9), o::random_leaf({1}, 10)) < tol);
  CHECK(check1([](auto x) { return ops::neg(x); }, o::random_leaf({4}, 11)) < tol);
  CHECK(check1([](auto x) { return ops::scale(x, -2.5); },
               o::random_leaf({4}, 12)) < tol);
  CHECK(check1([](auto x) { return ops::add_scalar(x, 3.0); },
               o::random_leaf({4}, 13)) < tol);
  CHECK(check1([](auto x) { return ops::reciprocal(x); },
               Tensor::leaf({4}, {0.5, 1.5, -2.0, -0.7})) < tol);
  CHECK(check1([](auto x) { return ops::exp(x); }, o::random_leaf({4}, 14)) < tol);
  CHECK(check1([](auto x) { return ops::log(x); },
               o::random_leaf({4}, 15, 0.2, 2.0)) < tol);
  CHECK(check1([](auto x) { return ops::sqrt(x); },
               o::random_leaf({4}, 16, 0.2, 2.0)) < tol);
  CHECK(check1([](auto x) { return ops::sigmoid(x); },
               o::random_leaf({6}, 17, -2.0, 2.0)) < tol);
}

TEST_CASE("relu gradient matches central differences away from the kink") {
  Tensor x = Tensor::leaf({8}, o::random_values_off_zero(8, 21, 1e-3));
  CHECK(check1([](auto t) { return ops::relu(t); }, x, 1e-6) < 1e-6);
}

TEST_CASE("linear algebra gradients match central differences") {
  const double tol = 1e-6;
  CHECK(check2([](auto a, auto b) { return ops::matmul(a, b); },
               o::random_leaf({3, 4}, 22), o::random_leaf({4, 2}, 23)) < tol);
  CHECK(check1([](auto x) { return ops::transpose(x); },
               o::random_leaf({3, 5}, 24)) < tol);
  CHECK(check2([](auto a, auto b) { return ops::matmul_bt(a, b); },
               o::random_leaf({3, 4}, 25), o::random_leaf({5, 4}, 26)) < tol);
  CHECK(check2([](auto a, auto b) { return ops::matmul_ta(a, b); },
               o::random_leaf({4, 3}, 27), o::random_leaf({4, 5}, 28)) < tol);
}

TEST_CASE("transposed matmul variants agree with explicit transposition") {
  Tensor a = o::random_leaf({3, 4}, 71);
  Tensor b = o::random_leaf({5, 4}, 72);
  Tensor direct = ops::matmul_bt(a, b);
  Tensor via_transpose = ops::matmul(a, ops::transpose(b));
  CHECK(direct.values() == via_transpose.values());

  Tensor c = o::random_leaf({4, 3}, 73);
  Tensor d = o::random_leaf({4, 5}, 74);
  CHECK(ops::matmul_ta(c, d).values() ==
        ops::matmul(ops::transpose(c), d).values());
}

TEST_CASE("pruned backward still reaches parameters through gradients of "
          "gradients") {
  // The inner gradient is computed with respect to x only; W enters the
  // outer quantity purely through the retained gradient expressions.
  Tensor x = o::random_leaf({1, 3}, 81);
  Tensor w = o::random_leaf({3, 3}, 82);
  Tensor y = ops::sum(ops::mul(ops::matmul(x, w), ops::matmul(x, w)));
  GradMap inner = backward(y, {x}, /*retain=*/true);
  Tensor probe = o::probe(inner.get(x), 83);
  GradMap outer = backward(probe, {w});
  // finite differences of the composed map d(probe)/d(w)
  ParamSet at;
  at.add("w", w);
  const double err = o::gradcheck(
      [&](const ParamSet& p) {
        Tensor yy = ops::sum(ops::mul(ops::matmul(x, p.get("w")),
                                      ops::matmul(x, p.get("w"))));
        GradMap gi = backward(yy, {x}, true);
        return o::probe(gi.get(x), 83);
      },
      at, 1e-5);
  CHECK(err < 1e-6);
  CHECK(outer.contains(w));
}

TEST_CASE("softmax family gradients match central differences") {
  const double tol = 1e-6;
  CHECK(check1([](auto x) { return ops::softmax(x); },
               o::random_leaf({3, 5}, 25, -2.0, 2.0)) < tol);
  CHECK(check1([](auto x) { return ops::log_softmax(x); },
               o::random_leaf({3, 5}, 26, -2.0, 2.0)) < tol);
  const std::vector<std::int64_t> labels{1, 0, 3};
  CHECK(check1([&](auto x) { return ops::nll_loss(x, labels); },
               o::random_leaf({3, 4}, 27, -2.0, 2.0)) < tol);
  CHECK(check2([](auto a, auto b) { return ops::mse_loss(a, b); },
               o::random_leaf({3, 4}, 28), o::random_leaf({3, 4}, 29)) < tol);
}

TEST_CASE("reduction and reshaping gradients match central differences") {
  const double tol = 1e-6;
  CHECK(check1([](auto x) { return ops::sum(x); }, o::random_leaf({3, 4}, 30)) < tol);
  CHECK(check1([](auto x) { return ops::mean(x); }, o::random_leaf({7}, 31)) < tol);
  CHECK(check1([](auto x) { return ops::sum_axis(x, 1, true); },
               o::random_leaf({3, 4, 2}, 32)) < tol);
  CHECK(check1([](auto x) { return ops::sum_axis(x, 0, false); },
               o::random_leaf({3, 4}, 33)) < tol);
  CHECK(check1([](auto x) { return ops::broadcast_to(x, {4, 3, 2}); },
               o::random_leaf({3, 1}, 34)) < tol);
  CHECK(check1([](auto x) { return ops::sum_to_shape(x, {1, 4}); },
               o::random_leaf({3, 4}, 35)) < tol);
  CHECK(check1([](auto x) { return ops::reshape(x, {2, 6}); },
               o::random_leaf({3, 4}, 36)) < tol);
  CHECK(check1([](auto x) { return ops::slice_axis(x, 1, 1, 2); },
               o::random_leaf({3, 4}, 37)) < tol);
  CHECK(check1([](auto x) { return ops::pad_axis(x, 0, 2, 1); },
               o::random_leaf({3, 4}, 38)) < tol);
  CHECK(check2([](auto a, auto b) { return ops::concat({a, b}, 1); },
               o::random_leaf({2, 3}, 39), o::random_leaf({2, 5}, 40)) < tol);
}

TEST_CASE("gather and scatter gradients match central differences") {
  const double tol = 1e-6;
  const std::vector<std::int64_t> idx{3, -1, 0, 0, 5, -1};
  CHECK(check1([&](auto x) { return ops::gather_pad(x, idx, {2, 3}); },
               o::random_leaf({6}, 41)) < tol);
  CHECK(check1([&](auto x) { return ops::scatter_pad(x, idx, {7}); },
               o::random_leaf({6}, 42)) < tol);
}

TEST_CASE("convolution and pooling gradients match central differences") {
  const double tol = 1e-6;
  CHECK(check2(
            [](auto x, auto w) {
              return ops::conv1d(x, w, std::nullopt, {1, 2, 1, 1});
            },
            o::random_leaf({2, 2, 6}, 43), o::random_leaf({3, 2, 2}, 44)) < tol);
  CHECK(check2(
            [](auto x, auto w) { return ops::conv2d(x, w, std::nullopt, {1, 1}); },
            o::random_leaf({2, 2, 5, 5}, 45), o::random_leaf({3, 2, 3, 3}, 46)) <
        tol);
  CHECK(check1([](auto x) { return ops::max_pool2d(x, 2, 2); },
               o::random_leaf({1, 2, 4, 4}, 47)) < tol);
  CHECK(check1([](auto x) { return ops::avg_pool2d(x, 2, 2); },
               o::random_leaf({1, 2, 5, 5}, 48)) < tol);
  CHECK(check1([](auto x) { return ops::global_avg_pool(x); },
               o::random_leaf({2, 3, 4, 4}, 49)) < tol);
}

TEST_CASE("running-stats normalization gradients match central differences") {
  Tensor mean = Tensor::from_values({3}, {0.1, -0.2, 0.3});
  Tensor var = Tensor::from_values({3}, {0.9, 1.1, 0.5});
  ParamSet at;
  at.add("x", o::random_leaf({2, 3, 4}, 50));
  at.add("gamma", o::random_leaf({3}, 51, 0.5, 1.5));
  at.add("beta", o::random_leaf({3}, 52));
  const double err = o::gradcheck(
      [&](const ParamSet& p) {
        return o::probe(ops::batch_norm_running(p.get("x"), p.get("gamma"),
                                                p.get("beta"), mean, var));
      },
      at);
  CHECK(err < 1e-6);
}

// ---------------------------------------------------------------------------
// Second-order: differentiate through a gradient-descent update
// ---------------------------------------------------------------------------

TEST_CASE("gradient through an inner gradient step matches finite differences") {
  // f(theta) = g(theta - alpha * grad h(theta)) with polynomial g and h.
  const double alpha = 0.3;
  const Tensor c = Tensor::from_values({4}, {0.5, -1.0, 2.0, 0.7});
  const Tensor d = Tensor::from_values({4}, {1.0, 0.2, -0.5, 0.3});
  const Tensor a = Tensor::from_values({4}, {0.8, -0.3, 0.4, 1.1});

  const auto f = [&](const ParamSet& p) {
    const Tensor theta = p.get("theta");
    // h = sum(c * theta^2 + d * theta)
    Tensor h = ops::sum(ops::add(ops::mul(c, ops::mul(theta, theta)),
                                 ops::mul(d, theta)));
    GradMap gh = backward(h, {theta}, /*retain=*/true);
    Tensor stepped = ops::sub(theta, ops::scale(gh.get(theta), alpha));
    // g = sum(a * stepped^3)
    return ops::sum(
        ops::mul(a, ops::mul(stepped, ops::mul(stepped, stepped))));
  };

  ParamSet at;
  at.add("theta", o::random_leaf({4}, 60, -0.8, 0.8));
  CHECK(o::gradcheck(f, at, 1e-5) < 1e-5);

  // Analytic cross-check on one coordinate: with everything diagonal,
  // f_i(t) = a_i * (t - alpha*(2 c_i t + d_i))^3, so
  // f_i'(t) = 3 a_i (t(1 - 2 alpha c_i) - alpha d_i)^2 (1 - 2 alpha c_i).
  const Tensor theta = at.get("theta");
  GradMap g = backward(f(at), {theta});
  for (std::size_t i = 0; i < 4; ++i) {
    const double t = theta[i];
    const double m = 1.0 - 2.0 * alpha * c[i];
    const double s = t * m - alpha * d[i];
    const double expected = 3.0 * a[i] * s * s * m;
    CHECK(g.get(theta)[i] == Catch::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("retained backward of backward produces correct second derivatives") {
  // y = sum(x^3): dy/dx = 3x^2, d(sum(dy/dx))/dx = 6x.
  Tensor x = Tensor::leaf({3}, {1.5, -2.0, 0.5});
  Tensor y = ops::sum(ops::mul(x, ops::mul(x, x)));
  GradMap first = backward(y, {x}, /*retain=*/true);
  Tensor gsum = ops::sum(first.get(x));
  GradMap second = backward(gsum, {x});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(second.get(x)[i] == Catch::Approx(6.0 * x[i]).epsilon(1e-12));
  }
}

TEST_CASE("finite difference check reports zero error for a constant") {
  ParamSet at;
  at.add("theta", o::random_leaf({3}, 70));
  const auto report = finite_difference_check(
      [](const ParamSet&) { return Tensor::scalar(4.2); }, at, 1e-5);
  CHECK(report.max_rel_err == 0.0);
  REQUIRE(report.per_param.size() == 1);
  CHECK(report.per_param[0].name == "theta");
}

TEST_CASE("finite difference check on half squared norm is accurate") {
  ParamSet at;
  at.add("theta", o::random_leaf({5}, 71));
  const auto report = finite_difference_check(
      [](const ParamSet& p) {
        const Tensor t = p.get("theta");
        return ops::scale(ops::sum(ops::mul(t, t)), 0.5);
      },
      at, 1e-5);
  CHECK(report.max_rel_err <= 1e-7);
}

TEST_CASE("finite difference check rejects non-finite values") {
  ParamSet at;
  at.add("theta", Tensor::leaf({1}, {0.0}));
  CHECK_THROWS_AS(finite_difference_check(
                      [](const ParamSet& p) {
                        return ops::log(p.get("theta"));  // log(+-eps) fine, log(-) NaN
                      },
                      at, 1e-5),
                  OpError);
}

TEST_CASE("graphs stay acyclic under arbitrary op chains") {
  // Random chains of primitives must always admit a backward pass
  // (topological order exists).
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomStream rng = derive_stream(seed, "chain");
    Tensor x = o::random_leaf({3, 3}, seed + 100);
    Tensor t = x;
    for (int step = 0; step < 12; ++step) {
      switch (rng.below(5)) {
        case 0: t = ops::add(t, t); break;
        case 1: t = ops::mul(t, x); break;
        case 2: t = ops::sigmoid(t); break;
        case 3: t = ops::sub(ops::scale(t, 0.5), x); break;
        default: t = ops::matmul(t, ops::transpose(x)); break;
      }
    }
    GradMap g = backward(ops::mean(t), {x});
    for (const double v : g.get(x).values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("generic apply dispatches by op id") {
  Tensor a = Tensor::from_values({2}, {1.0, 2.0});
  Tensor b = Tensor::from_values({2}, {3.0, 5.0});
  CHECK(ops::apply(Op::Add, {a, b}).values() == std::vector<double>{4.0, 7.0});
  AttrMap attrs;
  attrs.set("shape", std::vector<std::int64_t>{2, 1});
  CHECK(ops::apply(Op::Reshape, {a}, attrs).shape() == Shape{2, 1});
  CHECK_THROWS_AS(ops::apply(Op::Matmul, {a}), OpError);
}
