#include <cmath>
#include <doctest.h>

#include "steerloop/errors.hpp"
#include "steerloop/numerics.hpp"

using namespace steerloop;

namespace {

MlpParams random_mlp(const std::vector<int>& dims, Activation act, uint64_t seed,
                     bool activate_output = false) {
  RandomSource rng(seed);
  return make_mlp(dims, act, rng, activate_output);
}

Vec random_vec(int n, RandomSource& rng) {
  Vec v(n);
  for (double& x : v) x = rng.gaussian();
  return v;
}

}  // namespace

TEST_CASE("mlp_forward: zero weights yield the final bias") {
  MlpParams p = random_mlp({3, 4, 2}, Activation::Tanh, 7);
  for (Mat& w : p.weights) std::fill(w.a.begin(), w.a.end(), 0.0);
  std::fill(p.biases[0].begin(), p.biases[0].end(), 0.0);
  p.biases[1] = {0.25, -1.5};
  const Vec out = mlp_forward(p, {1.0, -2.0, 3.0});
  CHECK(out[0] == doctest::Approx(0.25));
  CHECK(out[1] == doctest::Approx(-1.5));
}

TEST_CASE("mlp_forward: identity single layer") {
  MlpParams p;
  p.activation = Activation::Tanh;
  Mat w(3, 3);
  for (int i = 0; i < 3; ++i) w.at(i, i) = 1.0;
  p.weights.push_back(w);
  p.biases.emplace_back(3, 0.0);
  const Vec v = {0.5, -1.25, 2.0};
  const Vec out = mlp_forward(p, v);
  for (int i = 0; i < 3; ++i) CHECK(out[i] == v[i]);
}

TEST_CASE("mlp_forward: matches a hand evaluation on a 2-2-1 tanh net") {
  MlpParams p;
  p.activation = Activation::Tanh;
  Mat w1(2, 2);
  w1.at(0, 0) = 0.5;
  w1.at(0, 1) = -0.25;
  w1.at(1, 0) = 0.1;
  w1.at(1, 1) = 0.3;
  p.weights.push_back(w1);
  p.biases.push_back({0.1, -0.2});
  Mat w2(1, 2);
  w2.at(0, 0) = 0.7;
  w2.at(0, 1) = -0.4;
  p.weights.push_back(w2);
  p.biases.push_back({0.05});
  const Vec out = mlp_forward(p, {0.3, -0.6});
  // Layer-by-layer evaluation done independently: pre = (0.4, -0.35).
  CHECK(out[0] == doctest::Approx(0.45051449131319027).epsilon(1e-12));
}

TEST_CASE("mlp_forward: dimension mismatch is a configuration error") {
  MlpParams p = random_mlp({3, 2}, Activation::Relu, 1);
  CHECK_THROWS_AS(mlp_forward(p, {1.0, 2.0}), ConfigError);
}

TEST_CASE("mlp_backward: zero output grad gives zero gradients") {
  MlpParams p = random_mlp({3, 5, 2}, Activation::Tanh, 11);
  MlpCache cache;
  mlp_forward(p, {0.1, 0.2, 0.3}, &cache);
  MlpGrads g = make_zero_grads(p);
  mlp_backward(p, cache, {0.0, 0.0}, g);
  for (const Mat& w : g.weights)
    for (double x : w.a) CHECK(x == 0.0);
}

TEST_CASE("mlp_backward: linear scalar layer, grad 1 -> weight grad equals input") {
  MlpParams p;
  p.activation = Activation::Relu;
  Mat w(1, 3);
  w.at(0, 0) = 0.3;
  w.at(0, 1) = -0.2;
  w.at(0, 2) = 0.9;
  p.weights.push_back(w);
  p.biases.emplace_back(1, 0.0);
  MlpCache cache;
  const Vec input = {1.5, -2.0, 0.25};
  mlp_forward(p, input, &cache);
  MlpGrads g = make_zero_grads(p);
  mlp_backward(p, cache, {1.0}, g);
  for (int i = 0; i < 3; ++i) CHECK(g.weights[0].a[i] == doctest::Approx(input[i]));
  CHECK(g.biases[0][0] == doctest::Approx(1.0));
}

TEST_CASE("mlp_backward: matches central finite differences on random nets") {
  RandomSource rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    RandomSource trial_rng = rng.split("trial", trial);
    const Activation act = trial % 2 == 0 ? Activation::Tanh : Activation::Relu;
    MlpParams p = make_mlp({3, 6, 4, 2}, act, trial_rng);
    const Vec input = random_vec(3, trial_rng);
    const Vec dout = random_vec(2, trial_rng);

    MlpCache cache;
    mlp_forward(p, input, &cache);
    MlpGrads g = make_zero_grads(p);
    mlp_backward(p, cache, dout, g);

    auto f = [&]() {
      const Vec out = mlp_forward(p, input);
      return out[0] * dout[0] + out[1] * dout[1];
    };
    const double err = finite_diff_check(f, param_spans(p), grad_spans(g));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
  Vec params = {1.0, -2.0, 3.0};
  const Vec before = params;
  Vec grads(3, 0.0);
  AdamState st;
  adam_step(st, {std::span<double>(params)}, {std::span<const double>(grads)});
  adam_step(st, {std::span<double>(params)}, {std::span<const double>(grads)});
  for (int i = 0; i < 3; ++i) CHECK(params[i] == before[i]);
  CHECK(st.step == 2);
}

TEST_CASE("adam_step: first update magnitude is lr * sign(g)") {
  Vec params = {0.0, 0.0};
  Vec grads = {0.5, -2.0};
  AdamState st;
  st.lr = 0.1;
  adam_step(st, {std::span<double>(params)}, {std::span<const double>(grads)});
  CHECK(params[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(params[1] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("adam_step: identical seeds reproduce identical trajectories") {
  auto run = [](uint64_t seed) {
    RandomSource rng(seed);
    Vec params = random_vec(8, rng);
    AdamState st;
    st.lr = 3e-3;
    for (int i = 0; i < 50; ++i) {
      Vec grads = random_vec(8, rng);
      adam_step(st, {std::span<double>(params)}, {std::span<const double>(grads)});
    }
    return params;
  };
  const Vec a = run(99);
  const Vec b = run(99);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("log_softmax: uniform over 16") {
  const Vec out = log_softmax(Vec(16, 0.7));
  for (double x : out) CHECK(x == doctest::Approx(std::log(1.0 / 16.0)).epsilon(1e-14));
}

TEST_CASE("log_softmax: exact shift invariance for representable shifts") {
  RandomSource rng(5);
  Vec logits(9);
  for (double& x : logits) x = (rng.uniform_int(8192) - 4096) / 1024.0;
  for (double shift : {0.5, 2.0, 64.0}) {
    Vec shifted = logits;
    for (double& x : shifted) x += shift;
    const Vec a = log_softmax(logits);
    const Vec b = log_softmax(shifted);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("log_softmax: hand case (0, ln 3)") {
  const Vec out = log_softmax({0.0, std::log(3.0)});
  CHECK(out[0] == doctest::Approx(-1.3862943611198906).epsilon(1e-14));
  CHECK(out[1] == doctest::Approx(-0.2876820724517809).epsilon(1e-14));
}

TEST_CASE("log_softmax: exponentiates to a probability vector") {
  RandomSource rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec out = log_softmax(random_vec(12, rng));
    double sum = 0.0;
    for (double x : out) sum += std::exp(x);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("finite_diff_check: calculus oracle f(x) = x^2 at x = 3") {
  Vec x = {3.0};
  Vec grad = {6.0};
  auto f = [&]() { return x[0] * x[0]; };
  const double err =
      finite_diff_check(f, {std::span<double>(x)}, {std::span<const double>(grad)});
  CHECK(err < 1e-8);
}

TEST_CASE("finite_diff_check: constant function") {
  Vec x = {1.0, -2.0};
  Vec grad = {0.0, 0.0};
  auto f = [&]() { return 42.0; };
  const double err =
      finite_diff_check(f, {std::span<double>(x)}, {std::span<const double>(grad)});
  CHECK(err < 1e-10);
}

TEST_CASE("RandomSource: identical seeds give identical sequences") {
  RandomSource a(123), b(123);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  RandomSource c(123), d(123);
  for (int i = 0; i < 100; ++i) CHECK(c.gaussian() == d.gaussian());
}

TEST_CASE("RandomSource: children are independent of parent continuation") {
  RandomSource a(7);
  RandomSource child_before = a.split("x");
  for (int i = 0; i < 57; ++i) a.next_u64();
  RandomSource child_after = a.split("x");
  for (int i = 0; i < 100; ++i) CHECK(child_before.next_u64() == child_after.next_u64());
}

TEST_CASE("RandomSource: split streams are empirically uncorrelated") {
  RandomSource root(31337);
  RandomSource a = root.split("a");
  RandomSource b = root.split("b");
  const int n = 10000;
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.uniform();
    const double y = b.uniform();
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - sa / n * (sa / n)) * (sbb / n - sb / n * (sb / n)));
  CHECK(std::abs(corr) < 0.05);
}

TEST_CASE("RandomSource: uniform_int covers its range without bias artifacts") {
  RandomSource rng(5150);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[rng.uniform_int(7)];
  for (int c : counts) {
    CHECK(c > 0);
    // 3 standard errors around n/7
    CHECK(std::abs(c - n / 7.0) < 3.0 * std::sqrt(n * (1.0 / 7) * (6.0 / 7)));
  }
}

TEST_CASE("time_features: deterministic and t-sensitive") {
  const Vec a = time_features(10, 50, 16);
  const Vec b = time_features(10, 50, 16);
  const Vec c = time_features(11, 50, 16);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() == 16);
}
