#include <cmath>
#include <doctest.h>

#include "steerloop/denoiser.hpp"
#include "steerloop/errors.hpp"
#include "steerloop/schedule.hpp"
#include "support/test_util.hpp"

using namespace steerloop;
using namespace steerloop::testutil;

TEST_CASE("make_schedule: single step with alpha_bar_0 = 1") {
  const NoiseSchedule s = make_schedule(1, 0.1, 0.1, ScheduleKind::Linear);
  CHECK(s.alpha_bar_t(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.sigma_t(1) == 0.0);
  CHECK(s.alpha_bar_prev(1) == 1.0);
}

TEST_CASE("make_schedule: classic 1000-step profile matches a direct loop") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02, ScheduleKind::Linear);
  double bar = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0;
    bar *= 1.0 - beta;
  }
  CHECK(s.alpha_bar_t(1000) == doctest::Approx(bar).epsilon(1e-12));
  CHECK(s.alpha_bar_t(1000) == doctest::Approx(4.0358e-5).epsilon(1e-3));
}

TEST_CASE("make_schedule: recurrence and sigma identity hold for both kinds") {
  for (ScheduleKind kind : {ScheduleKind::Linear, ScheduleKind::Cosine}) {
    const NoiseSchedule s = make_schedule(37, 1e-3, 0.3, kind);
    for (int t = 1; t <= 37; ++t) {
      CHECK(s.alpha_bar_t(t) ==
            doctest::Approx(s.alpha_bar_prev(t) * s.alpha_t(t)).epsilon(1e-15));
      const double var = (1.0 - s.alpha_bar_prev(t)) / (1.0 - s.alpha_bar_t(t)) * s.beta_t(t);
      CHECK(s.sigma_t(t) * s.sigma_t(t) == doctest::Approx(var).epsilon(1e-12));
      CHECK(s.beta_t(t) > 0.0);
      CHECK(s.beta_t(t) < 1.0);
      if (t > 1) CHECK(s.alpha_bar_t(t) < s.alpha_bar_t(t - 1));
    }
  }
}

TEST_CASE("make_schedule: invalid bounds rejected") {
  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2, ScheduleKind::Linear), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2, ScheduleKind::Linear), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2, ScheduleKind::Linear), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 1.0, ScheduleKind::Linear), ConfigError);
}

TEST_CASE("forward_noise: plug-in cases") {
  const NoiseSchedule s = make_schedule(1, 0.75, 0.75, ScheduleKind::Linear);  // alpha_bar = 0.25
  const Point a = forward_noise({2.0, 0.0}, 1, {0.0, 0.0}, s);
  CHECK(a[0] == doctest::Approx(1.0));
  CHECK(a[1] == doctest::Approx(0.0));
  const Point b = forward_noise({0.0, 0.0}, 1, {1.0, -2.0}, s);
  CHECK(b[0] == doctest::Approx(std::sqrt(0.75) * 1.0));
  CHECK(b[1] == doctest::Approx(std::sqrt(0.75) * -2.0));
  CHECK_THROWS_AS(forward_noise({0, 0}, 2, {0, 0}, s), UsageError);
}

TEST_CASE("forward_noise: Monte Carlo marginal matches the closed form") {
  const NoiseSchedule s = make_schedule(50, 1e-3, 0.35, ScheduleKind::Linear);
  RandomSource rng(4242);
  const Point x0 = {2.0, -1.0};
  const int n = 100000;
  for (int t : {3, 17, 44}) {
    const double ab = s.alpha_bar_t(t);
    double m0 = 0, m1 = 0, v0 = 0, v1 = 0;
    for (int i = 0; i < n; ++i) {
      const Point x = forward_noise(x0, t, {rng.gaussian(), rng.gaussian()}, s);
      m0 += x[0];
      m1 += x[1];
      v0 += x[0] * x[0];
      v1 += x[1] * x[1];
    }
    m0 /= n;
    m1 /= n;
    v0 = v0 / n - m0 * m0;
    v1 = v1 / n - m1 * m1;
    const double tol = 3.0 * std::sqrt((1.0 - ab) / n);
    CHECK(std::abs(m0 - std::sqrt(ab) * x0[0]) < tol);
    CHECK(std::abs(m1 - std::sqrt(ab) * x0[1]) < tol);
    CHECK(std::abs(v0 - (1.0 - ab)) < 0.05 * (1.0 - ab));
    CHECK(std::abs(v1 - (1.0 - ab)) < 0.05 * (1.0 - ab));
  }
}

TEST_CASE("epsilon_loss_and_grad: oracle predictor gives zero loss and gradients") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(10, 1e-3, 0.3, ScheduleKind::Linear);
  const Point eps = {0.37, -0.81};
  const DenoiserParams p = constant_denoiser(vocab, 10, 2, eps);
  std::vector<EpsItem> batch;
  for (int t : {1, 4, 9})
    batch.push_back({{1.0, 2.0}, mode_query(vocab, 1, 2), t, eps});
  DenoiserGrads g = make_zero_grads(p);
  const double loss = epsilon_loss_and_grad(p, batch, s, &g);
  CHECK(loss == doctest::Approx(0.0));
  for (auto span : grad_spans(g))
    for (double x : span) CHECK(x == 0.0);
}

TEST_CASE("epsilon_loss_and_grad: single item, zero prediction, unit noise") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(10, 1e-3, 0.3, ScheduleKind::Linear);
  const DenoiserParams p = constant_denoiser(vocab, 10, 2, {0.0, 0.0});
  std::vector<EpsItem> batch = {{{0.5, -0.5}, mode_query(vocab, 0, 2), 5, {1.0, 0.0}}};
  // Mean over batch and coordinates: |(0,0) - (1,0)|^2 / 2 = 0.5.
  CHECK(epsilon_loss_and_grad(p, batch, s, nullptr) == doctest::Approx(0.5));
}

TEST_CASE("epsilon_loss_and_grad: gradients match finite differences") {
  const Vocabulary vocab(3);
  const NoiseSchedule s = make_schedule(8, 1e-3, 0.25, ScheduleKind::Linear);
  RandomSource rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    RandomSource trng = rng.split("t", trial);
    DenoiserParams p = random_denoiser(vocab, 8, 3, 1000 + trial, {6, 6});
    std::vector<EpsItem> batch;
    for (int i = 0; i < 5; ++i) {
      EpsItem item;
      item.x0 = {trng.gaussian(), trng.gaussian()};
      item.prompt = i % 2 == 0 ? mode_query(vocab, trng.uniform_int(3), 3)
                               : full_mode_prompt(vocab, trng.uniform_int(3), 3);
      item.t = 1 + trng.uniform_int(8);
      item.eps = {trng.gaussian(), trng.gaussian()};
      batch.push_back(item);
    }
    DenoiserGrads g = make_zero_grads(p);
    epsilon_loss_and_grad(p, batch, s, &g);
    auto f = [&]() { return epsilon_loss_and_grad(p, batch, s, nullptr); };
    CHECK(finite_diff_check(f, param_spans(p), grad_spans(g)) < 1e-4);
  }
}

TEST_CASE("ddpm_step: zero prediction and zero sigma reduce to x / sqrt(alpha)") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(5, 0.19, 0.19, ScheduleKind::Linear);
  const DenoiserParams p = constant_denoiser(vocab, 5, 2, {0.0, 0.0});
  // sigma_1 = 0 by the alpha_bar_0 = 1 convention.
  const Point out = ddpm_step(p, s, {0.9, -0.3}, mode_query(vocab, 0, 2), 1, {5.0, 5.0});
  CHECK(out[0] == doctest::Approx(0.9 / std::sqrt(0.81)));
  CHECK(out[1] == doctest::Approx(-0.3 / std::sqrt(0.81)));
}

TEST_CASE("ddpm_step: inverts forward_noise at t=1 with the oracle predictor") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(7, 0.05, 0.4, ScheduleKind::Linear);
  const Point x0 = {1.7, -2.4};
  const Point eps = {0.6, 1.1};
  const DenoiserParams p = constant_denoiser(vocab, 7, 2, eps);
  const Point x1 = forward_noise(x0, 1, eps, s);
  const Point back = ddpm_step(p, s, x1, mode_query(vocab, 2, 2), 1, {0.0, 0.0});
  CHECK(back[0] == doctest::Approx(x0[0]).epsilon(1e-12));
  CHECK(back[1] == doctest::Approx(x0[1]).epsilon(1e-12));
}

TEST_CASE("ddpm_step: matches an independent evaluation of the update rule") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(6, 0.02, 0.3, ScheduleKind::Linear);
  const Point eps = {0.3, -0.2};
  const DenoiserParams p = constant_denoiser(vocab, 6, 2, eps);
  const Point x = {1.0, 0.5};
  const Point z = {0.7, -1.1};
  const int t = 4;
  const Point out = ddpm_step(p, s, x, mode_query(vocab, 1, 2), t, z);
  const double a = s.alpha_t(t), ab = s.alpha_bar_t(t), sig = s.sigma_t(t);
  for (int c = 0; c < 2; ++c) {
    const double expect = (x[c] - (1.0 - a) / std::sqrt(1.0 - ab) * eps[c]) / std::sqrt(a)
                          + sig * z[c];
    CHECK(out[c] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("ddim_step: eta = 0 is deterministic and ignores z") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(9, 1e-3, 0.3, ScheduleKind::Linear);
  const DenoiserParams p = random_denoiser(vocab, 9, 2, 5);
  const Prompt c = mode_query(vocab, 1, 2);
  const Point a = ddim_step(p, s, {0.4, -0.8}, c, 6, 0.0, {3.0, -3.0});
  const Point b = ddim_step(p, s, {0.4, -0.8}, c, 6, 0.0, {-9.0, 2.0});
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);
}

TEST_CASE("ddim_step: perfect prediction at t=1 returns x0") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(9, 0.04, 0.35, ScheduleKind::Linear);
  const Point x0 = {-0.9, 2.2};
  const Point eps = {1.3, -0.4};
  const DenoiserParams p = constant_denoiser(vocab, 9, 2, eps);
  const Point x1 = forward_noise(x0, 1, eps, s);
  const Point back = ddim_step(p, s, x1, mode_query(vocab, 0, 2), 1, 0.0);
  CHECK(back[0] == doctest::Approx(x0[0]).epsilon(1e-12));
  CHECK(back[1] == doctest::Approx(x0[1]).epsilon(1e-12));
}

TEST_CASE("ddim_step: eta = 1 statistics match the ancestral sampler") {
  const Vocabulary vocab(4);
  const MixtureDataset dataset(4, 2.0, 0.1);
  const NoiseSchedule s = make_schedule(10, 5e-3, 0.3, ScheduleKind::Linear);
  const DenoiserParams p = random_denoiser(vocab, 10, 2, 999);
  const Prompt c = mode_query(vocab, 0, 2);
  auto mean_mode_dist = [&](bool use_ddim) {
    RandomSource rng(use_ddim ? 111 : 222);  // independent streams, same law
    double total = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      RandomSource er = rng.split("traj", i);
      Point x = {er.gaussian(), er.gaussian()};
      for (int t = 10; t >= 1; --t) {
        const Point z = {er.gaussian(), er.gaussian()};
        x = use_ddim ? ddim_step(p, s, x, c, t, 1.0, z) : ddpm_step(p, s, x, c, t, z);
      }
      total += dist(x, dataset.center(dataset.nearest_mode(x)));
    }
    return total / n;
  };
  const double ddpm_stat = mean_mode_dist(false);
  const double ddim_stat = mean_mode_dist(true);
  CHECK(std::abs(ddpm_stat - ddim_stat) < 0.05 * ddpm_stat);
}

TEST_CASE("denoised_estimate: oracle prediction inverts the noising exactly") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(50, 1e-3, 0.35, ScheduleKind::Linear);
  RandomSource rng(808);
  for (int i = 0; i < 200; ++i) {
    const Point x0 = {4.0 * rng.gaussian(), 4.0 * rng.gaussian()};
    const Point eps = {rng.gaussian(), rng.gaussian()};
    const int t = 1 + rng.uniform_int(50);
    const DenoiserParams p = constant_denoiser(vocab, 50, 2, eps);
    const Point xt = forward_noise(x0, t, eps, s);
    const Point xhat = denoised_estimate(p, s, xt, mode_query(vocab, 0, 2), t);
    CHECK(std::abs(xhat[0] - x0[0]) < 1e-9);
    CHECK(std::abs(xhat[1] - x0[1]) < 1e-9);
  }
}

TEST_CASE("denoised_estimate: near-identity when alpha_bar is near 1") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(1, 1e-9, 1e-9, ScheduleKind::Linear);
  const DenoiserParams p = constant_denoiser(vocab, 1, 2, {0.4, -0.6});
  const Point x = {1.5, 2.5};
  const Point xhat = denoised_estimate(p, s, x, mode_query(vocab, 0, 2), 1);
  CHECK(xhat[0] == doctest::Approx(x[0]).epsilon(1e-4));
  CHECK(xhat[1] == doctest::Approx(x[1]).epsilon(1e-4));
}

TEST_CASE("denoised_estimate: matches a direct evaluation of the inversion") {
  const Vocabulary vocab(4);
  const NoiseSchedule s = make_schedule(12, 1e-3, 0.3, ScheduleKind::Linear);
  const Point eps = {-0.7, 0.2};
  const DenoiserParams p = constant_denoiser(vocab, 12, 2, eps);
  const Point x = {0.8, -1.6};
  const int t = 7;
  const Point xhat = denoised_estimate(p, s, x, mode_query(vocab, 3, 2), t);
  const double ab = s.alpha_bar_t(t);
  for (int c = 0; c < 2; ++c)
    CHECK(xhat[c] == doctest::Approx((x[c] - std::sqrt(1.0 - ab) * eps[c]) / std::sqrt(ab))
                         .epsilon(1e-14));
}

TEST_CASE("train_denoiser: zero steps returns the initialization unchanged") {
  const Vocabulary vocab(4);
  const MixtureDataset dataset(4, 3.0, 0.1);
  const NoiseSchedule s = make_schedule(10, 1e-3, 0.3, ScheduleKind::Linear);
  DenoiserTrainConfig cfg;
  cfg.steps = 0;
  cfg.init.hidden = {8};
  RandomSource rng(55);
  const DenoiserTrainResult res = train_denoiser(dataset, vocab, s, 2, cfg, rng);
  RandomSource rng2(55);
  RandomSource init_rng = rng2.split("init");
  const DenoiserParams expect = init_denoiser(vocab, 10, 2, cfg.init, init_rng);
  CHECK(res.params.mlp.weights[0].a == expect.mlp.weights[0].a);
  CHECK(res.params.token_emb.a == expect.token_emb.a);
  CHECK(res.curve.empty());
}

TEST_CASE("train_denoiser: loss decreases from initialization") {
  const Vocabulary vocab(4);
  const MixtureDataset dataset(4, 3.0, 0.1);
  const NoiseSchedule s = make_schedule(10, 1e-3, 0.3, ScheduleKind::Linear);
  DenoiserTrainConfig cfg;
  cfg.steps = 600;
  cfg.batch = 32;
  cfg.init.hidden = {24, 24};
  cfg.log_every = 100;
  RandomSource rng(66);
  const DenoiserTrainResult res = train_denoiser(dataset, vocab, s, 2, cfg, rng);
  REQUIRE(res.curve.size() > 2);
  CHECK(res.curve.back().loss < res.curve.front().loss);
}
