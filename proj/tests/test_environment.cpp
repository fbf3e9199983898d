#include <cmath>
#include <doctest.h>
#include <map>
#include <set>

#include "steerloop/baselines.hpp"
#include "steerloop/environment.hpp"
#include "steerloop/errors.hpp"
#include "support/test_util.hpp"

using namespace steerloop;
using namespace steerloop::testutil;

namespace {

/// Owns every component an Env points at.
struct World {
  Vocabulary vocab;
  MixtureDataset dataset;
  NoiseSchedule schedule;
  DenoiserParams denoiser;

  World(int modes, int T, int prompt_len, uint64_t seed = 12)
      : vocab(modes),
        dataset(modes, 4.0, 0.1),
        schedule(make_schedule(T, 1e-3, 0.3, ScheduleKind::Linear)),
        denoiser(random_denoiser(vocab, T, prompt_len, seed)) {}

  Env env(RewardKind kind = RewardKind::ModeMatch) const {
    Env e;
    e.denoiser = &denoiser;
    e.schedule = &schedule;
    e.dataset = &dataset;
    e.vocab = &vocab;
    e.reward.kind = kind;
    return e;
  }
};

}  // namespace

TEST_CASE("sample_training_schedule: full set when n equals T") {
  RandomSource rng(1);
  const RefinementSchedule s = sample_training_schedule(6, 6, rng);
  REQUIRE(s.count() == 6);
  for (int i = 0; i < 6; ++i) CHECK(s.steps[i] == 6 - i);
}

TEST_CASE("sample_training_schedule: sets are valid, sorted descending") {
  RandomSource rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const RefinementSchedule s = sample_training_schedule(12, 4, rng);
    REQUIRE(s.count() == 4);
    std::set<int> seen;
    for (int t : s.steps) {
      CHECK(t >= 1);
      CHECK(t <= 12);
      seen.insert(t);
    }
    CHECK(seen.size() == 4);
    for (int i = 1; i < 4; ++i) CHECK(s.steps[i] < s.steps[i - 1]);
  }
  CHECK_THROWS_AS(sample_training_schedule(4, 5, rng), ConfigError);
}

TEST_CASE("sample_training_schedule: single-step choice is uniform") {
  RandomSource rng(3);
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_training_schedule(4, 1, rng).steps[0] - 1];
  const double se = std::sqrt(0.25 * 0.75 / n);
  for (int c : counts) CHECK(std::abs(c / static_cast<double>(n) - 0.25) < 3.0 * se);
}

TEST_CASE("sample_training_schedule: pairs are uniform over all 45 subsets") {
  RandomSource rng(4);
  std::map<std::pair<int, int>, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const RefinementSchedule s = sample_training_schedule(10, 2, rng);
    ++counts[{s.steps[1], s.steps[0]}];
  }
  CHECK(counts.size() == 45);
  const double p = 1.0 / 45.0;
  const double se = std::sqrt(p * (1.0 - p) / n);
  for (const auto& [pair, c] : counts)
    CHECK(std::abs(c / static_cast<double>(n) - p) < 3.0 * se);
}

TEST_CASE("inference_schedule: stated examples") {
  CHECK(inference_schedule(10, 1).steps == std::vector<int>{10});
  CHECK(inference_schedule(10, 2).steps == std::vector<int>{10, 5});
  const RefinementSchedule full = inference_schedule(10, 10);
  REQUIRE(full.count() == 10);
  for (int i = 0; i < 10; ++i) CHECK(full.steps[i] == 10 - i);
  for (int n = 1; n <= 50; ++n) {
    const RefinementSchedule s = inference_schedule(50, n);
    CHECK(s.steps.front() == 50);  // always refines at the first denoising step
    for (int t : s.steps) {
      CHECK(t >= 1);
      CHECK(t <= 50);
    }
  }
}

TEST_CASE("rollout: bitwise-identical records under a fixed seed") {
  const World w(4, 12, 3);
  const Env env = w.env();
  const PolicyParams policy = random_policy(w.vocab, 12, 3, 77);
  const Query q = mode_query(w.vocab, 2, 3);
  RandomSource srng(900);
  const RefinementSchedule sched = sample_training_schedule(12, 3, srng);

  const EpisodeRecord a = rollout(env, policy, q, sched, RandomSource(555));
  const EpisodeRecord b = rollout(env, policy, q, sched, RandomSource(555));
  CHECK(a.final_x == b.final_x);
  CHECK(a.reward.total == b.reward.total);
  REQUIRE(a.events.size() == b.events.size());
  for (size_t i = 0; i < a.events.size(); ++i) {
    CHECK(a.events[i].action == b.events[i].action);
    CHECK(a.events[i].old_logprob == b.events[i].old_logprob);
    CHECK(a.events[i].state.x_hat == b.events[i].state.x_hat);
  }
}

TEST_CASE("rollout: event structure, prompt chaining, and x_hat provenance") {
  const World w(4, 10, 3);
  Env env = w.env();
  env.config.store_trajectory = true;
  const PolicyParams policy = random_policy(w.vocab, 10, 3, 78);
  const Query q = mode_query(w.vocab, 1, 3);
  RandomSource srng(901);
  const RefinementSchedule sched = sample_training_schedule(10, 4, srng);

  const EpisodeRecord ep = rollout(env, policy, q, sched, RandomSource(556));
  REQUIRE(static_cast<int>(ep.events.size()) == sched.count());
  for (size_t i = 0; i < ep.events.size(); ++i) {
    CHECK(ep.events[i].state.t == sched.steps[i]);
    // Constant prompt between refinements: each state carries the previous action.
    const Prompt& expected = i == 0 ? q : ep.events[i - 1].action;
    CHECK(ep.events[i].state.prompt == expected);
  }
  CHECK(ep.final_prompt == ep.events.back().action);
  CHECK(ep.trajectory.size() == 11);  // x_T .. x_0

  // The state's estimate is computed from the pre-step latent.
  for (size_t i = 0; i < ep.events.size(); ++i) {
    const int t = sched.steps[i];
    const Point pre_step = ep.trajectory[10 - t];  // trajectory[0] = x_T
    const Point expect =
        denoised_estimate(w.denoiser, w.schedule, pre_step, ep.events[i].state.prompt, t);
    CHECK(ep.events[i].state.x_hat == expect);
  }
}

TEST_CASE("rollout: first refinement at t = T sees the raw Gaussian's estimate") {
  const World w(4, 8, 2);
  const Env env = w.env();
  const PolicyParams policy = random_policy(w.vocab, 8, 2, 79);
  const Query q = mode_query(w.vocab, 0, 2);
  RefinementSchedule sched;
  sched.steps = {8};
  const uint64_t seed = 557;
  const EpisodeRecord ep = rollout(env, policy, q, sched, RandomSource(seed));
  RandomSource latent = RandomSource(seed).split("latent");
  const Point x_T = {latent.gaussian(), latent.gaussian()};
  const Point expect = denoised_estimate(w.denoiser, w.schedule, x_T, q, 8);
  CHECK(ep.events[0].state.x_hat == expect);
}

TEST_CASE("rollout: a policy pinned to the query reproduces the identity rollout") {
  const World w(4, 10, 3);
  const Env env = w.env();
  const Query q = mode_query(w.vocab, 3, 3);
  const PolicyParams pinned = pinned_policy(w.vocab, 10, q);
  RandomSource srng(902);
  const RefinementSchedule all = sample_training_schedule(10, 10, srng);

  const EpisodeRecord with_policy = rollout(env, pinned, q, all, RandomSource(558));
  const EpisodeRecord identity = identity_rollout(env, q, RandomSource(558));
  CHECK(with_policy.final_x == identity.final_x);
  CHECK(with_policy.events.size() == 10);
  CHECK(identity.events.empty());
}

TEST_CASE("rollout: non-finite latents raise an episode error with a dump") {
  const World w(4, 6, 2);
  World broken = w;
  broken.denoiser = constant_denoiser(w.vocab, 6, 2, {1e308, 0.0});
  const Env env = broken.env();
  const PolicyParams policy = random_policy(w.vocab, 6, 2, 80);
  RefinementSchedule sched;
  sched.steps = {6};
  try {
    rollout(env, policy, mode_query(w.vocab, 0, 2), sched, RandomSource(559));
    FAIL("expected EpisodeError");
  } catch (const EpisodeError& e) {
    CHECK(!e.trajectory_dump.empty());
  }
}

TEST_CASE("rollout_group: independent members, shared schedule per query") {
  const World w(4, 10, 3);
  const Env env = w.env();
  const PolicyParams policy = random_policy(w.vocab, 10, 3, 81);
  const Query q = mode_query(w.vocab, 2, 3);
  RandomSource rng(903);
  const auto group = rollout_group(env, policy, q, 6, 2, rng);
  REQUIRE(group.size() == 6);
  for (size_t i = 0; i < group.size(); ++i) {
    REQUIRE(group[i].events.size() == 2);
    CHECK(group[i].events[0].state.t == group[0].events[0].state.t);
    CHECK(group[i].events[1].state.t == group[0].events[1].state.t);
    for (size_t j = i + 1; j < group.size(); ++j) CHECK(group[i].final_x != group[j].final_x);
  }
}

TEST_CASE("rollout_group: thread count does not change results") {
  const World w(4, 10, 3);
  const Env env = w.env();
  const PolicyParams policy = random_policy(w.vocab, 10, 3, 82);
  const Query q = mode_query(w.vocab, 1, 3);
  RandomSource r1(904), r4(904);
  const auto g1 = rollout_group(env, policy, q, 8, 2, r1, false, 1);
  const auto g4 = rollout_group(env, policy, q, 8, 2, r4, false, 4);
  for (int i = 0; i < 8; ++i) {
    CHECK(g1[i].final_x == g4[i].final_x);
    CHECK(g1[i].reward.total == g4[i].reward.total);
  }
}

TEST_CASE("rollout_group: per-member schedule resampling is available") {
  const World w(4, 20, 2);
  const Env env = w.env();
  const PolicyParams policy = random_policy(w.vocab, 20, 2, 83);
  const Query q = mode_query(w.vocab, 0, 2);
  RandomSource rng(905);
  const auto group = rollout_group(env, policy, q, 8, 2, rng, /*resample_per_member=*/true);
  bool any_differs = false;
  for (size_t i = 1; i < group.size(); ++i)
    any_differs |= group[i].events[0].state.t != group[0].events[0].state.t ||
                   group[i].events[1].state.t != group[0].events[1].state.t;
  CHECK(any_differs);
}

TEST_CASE("degenerate group: forced identical seeds yield all-zero advantages") {
  const World w(4, 10, 3);
  const Env env = w.env();
  const Query q = mode_query(w.vocab, 2, 3);
  const PolicyParams pinned = pinned_policy(w.vocab, 10, full_mode_prompt(w.vocab, 2, 3));
  RandomSource srng(906);
  const RefinementSchedule sched = sample_training_schedule(10, 2, srng);
  std::vector<EpisodeRecord> eps;
  eps.push_back(rollout(env, pinned, q, sched, RandomSource(600)));
  eps.push_back(rollout(env, pinned, q, sched, RandomSource(600)));
  CHECK(eps[0].reward.total == eps[1].reward.total);
  const GroupBatch batch = make_group_batch(q, std::move(eps), Feedback::On, 1e-8);
  for (double a : batch.advantages) CHECK(a == 0.0);
}

TEST_CASE("precompute_prompts: plan shape and feedback-free replay") {
  const World w(4, 10, 3);
  const Env env = w.env();
  const PolicyParams policy = random_policy(w.vocab, 10, 3, 84);
  const Query q = mode_query(w.vocab, 1, 3);
  const RefinementSchedule sched = inference_schedule(10, 4);
  RandomSource prng(907);
  const PromptPlan plan = precompute_prompts(policy, q, sched, 10, prng);
  REQUIRE(plan.entries.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(plan.entries[i].first == sched.steps[i]);

  // Replay is a pure sampler loop; same plan + seed reproduce the sample.
  const EpisodeRecord a = rollout_with_plan(env, q, plan, RandomSource(610));
  const EpisodeRecord b = rollout_with_plan(env, q, plan, RandomSource(610));
  CHECK(a.final_x == b.final_x);
  CHECK(a.events.empty());
  CHECK(a.final_prompt == plan.entries.back().second);
}
