#include "steerloop/environment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "steerloop/errors.hpp"

namespace steerloop {

bool RefinementSchedule::contains(int t) const {
  return std::find(steps.begin(), steps.end(), t) != steps.end();
}

RefinementSchedule sample_training_schedule(int T, int n_refine, RandomSource& rng) {
  if (n_refine < 1 || n_refine > T)
    throw ConfigError("sample_training_schedule: need 1 <= n_refine <= T");
  std::vector<int> all(T);
  for (int i = 0; i < T; ++i) all[i] = i + 1;
  for (int i = 0; i < n_refine; ++i) {
    const int j = i + rng.uniform_int(T - i);
    std::swap(all[i], all[j]);
  }
  RefinementSchedule out;
  out.steps.assign(all.begin(), all.begin() + n_refine);
  std::sort(out.steps.rbegin(), out.steps.rend());
  return out;
}

RefinementSchedule inference_schedule(int T, int n_refine) {
  if (n_refine < 1 || n_refine > T) throw ConfigError("inference_schedule: need 1 <= n_refine <= T");
  std::vector<int> steps;
  for (int i = 0; i < n_refine; ++i) {
    const int t = T - static_cast<int>(std::lround(static_cast<double>(i) * T / n_refine));
    if (t >= 1 && (steps.empty() || steps.back() != t)) steps.push_back(t);
  }
  RefinementSchedule out;
  out.steps = std::move(steps);
  return out;
}

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "ddpm") return SamplerKind::Ddpm;
  if (name == "ddim") return SamplerKind::Ddim;
  throw ConfigError("unknown sampler '" + name + "' (expected ddpm|ddim)");
}

std::string sampler_kind_name(SamplerKind kind) {
  return kind == SamplerKind::Ddpm ? "ddpm" : "ddim";
}

namespace {

std::string dump_trajectory(const std::vector<Point>& traj) {
  std::ostringstream ss;
  for (const Point& p : traj) ss << p[0] << ' ' << p[1] << '\n';
  return ss.str();
}

void check_env(const Env& env) {
  if (!env.denoiser || !env.schedule || !env.dataset || !env.vocab)
    throw ConfigError("rollout: environment is missing components");
}

}  // namespace

EpisodeRecord rollout(const Env& env, const RefineFn& refine, const Query& q,
                      const RefinementSchedule& schedule, RandomSource rng) {
  check_env(env);
  if (schedule.steps.empty()) throw ConfigError("rollout: empty refinement schedule");
  const NoiseSchedule& ns = *env.schedule;

  // Separate streams: a controller that never draws leaves the latent path
  // identical to the identity rollout under the same seed.
  RandomSource rng_latent = rng.split("latent");
  RandomSource rng_policy = rng.split("policy");

  EpisodeRecord ep;
  ep.query = q;
  ep.seed = rng.seed();

  Prompt c = q;
  Point x = {rng_latent.gaussian(), rng_latent.gaussian()};
  std::vector<Point> traj;
  traj.push_back(x);

  for (int t = ns.T; t >= 1; --t) {
    if (schedule.contains(t)) {
      MdpState state;
      state.x_hat = denoised_estimate(*env.denoiser, ns, x, c, t);
      state.prompt = c;
      state.query = q;
      state.t = t;
      state.T = ns.T;
      SampledAction act = refine(state, rng_policy);
      RefinementEvent ev;
      ev.state = std::move(state);
      ev.action = act.action;
      ev.old_logprob = act.logprob;
      ev.old_slot_logprobs = std::move(act.slot_logprobs);
      c = ev.action;
      ep.events.push_back(std::move(ev));
    }
    const Point z = {rng_latent.gaussian(), rng_latent.gaussian()};
    x = env.config.sampler == SamplerKind::Ddpm
            ? ddpm_step(*env.denoiser, ns, x, c, t, z)
            : ddim_step(*env.denoiser, ns, x, c, t, env.config.ddim_eta, z);
    if (!std::isfinite(x[0]) || !std::isfinite(x[1])) {
      traj.push_back(x);
      throw EpisodeError("rollout: non-finite latent at t=" + std::to_string(t),
                         dump_trajectory(traj));
    }
    traj.push_back(x);
  }

  ep.final_x = x;
  ep.final_prompt = c;
  ep.reward = evaluate_reward(env.reward, x, q, c, *env.dataset, *env.vocab);
  if (env.config.store_trajectory) ep.trajectory = std::move(traj);
  return ep;
}

EpisodeRecord rollout(const Env& env, const PolicyParams& policy, const Query& q,
                      const RefinementSchedule& schedule, RandomSource rng) {
  const Feedback fb = env.config.feedback;
  EpisodeRecord ep = rollout(
      env,
      [&policy, fb](const MdpState& s, RandomSource& prng) {
        return sample_action(policy, s, fb, prng);
      },
      q, schedule, rng);
  // Freeze the full distributions for the update step.
  for (RefinementEvent& ev : ep.events)
    ev.old_dist = policy_distribution(policy, ev.state, fb);
  return ep;
}

std::vector<EpisodeRecord> rollout_group(const Env& env, const PolicyParams& policy,
                                         const Query& q, int group_size, int n_refine,
                                         RandomSource& rng, bool resample_per_member,
                                         int threads) {
  if (group_size < 2) throw ConfigError("rollout_group: group size must be >= 2");
  const RefinementSchedule shared =
      resample_per_member ? RefinementSchedule{}
                          : sample_training_schedule(env.schedule->T, n_refine, rng);
  std::vector<EpisodeRecord> out(group_size);
  std::vector<RandomSource> seeds;
  seeds.reserve(group_size);
  for (int g = 0; g < group_size; ++g) seeds.push_back(rng.split("episode", g));
  parallel_for(group_size, threads, [&](int g) {
    RandomSource ep_rng = seeds[g];
    const RefinementSchedule sched =
        resample_per_member
            ? [&] {
                RandomSource srng = ep_rng.split("schedule");
                return sample_training_schedule(env.schedule->T, n_refine, srng);
              }()
            : shared;
    out[g] = rollout(env, policy, q, sched, ep_rng);
  });
  return out;
}

PromptPlan precompute_prompts(const PolicyParams& policy, const Query& q,
                              const RefinementSchedule& schedule, int T, RandomSource& rng) {
  PromptPlan plan;
  Prompt c = q;
  for (int t : schedule.steps) {
    MdpState state;
    state.x_hat = {0.0, 0.0};
    state.prompt = c;
    state.query = q;
    state.t = t;
    state.T = T;
    const SampledAction act = sample_action(policy, state, Feedback::Off, rng);
    c = act.action;
    plan.entries.emplace_back(t, c);
  }
  return plan;
}

EpisodeRecord rollout_with_plan(const Env& env, const Query& q, const PromptPlan& plan,
                                RandomSource rng) {
  check_env(env);
  const NoiseSchedule& ns = *env.schedule;
  RandomSource rng_latent = rng.split("latent");

  EpisodeRecord ep;
  ep.query = q;
  ep.seed = rng.seed();

  Prompt c = q;
  size_t next = 0;
  Point x = {rng_latent.gaussian(), rng_latent.gaussian()};
  std::vector<Point> traj;
  traj.push_back(x);

  for (int t = ns.T; t >= 1; --t) {
    if (next < plan.entries.size() && plan.entries[next].first == t) {
      c = plan.entries[next].second;
      ++next;
    }
    const Point z = {rng_latent.gaussian(), rng_latent.gaussian()};
    x = env.config.sampler == SamplerKind::Ddpm
            ? ddpm_step(*env.denoiser, ns, x, c, t, z)
            : ddim_step(*env.denoiser, ns, x, c, t, env.config.ddim_eta, z);
    if (!std::isfinite(x[0]) || !std::isfinite(x[1])) {
      traj.push_back(x);
      throw EpisodeError("rollout_with_plan: non-finite latent at t=" + std::to_string(t),
                         dump_trajectory(traj));
    }
    traj.push_back(x);
  }

  ep.final_x = x;
  ep.final_prompt = c;
  ep.reward = evaluate_reward(env.reward, x, q, c, *env.dataset, *env.vocab);
  if (env.config.store_trajectory) ep.trajectory = std::move(traj);
  return ep;
}

}  // namespace steerloop
