#include "steerloop/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "steerloop/errors.hpp"

namespace steerloop {

std::string baseline_kind_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::Identity: return "identity";
    case BaselineKind::FeedForward: return "feedforward";
    default: return "diffusion_rl";
  }
}

EpisodeRecord identity_rollout(const Env& env, const Query& q, RandomSource rng) {
  return rollout_with_plan(env, q, PromptPlan{}, rng);
}

EpisodeRecord feedforward_rollout(const Env& env, const PolicyParams& policy, const Query& q,
                                  RandomSource rng) {
  Env ff = env;
  ff.config.feedback = Feedback::Off;
  RefinementSchedule sched;
  sched.steps = {env.schedule->T};
  return rollout(ff, policy, q, sched, rng);
}

double step_logprob(Point sampled, Point mean, double sigma) {
  if (!(sigma > 0.0)) throw UsageError("step_logprob: sigma must be positive");
  const double dx = sampled[0] - mean[0];
  const double dy = sampled[1] - mean[1];
  return -(dx * dx + dy * dy) / (2.0 * sigma * sigma) - std::log(2.0 * M_PI * sigma * sigma);
}

namespace {

Point ancestral_mean(const DenoiserParams& p, const NoiseSchedule& s, Point x_t,
                     const Prompt& prompt, int t, MlpCache* cache = nullptr) {
  const double a = s.alpha_t(t);
  const double ab = s.alpha_bar_t(t);
  const Point eps = predict_noise(p, x_t, prompt, t, cache);
  const double coef = (1.0 - a) / std::sqrt(1.0 - ab);
  const double inv_sa = 1.0 / std::sqrt(a);
  return {inv_sa * (x_t[0] - coef * eps[0]), inv_sa * (x_t[1] - coef * eps[1])};
}

struct DiffEpisode {
  std::vector<DiffusionStep> steps;  // sigma > 0 steps only
  Point final_x = {0.0, 0.0};
  double reward = 0.0;
};

DiffEpisode diffusion_rl_episode(const DenoiserParams& p, const NoiseSchedule& s,
                                 const MixtureDataset& dataset, const Vocabulary& vocab,
                                 const RewardSpec& reward, const Query& q, RandomSource rng) {
  RandomSource rng_latent = rng.split("latent");
  DiffEpisode ep;
  Point x = {rng_latent.gaussian(), rng_latent.gaussian()};
  for (int t = s.T; t >= 1; --t) {
    const double sigma = s.sigma_t(t);
    const Point mean = ancestral_mean(p, s, x, q, t);
    const Point z = {rng_latent.gaussian(), rng_latent.gaussian()};
    const Point x_prev = {mean[0] + sigma * z[0], mean[1] + sigma * z[1]};
    if (!std::isfinite(x_prev[0]) || !std::isfinite(x_prev[1]))
      throw EpisodeError("diffusion_rl: non-finite latent at t=" + std::to_string(t), "");
    if (sigma > 0.0)
      ep.steps.push_back({x, x_prev, t, step_logprob(x_prev, mean, sigma)});
    x = x_prev;
  }
  ep.final_x = x;
  ep.reward = evaluate_reward(reward, x, q, q, dataset, vocab).total;
  return ep;
}

}  // namespace

double diffusion_rl_loss_and_grad(const DenoiserParams& params, const NoiseSchedule& schedule,
                                  const Prompt& prompt, std::span<const DiffusionStep> steps,
                                  std::span<const double> advantages, double clip_eps,
                                  DenoiserGrads* acc) {
  if (steps.size() != advantages.size())
    throw UsageError("diffusion_rl_loss_and_grad: advantage list misaligned with steps");
  if (steps.empty()) throw UsageError("diffusion_rl_loss_and_grad: no steps");
  const double inv_n = 1.0 / static_cast<double>(steps.size());
  double loss = 0.0;
  MlpCache cache;
  for (size_t i = 0; i < steps.size(); ++i) {
    const DiffusionStep& st = steps[i];
    const double a = schedule.alpha_t(st.t);
    const double ab = schedule.alpha_bar_t(st.t);
    const double sigma = schedule.sigma_t(st.t);
    if (!(sigma > 0.0))
      throw UsageError("diffusion_rl_loss_and_grad: deterministic step in the batch");
    const Point mean =
        ancestral_mean(params, schedule, st.x_t, prompt, st.t, acc ? &cache : nullptr);
    const double new_lp = step_logprob(st.x_prev, mean, sigma);
    double d_newlp = 0.0;
    loss -= token_surrogate(new_lp, st.old_logprob, advantages[i], clip_eps, &d_newlp) * inv_n;
    if (!acc || d_newlp == 0.0) continue;
    // d lp / d mean = (x_prev - mean) / sigma^2; the mean depends on the
    // predicted noise with factor -(1-a)/(sqrt(a) sqrt(1-ab)).
    const double w = -inv_n * d_newlp;
    const double d_mean_coef = -(1.0 - a) / (std::sqrt(a) * std::sqrt(1.0 - ab));
    const Point d_eps = {
        w * (st.x_prev[0] - mean[0]) / (sigma * sigma) * d_mean_coef,
        w * (st.x_prev[1] - mean[1]) / (sigma * sigma) * d_mean_coef,
    };
    accumulate_noise_grads(params, cache, prompt, d_eps, *acc);
  }
  return loss;
}

DiffusionRlResult diffusion_rl_finetune(DenoiserParams denoiser, const NoiseSchedule& schedule,
                                        const MixtureDataset& dataset, const Vocabulary& vocab,
                                        const RewardSpec& reward, const Query& q,
                                        const DiffusionRlConfig& cfg, RandomSource& root,
                                        int threads) {
  if (cfg.group_size < 2) throw ConfigError("diffusion_rl_finetune: group size must be >= 2");
  DiffusionRlResult out;
  out.params = std::move(denoiser);  // caller passes a copy; the original is never touched
  AdamState adam;
  adam.lr = cfg.lr;

  for (int u = 0; u < cfg.total_updates; ++u) {
    RandomSource urng = root.split("update", static_cast<uint64_t>(u));
    std::vector<DiffEpisode> group(cfg.group_size);
    std::vector<RandomSource> seeds;
    seeds.reserve(cfg.group_size);
    for (int g = 0; g < cfg.group_size; ++g) seeds.push_back(urng.split("episode", g));
    parallel_for(cfg.group_size, threads, [&](int g) {
      group[g] = diffusion_rl_episode(out.params, schedule, dataset, vocab, reward, q, seeds[g]);
    });

    Vec rewards(cfg.group_size);
    for (int g = 0; g < cfg.group_size; ++g) rewards[g] = group[g].reward;
    const Vec adv = group_advantages(rewards, cfg.eps_std);

    // Terminal advantage broadcast over every stochastic step of its episode.
    std::vector<DiffusionStep> steps;
    Vec step_adv;
    for (int g = 0; g < cfg.group_size; ++g) {
      steps.insert(steps.end(), group[g].steps.begin(), group[g].steps.end());
      step_adv.insert(step_adv.end(), group[g].steps.size(), adv[g]);
    }
    if (steps.empty())
      throw ConfigError("diffusion_rl_finetune: schedule has no stochastic steps");

    UpdateMetrics row;
    row.update = u;
    row.min_reward = rewards[0];
    row.max_reward = rewards[0];
    for (double r : rewards) {
      row.mean_reward += r / cfg.group_size;
      row.min_reward = std::min(row.min_reward, r);
      row.max_reward = std::max(row.max_reward, r);
    }
    double var = 0.0;
    for (double a : adv) var += a * a;
    row.adv_std = std::sqrt(var / cfg.group_size);

    for (int it = 0; it < cfg.inner_iters; ++it) {
      DenoiserGrads acc = make_zero_grads(out.params);
      const double loss =
          diffusion_rl_loss_and_grad(out.params, schedule, q, steps, step_adv, cfg.clip_eps, &acc);
      if (!std::isfinite(loss))
        throw TrainingError("diffusion_rl_finetune: loss diverged at update " + std::to_string(u));
      row.loss = loss;
      adam_step(adam, param_spans(out.params), grad_spans(acc));
    }
    out.metrics.push_back(row);
  }
  return out;
}

}  // namespace steerloop
