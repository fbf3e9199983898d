#pragma once

#include <string>
#include <vector>

#include "steerloop/environment.hpp"
#include "steerloop/grpo.hpp"

namespace steerloop {

enum class BaselineKind { Identity, FeedForward, DiffusionRl };

std::string baseline_kind_name(BaselineKind kind);

/// Prompt fixed to the query for the whole trajectory; zero policy calls,
/// zero refinement events. Defines the unaligned reference reward.
EpisodeRecord identity_rollout(const Env& env, const Query& q, RandomSource rng);

/// One policy invocation at t = T with the feedback block zeroed; the
/// resulting prompt drives every step. Exactly one refinement event.
EpisodeRecord feedforward_rollout(const Env& env, const PolicyParams& policy, const Query& q,
                                  RandomSource rng);

/// Weight-level RL on a copy of the denoiser: the per-step Gaussian density
/// of x_{t-1} under the ancestral mean and sigma_t is the action
/// log-probability, the terminal group-normalized advantage is broadcast
/// over steps, and the denoiser weights are the optimization target.
/// Deterministic steps (sigma_t = 0) contribute no terms.
struct DiffusionRlConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double lr = 3e-4;
  int inner_iters = 1;
  double eps_std = 1e-8;
  int total_updates = 400;
};

/// Log-density of one ancestral step (2-d isotropic Gaussian).
double step_logprob(Point sampled, Point mean, double sigma);

/// One recorded stochastic sampler transition.
struct DiffusionStep {
  Point x_t;      // latent before the step
  Point x_prev;   // sampled latent after the step
  int t = 1;
  double old_logprob = 0.0;
};

/// Clipped-surrogate loss over recorded steps with per-step advantages;
/// gradients w.r.t. the denoiser accumulate into `acc`.
double diffusion_rl_loss_and_grad(const DenoiserParams& params, const NoiseSchedule& schedule,
                                  const Prompt& prompt, std::span<const DiffusionStep> steps,
                                  std::span<const double> advantages, double clip_eps,
                                  DenoiserGrads* acc);

struct DiffusionRlResult {
  DenoiserParams params;
  std::vector<UpdateMetrics> metrics;
};

DiffusionRlResult diffusion_rl_finetune(DenoiserParams denoiser, const NoiseSchedule& schedule,
                                        const MixtureDataset& dataset, const Vocabulary& vocab,
                                        const RewardSpec& reward, const Query& q,
                                        const DiffusionRlConfig& cfg, RandomSource& root,
                                        int threads = 1);

}  // namespace steerloop
