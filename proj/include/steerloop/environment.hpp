#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "steerloop/dataset.hpp"
#include "steerloop/denoiser.hpp"
#include "steerloop/policy.hpp"
#include "steerloop/rewards.hpp"

namespace steerloop {

/// Timesteps at which the policy is invoked, stored descending so iteration
/// follows the reverse process.
struct RefinementSchedule {
  std::vector<int> steps;

  int count() const { return static_cast<int>(steps.size()); }
  bool contains(int t) const;
};

/// Uniform over all size-n subsets of {1..T} (partial Fisher-Yates).
RefinementSchedule sample_training_schedule(int T, int n_refine, RandomSource& rng);

/// Evenly spaced: { T - round(i*T/n) : i = 0..n-1 }, deduplicated, always
/// containing T.
RefinementSchedule inference_schedule(int T, int n_refine);

enum class SamplerKind { Ddpm, Ddim };

SamplerKind parse_sampler_kind(const std::string& name);
std::string sampler_kind_name(SamplerKind kind);

struct EnvConfig {
  SamplerKind sampler = SamplerKind::Ddpm;
  double ddim_eta = 0.0;
  Feedback feedback = Feedback::On;
  bool store_trajectory = false;
};

/// Everything a rollout needs besides the policy.
struct Env {
  const DenoiserParams* denoiser = nullptr;
  const NoiseSchedule* schedule = nullptr;
  const MixtureDataset* dataset = nullptr;
  const Vocabulary* vocab = nullptr;
  RewardSpec reward;
  EnvConfig config;
};

struct RefinementEvent {
  MdpState state;
  Prompt action;
  double old_logprob = 0.0;
  Vec old_slot_logprobs;       // aligned with action slots
  ActionDistribution old_dist; // frozen at collection time, consumed by the update
};

struct EpisodeRecord {
  Query query;
  std::vector<RefinementEvent> events;
  std::vector<Point> trajectory;  // x_T..x_0 when store_trajectory is set
  Point final_x = {0.0, 0.0};
  Prompt final_prompt;
  RewardValue reward;
  uint64_t seed = 0;
};

/// How a rollout obtains a refined prompt at a refinement step. The learned
/// policy is the production implementation; tests plug in hand-coded
/// controllers.
using RefineFn = std::function<SampledAction(const MdpState&, RandomSource&)>;

/// Closed-loop episode per the training/sampling procedure: x_T ~ N(0, I);
/// at each t in the schedule the state is built from the denoised estimate
/// of the pre-step latent and the prompt is resampled; one sampler step per
/// t; the terminal reward is evaluated once on x_0.
///
/// Noise draws and policy draws use separate child streams, so rollouts that
/// differ only in refinement behavior share the same latent noise.
EpisodeRecord rollout(const Env& env, const RefineFn& refine, const Query& q,
                      const RefinementSchedule& schedule, RandomSource rng);

EpisodeRecord rollout(const Env& env, const PolicyParams& policy, const Query& q,
                      const RefinementSchedule& schedule, RandomSource rng);

/// G episodes for one query. The refinement schedule is sampled once per
/// query and shared across the group unless resample_per_member is set.
std::vector<EpisodeRecord> rollout_group(const Env& env, const PolicyParams& policy,
                                         const Query& q, int group_size, int n_refine,
                                         RandomSource& rng, bool resample_per_member = false,
                                         int threads = 1);

/// Prompts for every refinement step generated before any diffusion step,
/// with the feedback block zeroed (the policy never sees a latent).
struct PromptPlan {
  std::vector<std::pair<int, Prompt>> entries;  // (timestep, prompt), descending
};

PromptPlan precompute_prompts(const PolicyParams& policy, const Query& q,
                              const RefinementSchedule& schedule, int T, RandomSource& rng);

/// Replays a prompt plan through the sampler. Takes no policy at all: the
/// sampling loop cannot invoke one.
EpisodeRecord rollout_with_plan(const Env& env, const Query& q, const PromptPlan& plan,
                                RandomSource rng);

}  // namespace steerloop
