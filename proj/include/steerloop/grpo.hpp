#pragma once

#include <functional>
#include <string>
#include <vector>

#include "steerloop/environment.hpp"
#include "steerloop/numerics.hpp"
#include "steerloop/policy.hpp"

namespace steerloop {

enum class KlDirection { OldNew, NewOld };

KlDirection parse_kl_direction(const std::string& name);
std::string kl_direction_name(KlDirection dir);

struct GrpoConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.005;
  double lr = 3e-3;  // scaled for the tiny trunk; full-size policies train near 5e-6
  int inner_iters = 1;  // 1 leaves the clip inert
  double eps_std = 1e-8;
  int queries_per_batch = 1;
  int total_updates = 600;
  KlDirection kl_dir = KlDirection::OldNew;
  int checkpoint_every = 200;
  bool resample_schedule_per_member = false;
};

/// Group-normalized advantages: (r - mean) / population std. Groups whose
/// std falls below eps_std get all-zero advantages.
Vec group_advantages(const Vec& rewards, double eps_std);

/// One clipped-surrogate term: min(rho * adv, clip(rho, 1-eps, 1+eps) * adv)
/// with rho = exp(new_lp - old_lp). Writes d(term)/d(new_lp) if requested
/// (zero when the clipped branch is active).
double token_surrogate(double new_lp, double old_lp, double advantage, double clip_eps,
                       double* d_newlp = nullptr);

/// Exact categorical KL(old || new) summed over prompt slots.
double kl_penalty(const ActionDistribution& old_dist, const ActionDistribution& new_dist);

/// Episodes of one group plus frozen old-policy quantities.
struct GroupBatch {
  Query query;
  std::vector<EpisodeRecord> episodes;
  Vec advantages;
  Feedback feedback = Feedback::On;
};

GroupBatch make_group_batch(Query q, std::vector<EpisodeRecord> episodes, Feedback feedback,
                            double eps_std);

struct GrpoStats {
  double loss = 0.0;
  double surrogate = 0.0;  // mean token term (the maximized objective)
  double mean_kl = 0.0;    // mean exact KL per refinement event
  double mean_reward = 0.0, min_reward = 0.0, max_reward = 0.0;
  double adv_std = 0.0;
};

/// loss = -mean over tokens of the surrogate + beta * mean over events of the
/// exact KL. The terminal advantage is broadcast to every event and slot.
/// Gradients accumulate into `acc`.
double grpo_loss_and_grad(const PolicyParams& policy, const GroupBatch& batch,
                          const GrpoConfig& cfg, PolicyGrads& acc, GrpoStats* stats = nullptr);

enum class RolloutMode { ClosedLoop, FeedForward };

struct UpdateMetrics {
  int update = 0;
  double mean_reward = 0.0, min_reward = 0.0, max_reward = 0.0;
  double mean_kl = 0.0;
  double adv_std = 0.0;
  double loss = 0.0;
};

/// Mutable training state; checkpointable for exact resume.
struct PolicyTrainState {
  PolicyParams policy;
  AdamState adam;
  int next_update = 0;
};

/// Runs GRPO updates [state.next_update, cfg.total_updates). Per update:
/// sample queries, collect groups on-policy, then inner_iters gradient steps
/// against the frozen old-policy quantities. Every update derives its random
/// streams from (root seed, update index), so interrupted runs resume
/// bit-exactly and thread count never matters.
void train_policy_updates(PolicyTrainState& state, const Env& env,
                          const std::vector<Query>& queries, const GrpoConfig& cfg,
                          RolloutMode mode, int n_refine_train, int threads, RandomSource& root,
                          const std::function<void(const UpdateMetrics&)>& on_update);

struct PolicyTrainResult {
  PolicyParams params;
  std::vector<UpdateMetrics> metrics;
};

/// Convenience wrapper: fresh policy, full run.
PolicyTrainResult train_policy(const Env& env, const std::vector<Query>& queries,
                               const GrpoConfig& cfg, RolloutMode mode, int n_refine_train,
                               const PolicyInit& init, RandomSource& root, int threads = 1);

}  // namespace steerloop
