#include "steerloop/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "steerloop/errors.hpp"

namespace steerloop {

KlDirection parse_kl_direction(const std::string& name) {
  if (name == "old_new") return KlDirection::OldNew;
  if (name == "new_old") return KlDirection::NewOld;
  throw ConfigError("unknown kl direction '" + name + "' (expected old_new|new_old)");
}

std::string kl_direction_name(KlDirection dir) {
  return dir == KlDirection::OldNew ? "old_new" : "new_old";
}

Vec group_advantages(const Vec& rewards, double eps_std) {
  const int g = static_cast<int>(rewards.size());
  if (g < 2) throw ConfigError("group_advantages: need a group of size >= 2");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= g;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= g;  // population variance, no Bessel correction
  const double std = std::sqrt(var);
  Vec adv(g, 0.0);
  if (std < eps_std) return adv;
  for (int i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / std;
  return adv;
}

double token_surrogate(double new_lp, double old_lp, double advantage, double clip_eps,
                       double* d_newlp) {
  const double rho = std::exp(new_lp - old_lp);
  const double unclipped = rho * advantage;
  const double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
  if (unclipped <= clipped) {
    if (d_newlp) *d_newlp = rho * advantage;
    return unclipped;
  }
  if (d_newlp) *d_newlp = 0.0;
  return clipped;
}

namespace {

double kl_one_direction(const ActionDistribution& old_dist, const ActionDistribution& new_dist,
                        KlDirection dir) {
  if (old_dist.slot_logprobs.size() != new_dist.slot_logprobs.size())
    throw UsageError("kl_penalty: slot count mismatch");
  double kl = 0.0;
  for (size_t s = 0; s < old_dist.slot_logprobs.size(); ++s) {
    const Vec& lo = old_dist.slot_logprobs[s];
    const Vec& ln = new_dist.slot_logprobs[s];
    if (lo.size() != ln.size()) throw UsageError("kl_penalty: vocab size mismatch");
    for (size_t v = 0; v < lo.size(); ++v) {
      kl += dir == KlDirection::OldNew ? std::exp(lo[v]) * (lo[v] - ln[v])
                                       : std::exp(ln[v]) * (ln[v] - lo[v]);
    }
  }
  return kl;
}

}  // namespace

double kl_penalty(const ActionDistribution& old_dist, const ActionDistribution& new_dist) {
  return kl_one_direction(old_dist, new_dist, KlDirection::OldNew);
}

GroupBatch make_group_batch(Query q, std::vector<EpisodeRecord> episodes, Feedback feedback,
                            double eps_std) {
  GroupBatch b;
  b.query = std::move(q);
  b.episodes = std::move(episodes);
  b.feedback = feedback;
  Vec rewards;
  rewards.reserve(b.episodes.size());
  for (const EpisodeRecord& ep : b.episodes) rewards.push_back(ep.reward.total);
  b.advantages = group_advantages(rewards, eps_std);
  return b;
}

double grpo_loss_and_grad(const PolicyParams& policy, const GroupBatch& batch,
                          const GrpoConfig& cfg, PolicyGrads& acc, GrpoStats* stats) {
  if (batch.episodes.size() != batch.advantages.size())
    throw UsageError("grpo_loss_and_grad: advantage list does not match episodes");
  long n_tokens = 0;
  long n_events = 0;
  for (const EpisodeRecord& ep : batch.episodes) {
    n_events += static_cast<long>(ep.events.size());
    n_tokens += static_cast<long>(ep.events.size()) * policy.prompt_len;
  }
  if (n_tokens == 0) throw UsageError("grpo_loss_and_grad: batch has no refinement events");

  const double inv_tok = 1.0 / static_cast<double>(n_tokens);
  const double inv_ev = 1.0 / static_cast<double>(n_events);
  double surrogate_sum = 0.0;
  double kl_sum = 0.0;

  PolicyCache cache;
  for (size_t i = 0; i < batch.episodes.size(); ++i) {
    const EpisodeRecord& ep = batch.episodes[i];
    const double adv = batch.advantages[i];
    for (const RefinementEvent& ev : ep.events) {
      if (ev.old_slot_logprobs.size() != static_cast<size_t>(policy.prompt_len) ||
          ev.old_dist.slot_logprobs.size() != static_cast<size_t>(policy.prompt_len))
        throw UsageError("grpo_loss_and_grad: event's stored log-probs misaligned with slots");
      const ActionDistribution dist = policy_distribution(policy, ev.state, batch.feedback, &cache);
      std::vector<Vec> d_logits(policy.prompt_len, Vec(policy.vocab_size, 0.0));
      for (int slot = 0; slot < policy.prompt_len; ++slot) {
        const int a = ev.action.ids[slot];
        const double new_lp = dist.slot_logprobs[slot][a];
        double d_newlp = 0.0;
        surrogate_sum += token_surrogate(new_lp, ev.old_slot_logprobs[slot], adv, cfg.clip_eps,
                                         &d_newlp);
        // d new_lp / d logits = onehot(a) - softmax(logits)
        const double w = -inv_tok * d_newlp;
        if (w != 0.0) {
          Vec& dl = d_logits[slot];
          for (int v = 0; v < policy.vocab_size; ++v)
            dl[v] -= w * std::exp(dist.slot_logprobs[slot][v]);
          dl[a] += w;
        }
      }
      kl_sum += kl_one_direction(ev.old_dist, dist, cfg.kl_dir);
      if (cfg.kl_beta != 0.0) {
        const double w = cfg.kl_beta * inv_ev;
        for (int slot = 0; slot < policy.prompt_len; ++slot) {
          Vec& dl = d_logits[slot];
          const Vec& lo = ev.old_dist.slot_logprobs[slot];
          const Vec& ln = dist.slot_logprobs[slot];
          if (cfg.kl_dir == KlDirection::OldNew) {
            for (int v = 0; v < policy.vocab_size; ++v)
              dl[v] += w * (std::exp(ln[v]) - std::exp(lo[v]));
          } else {
            double kl_slot = 0.0;
            for (int v = 0; v < policy.vocab_size; ++v)
              kl_slot += std::exp(ln[v]) * (ln[v] - lo[v]);
            for (int v = 0; v < policy.vocab_size; ++v)
              dl[v] += w * std::exp(ln[v]) * (ln[v] - lo[v] - kl_slot);
          }
        }
      }
      policy_backward(policy, ev.state, batch.feedback, cache, d_logits, acc);
    }
  }

  const double loss = -surrogate_sum * inv_tok + cfg.kl_beta * kl_sum * inv_ev;
  if (stats) {
    stats->loss = loss;
    stats->surrogate = surrogate_sum * inv_tok;
    stats->mean_kl = kl_sum * inv_ev;
    double mn = batch.episodes.front().reward.total, mx = mn, sum = 0.0;
    for (const EpisodeRecord& ep : batch.episodes) {
      const double r = ep.reward.total;
      mn = std::min(mn, r);
      mx = std::max(mx, r);
      sum += r;
    }
    stats->mean_reward = sum / static_cast<double>(batch.episodes.size());
    stats->min_reward = mn;
    stats->max_reward = mx;
    double var = 0.0;
    for (double a : batch.advantages) var += a * a;
    stats->adv_std = std::sqrt(var / static_cast<double>(batch.advantages.size()));
  }
  return loss;
}

namespace {

std::vector<EpisodeRecord> collect_group(const Env& env, const PolicyParams& policy,
                                         const Query& q, const GrpoConfig& cfg, RolloutMode mode,
                                         int n_refine, RandomSource& rng, int threads) {
  if (mode == RolloutMode::ClosedLoop)
    return rollout_group(env, policy, q, cfg.group_size, n_refine, rng,
                         cfg.resample_schedule_per_member, threads);
  // Feed-forward: one masked refinement at t = T, prompt held for all steps.
  Env ff = env;
  ff.config.feedback = Feedback::Off;
  RefinementSchedule sched;
  sched.steps = {env.schedule->T};
  std::vector<EpisodeRecord> out(cfg.group_size);
  std::vector<RandomSource> seeds;
  seeds.reserve(cfg.group_size);
  for (int g = 0; g < cfg.group_size; ++g) seeds.push_back(rng.split("episode", g));
  parallel_for(cfg.group_size, threads,
               [&](int g) { out[g] = rollout(ff, policy, q, sched, seeds[g]); });
  return out;
}

}  // namespace

void train_policy_updates(PolicyTrainState& state, const Env& env,
                          const std::vector<Query>& queries, const GrpoConfig& cfg,
                          RolloutMode mode, int n_refine_train, int threads, RandomSource& root,
                          const std::function<void(const UpdateMetrics&)>& on_update) {
  if (queries.empty()) throw ConfigError("train_policy: empty query pool");
  if (cfg.group_size < 2) throw ConfigError("train_policy: group size must be >= 2");
  const Feedback fb_used = mode == RolloutMode::ClosedLoop ? env.config.feedback : Feedback::Off;

  state.adam.lr = cfg.lr;
  for (int u = state.next_update; u < cfg.total_updates; ++u) {
    RandomSource urng = root.split("update", static_cast<uint64_t>(u));

    std::vector<GroupBatch> batches;
    batches.reserve(cfg.queries_per_batch);
    for (int qi = 0; qi < cfg.queries_per_batch; ++qi) {
      RandomSource qrng = urng.split("batch", qi);
      const Query& q = queries[qrng.uniform_int(static_cast<int>(queries.size()))];
      RandomSource grng = qrng.split("group");
      std::vector<EpisodeRecord> eps =
          collect_group(env, state.policy, q, cfg, mode, n_refine_train, grng, threads);
      batches.push_back(make_group_batch(q, std::move(eps), fb_used, cfg.eps_std));
    }

    UpdateMetrics row;
    row.update = u;
    const double inv_q = 1.0 / static_cast<double>(batches.size());
    for (int it = 0; it < cfg.inner_iters; ++it) {
      PolicyGrads acc = make_zero_grads(state.policy);
      double loss = 0.0;
      for (const GroupBatch& b : batches) {
        GrpoStats st;
        loss += grpo_loss_and_grad(state.policy, b, cfg, acc, &st) * inv_q;
        if (it == 0) {
          row.mean_reward += st.mean_reward * inv_q;
          row.min_reward = (&b == &batches.front()) ? st.min_reward
                                                    : std::min(row.min_reward, st.min_reward);
          row.max_reward = (&b == &batches.front()) ? st.max_reward
                                                    : std::max(row.max_reward, st.max_reward);
          row.adv_std += st.adv_std * inv_q;
        }
      }
      if (!std::isfinite(loss))
        throw TrainingError("train_policy: loss diverged at update " + std::to_string(u));
      row.loss = loss;
      if (inv_q != 1.0) {
        auto scale = [&](std::span<double> s) {
          for (double& x : s) x *= inv_q;
        };
        scale(acc.token_emb.a);
        for (size_t l = 0; l < acc.trunk.weights.size(); ++l) {
          scale(acc.trunk.weights[l].a);
          scale(acc.trunk.biases[l]);
        }
        for (size_t h = 0; h < acc.head_w.size(); ++h) {
          scale(acc.head_w[h].a);
          scale(acc.head_b[h]);
        }
      }
      adam_step(state.adam, param_spans(state.policy), grad_spans(acc));
    }

    // Post-update distance from the collection policy.
    double kl_sum = 0.0;
    long n_events = 0;
    for (const GroupBatch& b : batches) {
      for (const EpisodeRecord& ep : b.episodes) {
        for (const RefinementEvent& ev : ep.events) {
          const ActionDistribution now = policy_distribution(state.policy, ev.state, b.feedback);
          kl_sum += kl_one_direction(ev.old_dist, now, cfg.kl_dir);
          ++n_events;
        }
      }
    }
    row.mean_kl = n_events > 0 ? kl_sum / static_cast<double>(n_events) : 0.0;

    state.next_update = u + 1;
    on_update(row);
  }
}

PolicyTrainResult train_policy(const Env& env, const std::vector<Query>& queries,
                               const GrpoConfig& cfg, RolloutMode mode, int n_refine_train,
                               const PolicyInit& init, RandomSource& root, int threads) {
  PolicyTrainState state;
  RandomSource init_rng = root.split("policy-init");
  state.policy = init_policy(*env.vocab, env.schedule->T, env.denoiser->prompt_len, init, init_rng);
  PolicyTrainResult out;
  train_policy_updates(state, env, queries, cfg, mode, n_refine_train, threads, root,
                       [&](const UpdateMetrics& m) { out.metrics.push_back(m); });
  out.params = std::move(state.policy);
  return out;
}

}  // namespace steerloop
