#pragma once

#include <span>
#include <utility>
#include <vector>

#include "steerloop/dataset.hpp"
#include "steerloop/numerics.hpp"
#include "steerloop/prompt.hpp"

namespace steerloop {

/// Refinement-policy state: the denoised estimate, the prompt currently
/// driving the sampler, the original query, and the timestep.
struct MdpState {
  Point x_hat = {0.0, 0.0};
  Prompt prompt;
  Query query;
  int t = 1;
  int T = 1;
};

enum class Feedback { On, Off };

/// Factorized categorical policy: shared relu trunk, one logits head per
/// prompt slot. Slot draws are independent, so log-probabilities sum and the
/// whole V^L action space is enumerable in tests.
struct PolicyParams {
  Mat token_emb;   // vocab x d_emb, featurizes both c_t and q
  MlpParams trunk; // input 2 + 2 d_emb + d_time -> hidden (relu, activated output)
  std::vector<Mat> head_w;  // per slot: vocab x trunk_out
  std::vector<Vec> head_b;
  int d_emb = 0;
  int d_time = 0;
  int T = 0;
  int prompt_len = 0;
  int vocab_size = 0;
};

struct PolicyGrads {
  Mat token_emb;
  MlpGrads trunk;
  std::vector<Mat> head_w;
  std::vector<Vec> head_b;
};

PolicyGrads make_zero_grads(const PolicyParams& p);
std::vector<std::span<double>> param_spans(PolicyParams& p);
std::vector<std::span<const double>> grad_spans(const PolicyGrads& g);

struct PolicyInit {
  std::vector<int> hidden = {64, 64};
  int d_emb = 8;
  int d_time = 16;
  double emb_scale = 0.3;
  // Heads start at zero so every slot opens uniform.
};

PolicyParams init_policy(const Vocabulary& vocab, int T, int prompt_len, const PolicyInit& init,
                         RandomSource& rng);

/// One log-probability vector per prompt slot.
struct ActionDistribution {
  std::vector<Vec> slot_logprobs;
};

/// [x_hat | emb(c_t) | emb(q) | time]. Feedback::Off zeroes the x_hat block
/// and nothing else. The x_hat block is clamped to a fixed numeric range so
/// early-step estimates from an untrained denoiser cannot blow up the trunk.
Vec featurize_state(const PolicyParams& p, const MdpState& s, Feedback feedback);

struct PolicyCache {
  MlpCache trunk;
  Vec features;
  Vec hidden;
  std::vector<Vec> logits;
};

ActionDistribution policy_distribution(const PolicyParams& p, const MdpState& s, Feedback feedback,
                                       PolicyCache* cache = nullptr);

struct SampledAction {
  Prompt action;
  double logprob = 0.0;       // sum over slots
  Vec slot_logprobs;          // per-slot log pi(a_slot | s)
};

SampledAction sample_action(const PolicyParams& p, const MdpState& s, Feedback feedback,
                            RandomSource& rng);

/// Exact log pi(action | state); optionally the per-slot terms.
double action_logprob(const PolicyParams& p, const MdpState& s, Feedback feedback,
                      const Prompt& action, Vec* slot_logprobs = nullptr);

/// Backprop per-slot logit gradients through heads, trunk, and the embedding
/// rows of c_t and q. `d_logits` has one vocab-sized vector per slot.
void policy_backward(const PolicyParams& p, const MdpState& s, Feedback feedback,
                     const PolicyCache& cache, const std::vector<Vec>& d_logits, PolicyGrads& acc);

}  // namespace steerloop
