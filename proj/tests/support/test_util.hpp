#pragma once

#include <algorithm>
#include <cmath>

#include "steerloop/denoiser.hpp"
#include "steerloop/environment.hpp"
#include "steerloop/policy.hpp"

namespace steerloop::testutil {

/// Denoiser whose network output is the constant `value` for every input
/// (zero weights, final bias = value). With value equal to the injected
/// noise this is an oracle noise predictor.
inline DenoiserParams constant_denoiser(const Vocabulary& vocab, int T, int prompt_len,
                                        Point value) {
  RandomSource rng(0);
  DenoiserInit init;
  init.hidden = {4};
  init.d_emb = 4;
  init.d_time = 4;
  DenoiserParams p = init_denoiser(vocab, T, prompt_len, init, rng);
  for (Mat& w : p.mlp.weights) std::fill(w.a.begin(), w.a.end(), 0.0);
  for (Vec& b : p.mlp.biases) std::fill(b.begin(), b.end(), 0.0);
  p.mlp.biases.back() = {value[0], value[1]};
  return p;
}

/// Small randomly initialized denoiser (no training).
inline DenoiserParams random_denoiser(const Vocabulary& vocab, int T, int prompt_len,
                                      uint64_t seed, std::vector<int> hidden = {16, 16}) {
  RandomSource rng(seed);
  DenoiserInit init;
  init.hidden = std::move(hidden);
  init.d_emb = 4;
  init.d_time = 8;
  return init_denoiser(vocab, T, prompt_len, init, rng);
}

inline PolicyParams random_policy(const Vocabulary& vocab, int T, int prompt_len, uint64_t seed,
                                  std::vector<int> hidden = {16, 16}) {
  RandomSource rng(seed);
  PolicyInit init;
  init.hidden = std::move(hidden);
  init.d_emb = 4;
  init.d_time = 8;
  return init_policy(vocab, T, prompt_len, init, rng);
}

/// Policy whose heads are biased so hard toward `target` that sampling is
/// effectively deterministic.
inline PolicyParams pinned_policy(const Vocabulary& vocab, int T, const Prompt& target,
                                  uint64_t seed = 3) {
  PolicyParams p = random_policy(vocab, T, target.length(), seed);
  for (size_t slot = 0; slot < p.head_w.size(); ++slot) {
    std::fill(p.head_w[slot].a.begin(), p.head_w[slot].a.end(), 0.0);
    std::fill(p.head_b[slot].begin(), p.head_b[slot].end(), 0.0);
    p.head_b[slot][target.ids[slot]] = 200.0;
  }
  return p;
}

inline double dist(Point a, Point b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

/// Desk-lite trained world: same layout as the desk defaults but with a
/// shorter training budget. Trained once per test binary.
struct TrainedWorld {
  Vocabulary vocab;
  MixtureDataset dataset;
  NoiseSchedule schedule;
  DenoiserParams denoiser;
  int prompt_len = 4;

  Env env(RewardKind kind) const {
    Env e;
    e.denoiser = &denoiser;
    e.schedule = &schedule;
    e.dataset = &dataset;
    e.vocab = &vocab;
    e.reward.kind = kind;
    return e;
  }
};

inline const TrainedWorld& trained_world() {
  static const TrainedWorld world = [] {
    TrainedWorld w{Vocabulary(8), MixtureDataset(8, 5.0, 0.1),
                   make_schedule(50, 1e-3, 0.35, ScheduleKind::Linear), DenoiserParams{}, 4};
    DenoiserTrainConfig cfg;
    cfg.init.hidden = {48, 48};
    cfg.steps = 10000;
    cfg.batch = 64;
    cfg.lr = 1e-3;
    RandomSource rng(2718);
    w.denoiser = train_denoiser(w.dataset, w.vocab, w.schedule, w.prompt_len, cfg, rng).params;
    return w;
  }();
  return world;
}

}  // namespace steerloop::testutil
