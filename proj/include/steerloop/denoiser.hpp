#pragma once

#include <optional>
#include <span>
#include <vector>

#include "steerloop/dataset.hpp"
#include "steerloop/numerics.hpp"
#include "steerloop/prompt.hpp"
#include "steerloop/schedule.hpp"

namespace steerloop {

/// Noise-prediction network: MLP over [x, mean token embedding, sinusoidal
/// time features]. The token table is trained jointly with the MLP; time
/// features are fixed.
struct DenoiserParams {
  MlpParams mlp;  // input 2 + d_emb + d_time -> hidden (tanh) -> 2
  Mat token_emb;  // vocab x d_emb
  int d_emb = 0;
  int d_time = 0;
  int T = 0;
  int prompt_len = 0;
};

struct DenoiserGrads {
  MlpGrads mlp;
  Mat token_emb;
};

DenoiserGrads make_zero_grads(const DenoiserParams& p);
std::vector<std::span<double>> param_spans(DenoiserParams& p);
std::vector<std::span<const double>> grad_spans(const DenoiserGrads& g);

struct DenoiserInit {
  std::vector<int> hidden = {64, 64};
  int d_emb = 8;
  int d_time = 16;
  double emb_scale = 0.3;
};

DenoiserParams init_denoiser(const Vocabulary& vocab, int T, int prompt_len,
                             const DenoiserInit& init, RandomSource& rng);

Vec denoiser_input(const DenoiserParams& p, Point x, const Prompt& prompt, int t);
Point predict_noise(const DenoiserParams& p, Point x, const Prompt& prompt, int t,
                    MlpCache* cache = nullptr);

/// Backprop `d_eps` through the network at a cached forward pass, including
/// the token-embedding rows touched by `prompt`.
void accumulate_noise_grads(const DenoiserParams& p, const MlpCache& cache, const Prompt& prompt,
                            Point d_eps, DenoiserGrads& acc);

/// Closed-form q(x_t | x_0) draw with externally supplied noise.
Point forward_noise(Point x0, int t, Point eps, const NoiseSchedule& s);

struct EpsItem {
  Point x0;
  Prompt prompt;
  int t = 1;
  Point eps;
};

/// Squared error between predicted and injected noise, averaged over batch
/// items and coordinates. Gradients accumulate into `grads` when non-null.
double epsilon_loss_and_grad(const DenoiserParams& p, std::span<const EpsItem> batch,
                             const NoiseSchedule& s, DenoiserGrads* grads);

struct DenoiserTrainConfig {
  DenoiserInit init;
  int steps = 30000;
  int batch = 64;
  double lr = 1e-3;
  int log_every = 200;
};

struct LossPoint {
  int step;
  double loss;
};

struct DenoiserTrainResult {
  DenoiserParams params;
  std::vector<LossPoint> curve;
};

DenoiserTrainResult train_denoiser(const MixtureDataset& dataset, const Vocabulary& vocab,
                                   const NoiseSchedule& schedule, int prompt_len,
                                   const DenoiserTrainConfig& cfg, RandomSource& rng);

/// One reverse step of the ancestral sampler.
Point ddpm_step(const DenoiserParams& p, const NoiseSchedule& s, Point x_t, const Prompt& prompt,
                int t, Point z);

/// One reverse step of the deterministic-interpolation sampler; eta scales
/// the injected noise (eta = 0 is fully deterministic, eta = 1 matches the
/// ancestral sampler's marginals).
Point ddim_step(const DenoiserParams& p, const NoiseSchedule& s, Point x_t, const Prompt& prompt,
                int t, double eta, Point z = {0.0, 0.0});

/// Inverts the closed-form noising given a noise estimate (shared algebra of
/// the denoised estimate and the interpolation sampler).
Point invert_noise(const NoiseSchedule& s, Point x_t, Point eps, int t);

/// One-shot estimate of x0 from x_t via the predicted noise. The feedback
/// signal consumed by the refinement policy.
Point denoised_estimate(const DenoiserParams& p, const NoiseSchedule& s, Point x_t,
                        const Prompt& prompt, int t);

}  // namespace steerloop
