#include "steerloop/denoiser.hpp"

#include <cmath>
#include <string>

#include "steerloop/errors.hpp"

namespace steerloop {

DenoiserGrads make_zero_grads(const DenoiserParams& p) {
  return {make_zero_grads(p.mlp), Mat(p.token_emb.rows, p.token_emb.cols)};
}

std::vector<std::span<double>> param_spans(DenoiserParams& p) {
  auto out = param_spans(p.mlp);
  out.emplace_back(p.token_emb.a);
  return out;
}

std::vector<std::span<const double>> grad_spans(const DenoiserGrads& g) {
  auto out = grad_spans(g.mlp);
  out.emplace_back(g.token_emb.a);
  return out;
}

DenoiserParams init_denoiser(const Vocabulary& vocab, int T, int prompt_len,
                             const DenoiserInit& init, RandomSource& rng) {
  if (T < 1) throw ConfigError("init_denoiser: T must be >= 1");
  if (prompt_len < 1) throw ConfigError("init_denoiser: prompt length must be >= 1");
  DenoiserParams p;
  p.d_emb = init.d_emb;
  p.d_time = init.d_time;
  p.T = T;
  p.prompt_len = prompt_len;
  std::vector<int> dims;
  dims.push_back(2 + init.d_emb + init.d_time);
  for (int h : init.hidden) dims.push_back(h);
  dims.push_back(2);
  p.mlp = make_mlp(dims, Activation::Tanh, rng);
  p.token_emb = Mat(vocab.size(), init.d_emb);
  for (double& x : p.token_emb.a) x = init.emb_scale * rng.gaussian();
  return p;
}

Vec denoiser_input(const DenoiserParams& p, Point x, const Prompt& prompt, int t) {
  Vec in;
  in.reserve(2 + p.d_emb + p.d_time);
  in.push_back(x[0]);
  in.push_back(x[1]);
  const Vec emb = embed_prompt(prompt, p.token_emb);
  in.insert(in.end(), emb.begin(), emb.end());
  const Vec tf = time_features(t, p.T, p.d_time);
  in.insert(in.end(), tf.begin(), tf.end());
  return in;
}

Point predict_noise(const DenoiserParams& p, Point x, const Prompt& prompt, int t,
                    MlpCache* cache) {
  const Vec out = mlp_forward(p.mlp, denoiser_input(p, x, prompt, t), cache);
  return {out[0], out[1]};
}

void accumulate_noise_grads(const DenoiserParams& p, const MlpCache& cache, const Prompt& prompt,
                            Point d_eps, DenoiserGrads& acc) {
  const Vec d_input = mlp_backward(p.mlp, cache, {d_eps[0], d_eps[1]}, acc.mlp);
  // The embedding block is the mean over prompt slots, so every token row
  // picks up d_input/L over its slice.
  const double inv = 1.0 / static_cast<double>(prompt.ids.size());
  for (int32_t id : prompt.ids) {
    auto row = acc.token_emb.row(id);
    for (int c = 0; c < p.d_emb; ++c) row[c] += inv * d_input[2 + c];
  }
}

Point forward_noise(Point x0, int t, Point eps, const NoiseSchedule& s) {
  const double ab = s.alpha_bar_t(t);
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  return {sa * x0[0] + sn * eps[0], sa * x0[1] + sn * eps[1]};
}

double epsilon_loss_and_grad(const DenoiserParams& p, std::span<const EpsItem> batch,
                             const NoiseSchedule& s, DenoiserGrads* grads) {
  if (batch.empty()) throw UsageError("epsilon_loss_and_grad: empty batch");
  const double inv_n = 1.0 / (static_cast<double>(batch.size()) * 2.0);
  double loss = 0.0;
  MlpCache cache;
  for (const EpsItem& item : batch) {
    const Point x_t = forward_noise(item.x0, item.t, item.eps, s);
    const Point pred = predict_noise(p, x_t, item.prompt, item.t, grads ? &cache : nullptr);
    const Point diff = {pred[0] - item.eps[0], pred[1] - item.eps[1]};
    loss += (diff[0] * diff[0] + diff[1] * diff[1]) * inv_n;
    if (grads)
      accumulate_noise_grads(p, cache, item.prompt, {2.0 * inv_n * diff[0], 2.0 * inv_n * diff[1]},
                             *grads);
  }
  return loss;
}

DenoiserTrainResult train_denoiser(const MixtureDataset& dataset, const Vocabulary& vocab,
                                   const NoiseSchedule& schedule, int prompt_len,
                                   const DenoiserTrainConfig& cfg, RandomSource& rng) {
  RandomSource init_rng = rng.split("init");
  RandomSource data_rng = rng.split("data");

  DenoiserTrainResult out;
  out.params = init_denoiser(vocab, schedule.T, prompt_len, cfg.init, init_rng);

  const std::vector<Prompt> pool = denoiser_prompt_pool(vocab, prompt_len);
  AdamState adam;
  adam.lr = cfg.lr;

  std::vector<EpsItem> batch(cfg.batch);
  for (int step = 0; step < cfg.steps; ++step) {
    for (EpsItem& item : batch) {
      TrainingPair pair = sample_training_pair(dataset, vocab, pool, data_rng);
      item.x0 = pair.x0;
      item.prompt = std::move(pair.prompt);
      item.t = 1 + data_rng.uniform_int(schedule.T);
      item.eps = {data_rng.gaussian(), data_rng.gaussian()};
    }
    DenoiserGrads grads = make_zero_grads(out.params);
    const double loss = epsilon_loss_and_grad(out.params, batch, schedule, &grads);
    if (!std::isfinite(loss))
      throw TrainingError("train_denoiser: loss diverged at step " + std::to_string(step));
    adam_step(adam, param_spans(out.params), grad_spans(grads));
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) out.curve.push_back({step, loss});
  }
  return out;
}

Point ddpm_step(const DenoiserParams& p, const NoiseSchedule& s, Point x_t, const Prompt& prompt,
                int t, Point z) {
  const double a = s.alpha_t(t);
  const double ab = s.alpha_bar_t(t);
  const double sig = s.sigma_t(t);
  const Point eps = predict_noise(p, x_t, prompt, t);
  const double coef = (1.0 - a) / std::sqrt(1.0 - ab);
  const double inv_sa = 1.0 / std::sqrt(a);
  return {inv_sa * (x_t[0] - coef * eps[0]) + sig * z[0],
          inv_sa * (x_t[1] - coef * eps[1]) + sig * z[1]};
}

Point invert_noise(const NoiseSchedule& s, Point x_t, Point eps, int t) {
  const double ab = s.alpha_bar_t(t);
  const double sn = std::sqrt(1.0 - ab);
  const double inv_sa = 1.0 / std::sqrt(ab);
  return {inv_sa * (x_t[0] - sn * eps[0]), inv_sa * (x_t[1] - sn * eps[1])};
}

Point ddim_step(const DenoiserParams& p, const NoiseSchedule& s, Point x_t, const Prompt& prompt,
                int t, double eta, Point z) {
  const Point eps = predict_noise(p, x_t, prompt, t);
  const Point x0 = invert_noise(s, x_t, eps, t);
  const double ab_prev = s.alpha_bar_prev(t);
  const double sig = eta * s.sigma_t(t);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sig * sig));
  const double sa_prev = std::sqrt(ab_prev);
  return {sa_prev * x0[0] + dir * eps[0] + sig * z[0],
          sa_prev * x0[1] + dir * eps[1] + sig * z[1]};
}

Point denoised_estimate(const DenoiserParams& p, const NoiseSchedule& s, Point x_t,
                        const Prompt& prompt, int t) {
  return invert_noise(s, x_t, predict_noise(p, x_t, prompt, t), t);
}

}  // namespace steerloop
