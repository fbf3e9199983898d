#include "steerloop/dataset.hpp"

#include <cmath>
#include <limits>

#include "steerloop/errors.hpp"

namespace steerloop {

MixtureDataset::MixtureDataset(int n_modes, double r, double s)
    : modes(n_modes), radius(r), mode_std(s) {
  if (n_modes < 1) throw ConfigError("MixtureDataset: need at least one mode");
  if (!(r > 0.0)) throw ConfigError("MixtureDataset: radius must be positive");
  if (!(s > 0.0)) throw ConfigError("MixtureDataset: mode std must be positive");
  centers.resize(n_modes);
  for (int k = 0; k < n_modes; ++k) {
    const double a = 2.0 * M_PI * k / n_modes;
    centers[k] = {r * std::cos(a), r * std::sin(a)};
  }
}

const Point& MixtureDataset::center(int k) const {
  if (k < 0 || k >= modes) throw UsageError("MixtureDataset: mode index out of range");
  return centers[k];
}

namespace {
double sqdist(Point a, Point b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  return dx * dx + dy * dy;
}
}  // namespace

int MixtureDataset::nearest_mode(Point x) const {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (int k = 0; k < modes; ++k) {
    const double d = sqdist(x, centers[k]);
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  return best;
}

int MixtureDataset::nearest_of(Point x, const std::vector<int>& candidates) const {
  if (candidates.empty()) throw UsageError("nearest_of: empty candidate set");
  int best = candidates.front();
  double bd = std::numeric_limits<double>::infinity();
  for (int k : candidates) {
    const double d = sqdist(x, center(k));
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  return best;
}

Vec token_mode_weights(const Vocabulary& vocab, int token) {
  if (!vocab.valid(token)) throw UsageError("token_mode_weights: invalid token");
  Vec w(vocab.modes, 0.0);
  if (vocab.is_mode(token)) {
    w[token] = 1.0;
  } else if (vocab.is_ambig(token)) {
    const auto [i, j] = vocab.ambig_modes(token);
    w[i] += 0.5;
    w[j] += 0.5;
  } else {
    // NULL and reserved style tokens carry no preference.
    for (double& x : w) x = 1.0 / vocab.modes;
  }
  return w;
}

Vec prompt_mode_weights(const Vocabulary& vocab, const Prompt& prompt) {
  if (prompt.ids.empty()) throw UsageError("prompt_mode_weights: empty prompt");
  Vec w(vocab.modes, 0.0);
  for (int32_t id : prompt.ids) {
    const Vec tw = token_mode_weights(vocab, id);
    for (int k = 0; k < vocab.modes; ++k) w[k] += tw[k];
  }
  const double inv = 1.0 / static_cast<double>(prompt.ids.size());
  for (double& x : w) x *= inv;
  return w;
}

std::vector<Prompt> denoiser_prompt_pool(const Vocabulary& vocab, int prompt_len) {
  std::vector<Prompt> pool;
  for (int k = 0; k < vocab.modes; ++k) {
    for (int j = 1; j <= prompt_len; ++j) {
      Prompt p;
      p.ids.assign(prompt_len, vocab.null_token());
      for (int s = 0; s < j; ++s) p.ids[s] = vocab.mode_token(k);
      pool.push_back(std::move(p));
    }
  }
  Prompt blank;
  blank.ids.assign(prompt_len, vocab.null_token());
  pool.push_back(std::move(blank));
  for (int a = 0; a < vocab.ambig; ++a) {
    for (int j = 1; j <= std::min(2, prompt_len); ++j) {
      Prompt p;
      p.ids.assign(prompt_len, vocab.null_token());
      for (int s = 0; s < j; ++s) p.ids[s] = vocab.ambig_token(a);
      pool.push_back(std::move(p));
    }
  }
  return pool;
}

Point sample_mode_point(const MixtureDataset& dataset, int k, RandomSource& rng) {
  const Point& mu = dataset.center(k);
  return {mu[0] + dataset.mode_std * rng.gaussian(), mu[1] + dataset.mode_std * rng.gaussian()};
}

TrainingPair sample_training_pair(const MixtureDataset& dataset, const Vocabulary& vocab,
                                  const std::vector<Prompt>& pool, RandomSource& rng) {
  if (pool.empty()) throw UsageError("sample_training_pair: empty prompt pool");
  const Prompt& prompt = pool[rng.uniform_int(static_cast<int>(pool.size()))];
  const Vec w = prompt_mode_weights(vocab, prompt);
  const double u = rng.uniform();
  double cum = 0.0;
  int mode = vocab.modes - 1;
  for (int k = 0; k < vocab.modes; ++k) {
    cum += w[k];
    if (u < cum) {
      mode = k;
      break;
    }
  }
  return {sample_mode_point(dataset, mode, rng), prompt};
}

std::vector<Query> mode_query_pool(const Vocabulary& vocab, int prompt_len) {
  std::vector<Query> out;
  for (int k = 0; k < vocab.modes; ++k) out.push_back(mode_query(vocab, k, prompt_len));
  return out;
}

std::vector<Query> ambig_query_pool(const Vocabulary& vocab, int prompt_len) {
  std::vector<Query> out;
  for (int a = 0; a < vocab.ambig; ++a) out.push_back(ambig_query(vocab, a, prompt_len));
  return out;
}

}  // namespace steerloop
