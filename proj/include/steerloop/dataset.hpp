#pragma once

#include <array>
#include <vector>

#include "steerloop/numerics.hpp"
#include "steerloop/prompt.hpp"

namespace steerloop {

using Point = std::array<double, 2>;

/// Gaussian mixture on a circle, with prompt semantics attached.
///
/// Each token denotes a distribution over modes: MODE_k is the point mass on
/// k, NULL is uniform over all modes, AMBIG_i_j is uniform over {i, j}. A
/// prompt denotes the mean of its tokens' distributions, so a terse query
/// like "MODE_3 NULL NULL NULL" only weakly prefers mode 3, while
/// "MODE_3 MODE_3 MODE_3 MODE_3" pins it. The denoiser is trained on pairs
/// drawn from these semantics, which is what gives refined prompts something
/// to improve over the raw query.
struct MixtureDataset {
  int modes = 0;
  double radius = 0.0;
  double mode_std = 0.0;
  std::vector<Point> centers;

  MixtureDataset() = default;
  MixtureDataset(int n_modes, double r, double s);

  const Point& center(int k) const;
  int nearest_mode(Point x) const;
  /// Nearest among an explicit candidate set (used by hand-coded controllers).
  int nearest_of(Point x, const std::vector<int>& candidates) const;
};

/// Mixture weights over modes implied by one token.
Vec token_mode_weights(const Vocabulary& vocab, int token);

/// Mixture weights implied by a whole prompt (mean over slots).
Vec prompt_mode_weights(const Vocabulary& vocab, const Prompt& prompt);

struct TrainingPair {
  Point x0;
  Prompt prompt;
};

/// Prompt pool used to train the denoiser: every mode at every dilution
/// level (j mode tokens + (L-j) NULLs, j = 1..L), the all-NULL prompt, and
/// lightly diluted ambiguous prompts.
std::vector<Prompt> denoiser_prompt_pool(const Vocabulary& vocab, int prompt_len);

/// Draws (x0, prompt): a pool prompt, a mode from its implied weights, and a
/// sample from that mode.
TrainingPair sample_training_pair(const MixtureDataset& dataset, const Vocabulary& vocab,
                                  const std::vector<Prompt>& pool, RandomSource& rng);

Point sample_mode_point(const MixtureDataset& dataset, int k, RandomSource& rng);

/// Queries used for tasks: terse single-token prompts.
std::vector<Query> mode_query_pool(const Vocabulary& vocab, int prompt_len);
std::vector<Query> ambig_query_pool(const Vocabulary& vocab, int prompt_len);

}  // namespace steerloop
