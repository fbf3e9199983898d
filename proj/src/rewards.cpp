#include "steerloop/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "steerloop/errors.hpp"

namespace steerloop {

RewardKind parse_reward_kind(const std::string& name) {
  if (name == "mode_match") return RewardKind::ModeMatch;
  if (name == "ambiguous_nearest") return RewardKind::AmbiguousNearest;
  if (name == "composite") return RewardKind::Composite;
  throw ConfigError("unknown reward kind '" + name +
                    "' (expected mode_match|ambiguous_nearest|composite)");
}

std::string reward_kind_name(RewardKind kind) {
  switch (kind) {
    case RewardKind::ModeMatch: return "mode_match";
    case RewardKind::AmbiguousNearest: return "ambiguous_nearest";
    default: return "composite";
  }
}

namespace {

double gaussian_score(Point x0, Point mu, double bandwidth) {
  const double dx = x0[0] - mu[0];
  const double dy = x0[1] - mu[1];
  return std::exp(-(dx * dx + dy * dy) / (2.0 * bandwidth * bandwidth));
}

int find_token(const Query& q, const Vocabulary& vocab, bool ambig) {
  for (int32_t id : q.ids) {
    if (ambig ? vocab.is_ambig(id) : vocab.is_mode(id)) return id;
  }
  return -1;
}

}  // namespace

double mode_match(Point x0, const Query& q, const MixtureDataset& dataset, const Vocabulary& vocab,
                  double bandwidth) {
  const int tok = find_token(q, vocab, /*ambig=*/false);
  if (tok < 0) throw UsageError("mode_match: query names no mode token");
  return gaussian_score(x0, dataset.center(tok), bandwidth);
}

double ambiguous_nearest(Point x0, const Query& q, const MixtureDataset& dataset,
                         const Vocabulary& vocab, double bandwidth) {
  const int tok = find_token(q, vocab, /*ambig=*/true);
  if (tok < 0) throw UsageError("ambiguous_nearest: query names no ambiguous token");
  const auto [i, j] = vocab.ambig_modes(tok);
  return std::max(gaussian_score(x0, dataset.center(i), bandwidth),
                  gaussian_score(x0, dataset.center(j), bandwidth));
}

RewardValue composite(Point x0, const Query& q, const Prompt& final_prompt, const RewardSpec& spec,
                      const MixtureDataset& dataset, const Vocabulary& vocab) {
  RewardValue v;
  v.match = find_token(q, vocab, /*ambig=*/true) >= 0
                ? ambiguous_nearest(x0, q, dataset, vocab, spec.bandwidth)
                : mode_match(x0, q, dataset, vocab, spec.bandwidth);
  const int len = prompt_length(final_prompt, vocab);
  v.length_penalty =
      -static_cast<double>(std::max(0, len - spec.length_budget)) / final_prompt.length();
  v.format_bonus = find_token(final_prompt, vocab, /*ambig=*/false) >= 0 ? 1.0 : 0.0;
  v.total = spec.w_match * v.match + spec.w_len * v.length_penalty + spec.w_fmt * v.format_bonus;
  return v;
}

RewardValue evaluate_reward(const RewardSpec& spec, Point x0, const Query& q,
                            const Prompt& final_prompt, const MixtureDataset& dataset,
                            const Vocabulary& vocab) {
  switch (spec.kind) {
    case RewardKind::ModeMatch: {
      RewardValue v;
      v.match = mode_match(x0, q, dataset, vocab, spec.bandwidth);
      v.total = v.match;
      return v;
    }
    case RewardKind::AmbiguousNearest: {
      RewardValue v;
      v.match = ambiguous_nearest(x0, q, dataset, vocab, spec.bandwidth);
      v.total = v.match;
      return v;
    }
    default:
      return composite(x0, q, final_prompt, spec, dataset, vocab);
  }
}

}  // namespace steerloop
