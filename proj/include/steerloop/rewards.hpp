#pragma once

#include <string>

#include "steerloop/dataset.hpp"
#include "steerloop/prompt.hpp"

namespace steerloop {

enum class RewardKind { ModeMatch, AmbiguousNearest, Composite };

RewardKind parse_reward_kind(const std::string& name);
std::string reward_kind_name(RewardKind kind);

struct RewardSpec {
  RewardKind kind = RewardKind::ModeMatch;
  double bandwidth = 1.0;  // wider than the mode std so partial credit spreads group rewards
  // Composite only:
  double w_match = 1.0;
  double w_len = 0.5;
  double w_fmt = 0.2;
  int length_budget = 1;
};

struct RewardValue {
  double total = 0.0;
  double match = 0.0;
  double length_penalty = 0.0;
  double format_bonus = 0.0;
};

/// exp(-|x0 - mu_q|^2 / (2 bandwidth^2)) against the mode named by the query.
double mode_match(Point x0, const Query& q, const MixtureDataset& dataset, const Vocabulary& vocab,
                  double bandwidth);

/// Max of mode_match over the two modes allowed by the query's AMBIG token.
double ambiguous_nearest(Point x0, const Query& q, const MixtureDataset& dataset,
                         const Vocabulary& vocab, double bandwidth);

/// Weighted alignment + length-budget penalty + has-a-mode-token bonus.
RewardValue composite(Point x0, const Query& q, const Prompt& final_prompt, const RewardSpec& spec,
                      const MixtureDataset& dataset, const Vocabulary& vocab);

/// Dispatch on the spec; pure function of (x0, q, final prompt).
RewardValue evaluate_reward(const RewardSpec& spec, Point x0, const Query& q,
                            const Prompt& final_prompt, const MixtureDataset& dataset,
                            const Vocabulary& vocab);

}  // namespace steerloop
