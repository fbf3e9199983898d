#pragma once

#include <string>

#include <json.hpp>

#include "steerloop/baselines.hpp"
#include "steerloop/denoiser.hpp"
#include "steerloop/environment.hpp"
#include "steerloop/grpo.hpp"
#include "steerloop/policy.hpp"

namespace steerloop {

using json = nlohmann::json;

// Versioned JSON records of all matrices plus the descriptors needed to
// rebuild the surrounding objects.

json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const json& j);

json vocab_to_json(const Vocabulary& v);
Vocabulary vocab_from_json(const json& j);

json denoiser_to_json(const DenoiserParams& p, const NoiseSchedule& s, const Vocabulary& v);
struct DenoiserCheckpoint {
  DenoiserParams params;
  NoiseSchedule schedule;
  Vocabulary vocab;
};
DenoiserCheckpoint denoiser_from_json(const json& j);

json policy_to_json(const PolicyParams& p);
PolicyParams policy_from_json(const json& j);

json train_state_to_json(const PolicyTrainState& s);
PolicyTrainState train_state_from_json(const json& j);

json episode_to_json(const EpisodeRecord& ep, const Vocabulary& vocab);

void save_json(const json& j, const std::string& path, int indent = -1);
json load_json(const std::string& path);

void save_denoiser(const DenoiserParams& p, const NoiseSchedule& s, const Vocabulary& v,
                   const std::string& path);
DenoiserCheckpoint load_denoiser(const std::string& path);

void save_policy(const PolicyParams& p, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace steerloop
