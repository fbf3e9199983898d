#pragma once

#include <stdexcept>
#include <string>

namespace steerloop {

// Invalid dimensions, bounds, or option values supplied at setup time.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A precondition violated by the caller (out-of-range timestep, stale cache, ...).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged (non-finite loss or parameters).
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// A rollout produced a non-finite latent; carries a trajectory dump.
struct EpisodeError : std::runtime_error {
  explicit EpisodeError(const std::string& msg, std::string dump)
      : std::runtime_error(msg), trajectory_dump(std::move(dump)) {}
  std::string trajectory_dump;
};

}  // namespace steerloop
