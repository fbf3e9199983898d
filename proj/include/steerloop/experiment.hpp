#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "steerloop/baselines.hpp"
#include "steerloop/checkpoint.hpp"
#include "steerloop/environment.hpp"
#include "steerloop/grpo.hpp"

namespace steerloop {

inline constexpr const char* kVersion = "0.1.0";

/// Flat key-value configuration ("section.key = value" lines, '#' comments).
/// Unknown keys are rejected by name; the fully resolved tree is echoed next
/// to every run's outputs.
struct ExperimentConfig {
  // run.*
  std::string out_dir = "runs/out";
  uint64_t seed = 1;
  int threads = 1;

  // dataset.*
  int modes = 8;
  double radius = 5.0;
  double mode_std = 0.1;

  // prompt.*
  int prompt_len = 4;

  // schedule.*
  int T = 50;
  double beta_min = 1e-3;
  double beta_max = 0.35;
  std::string schedule_kind = "linear";

  // denoiser.*
  std::vector<int> denoiser_hidden = {64, 64};
  int denoiser_d_emb = 8;
  int denoiser_d_time = 16;
  double denoiser_emb_scale = 0.3;
  int denoiser_steps = 30000;
  int denoiser_batch = 64;
  double denoiser_lr = 1e-3;
  int denoiser_log_every = 200;

  // policy.*
  std::vector<int> policy_hidden = {64, 64};
  int policy_d_emb = 8;
  int policy_d_time = 16;
  double policy_emb_scale = 0.3;

  // grpo.*
  GrpoConfig grpo;

  // env.*
  std::string sampler = "ddpm";
  double ddim_eta = 0.0;
  std::string feedback = "on";  // on|off
  int refine_steps_train = 2;
  int refine_steps_eval = 5;
  bool store_trajectory = false;
  std::string rollout_mode = "closed_loop";  // closed_loop|feedforward

  // reward.*
  RewardSpec reward;
  std::string query_kind = "auto";  // auto|mode|ambiguous|both

  // eval.*
  int eval_episodes = 200;
  std::string eval_mode = "closed-loop";  // closed-loop|precomputed|identity|feedforward
  int bootstrap_samples = 1000;
  bool dump_episodes = true;

  // sweep.*
  std::vector<int> sweep_refine_steps = {1, 2, 3, 5};

  // diffusion_rl.*
  DiffusionRlConfig diffrl;
  int diffrl_query_mode = 0;

  // ablate.*
  int ablate_episodes = 500;

  // paths.*
  std::string denoiser_path;
  std::string policy_path;
};

ExperimentConfig parse_config_file(const std::string& path);
void apply_config_line(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string resolved_config_text(const ExperimentConfig& cfg);

MixtureDataset dataset_from_config(const ExperimentConfig& cfg);
Vocabulary vocab_from_config(const ExperimentConfig& cfg);
NoiseSchedule schedule_from_config(const ExperimentConfig& cfg);
EnvConfig env_config_from_config(const ExperimentConfig& cfg);

std::vector<Query> task_query_pool(const Vocabulary& vocab, RewardKind kind,
                                   const std::string& query_kind, int prompt_len);

/// Percentile bootstrap over the mean.
struct BootstrapCi {
  double lo = 0.0;
  double hi = 0.0;
};
BootstrapCi bootstrap_mean_ci(const Vec& values, int samples, RandomSource rng);

double mean_of(const Vec& values);
double stddev_of(const Vec& values);  // sample std (n-1)

enum class EvalMode { ClosedLoop, Precomputed, Identity, FeedForward };

EvalMode parse_eval_mode(const std::string& name);
std::string eval_mode_name(EvalMode mode);

struct EvalStats {
  int episodes = 0;
  std::optional<double> mean, std_dev, ci_lo, ci_hi;
  std::optional<double> mean_match, mean_length_penalty, mean_format_bonus;
};

struct EvalResult {
  std::vector<EpisodeRecord> records;
  Vec totals;
  EvalStats stats;
};

/// Episode i draws its streams from (root, i) and its query round-robin from
/// the pool, so two modes evaluated with the same root share seeds pairwise.
EvalResult run_eval(const Env& env, const PolicyParams* policy, EvalMode mode,
                    const std::vector<Query>& pool, int n_refine, int episodes, int bootstrap,
                    int threads, RandomSource& root);

// Subcommand drivers (the CLI binary parses flags and delegates here).
// Throw ConfigError for bad configuration, TrainingError for divergence.
void cmd_train_diffusion(const ExperimentConfig& cfg);
void cmd_train_policy(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_ablate(const ExperimentConfig& cfg);
void cmd_sweep(const ExperimentConfig& cfg);

/// "%.12g" with a stable exponent form; the one double format used in CSVs.
std::string csv_num(double x);

}  // namespace steerloop
