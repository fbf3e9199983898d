#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "steerloop/errors.hpp"
#include "steerloop/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  int threads = 0;
  std::string mode;
  int refine_steps = 0;
  int episodes = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool eval_flags) {
  cmd->add_option("--config", flags.config_path, "configuration file (key = value lines)");
  cmd->add_option("--out", flags.out_dir, "output directory (overrides run.out_dir)");
  cmd->add_option("--seed", flags.seed, "root seed (overrides run.seed)");
  cmd->add_option("--threads", flags.threads, "worker thread cap (overrides run.threads)");
  if (eval_flags) {
    cmd->add_option("--mode", flags.mode,
                    "evaluation mode: closed-loop|precomputed|identity|feedforward");
    cmd->add_option("--refine-steps", flags.refine_steps, "refinement steps at evaluation");
    cmd->add_option("--episodes", flags.episodes, "evaluation episode count");
  }
}

steerloop::ExperimentConfig resolve(const CommonFlags& flags) {
  steerloop::ExperimentConfig cfg;
  if (!flags.config_path.empty()) cfg = steerloop::parse_config_file(flags.config_path);
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (flags.seed >= 0) cfg.seed = static_cast<uint64_t>(flags.seed);
  if (flags.threads > 0) cfg.threads = flags.threads;
  if (!flags.mode.empty()) cfg.eval_mode = flags.mode;
  if (flags.refine_steps > 0) cfg.refine_steps_eval = flags.refine_steps;
  if (flags.episodes >= 0) cfg.eval_episodes = flags.episodes;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"steerloop: prompt-refinement RL on a toy conditional diffusion sampler"};
  app.require_subcommand(1);

  CommonFlags train_diff_flags, train_pol_flags, eval_flags, ablate_flags, sweep_flags;
  CLI::App* train_diff = app.add_subcommand("train-diffusion", "train the frozen toy denoiser");
  add_common(train_diff, train_diff_flags, false);
  CLI::App* train_pol = app.add_subcommand("train-policy", "train the refinement policy with GRPO");
  add_common(train_pol, train_pol_flags, false);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint over seeded episodes");
  add_common(eval, eval_flags, true);
  CLI::App* ablate = app.add_subcommand("ablate", "run the component ladder");
  add_common(ablate, ablate_flags, true);
  CLI::App* sweep = app.add_subcommand("sweep", "evaluate across refinement-step counts");
  add_common(sweep, sweep_flags, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_diff->parsed()) steerloop::cmd_train_diffusion(resolve(train_diff_flags));
    if (train_pol->parsed()) steerloop::cmd_train_policy(resolve(train_pol_flags));
    if (eval->parsed()) steerloop::cmd_eval(resolve(eval_flags));
    if (ablate->parsed()) steerloop::cmd_ablate(resolve(ablate_flags));
    if (sweep->parsed()) steerloop::cmd_sweep(resolve(sweep_flags));
  } catch (const steerloop::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const steerloop::TrainingError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
