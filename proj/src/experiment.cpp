#include "steerloop/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "steerloop/errors.hpp"

namespace steerloop {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- parsing

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, item));
  if (out.empty()) throw ConfigError("config key '" + key + "': expected a comma list");
  return out;
}

std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_line(ExperimentConfig& c, const std::string& key, const std::string& value) {
  // run
  if (key == "run.out_dir") c.out_dir = value;
  else if (key == "run.seed") c.seed = parse_u64(key, value);
  else if (key == "run.threads") c.threads = parse_int(key, value);
  // dataset
  else if (key == "dataset.modes") c.modes = parse_int(key, value);
  else if (key == "dataset.radius") c.radius = parse_double(key, value);
  else if (key == "dataset.mode_std") c.mode_std = parse_double(key, value);
  // prompt
  else if (key == "prompt.length") c.prompt_len = parse_int(key, value);
  // schedule
  else if (key == "schedule.T") c.T = parse_int(key, value);
  else if (key == "schedule.beta_min") c.beta_min = parse_double(key, value);
  else if (key == "schedule.beta_max") c.beta_max = parse_double(key, value);
  else if (key == "schedule.kind") c.schedule_kind = value;
  // denoiser
  else if (key == "denoiser.hidden") c.denoiser_hidden = parse_int_list(key, value);
  else if (key == "denoiser.d_emb") c.denoiser_d_emb = parse_int(key, value);
  else if (key == "denoiser.d_time") c.denoiser_d_time = parse_int(key, value);
  else if (key == "denoiser.emb_scale") c.denoiser_emb_scale = parse_double(key, value);
  else if (key == "denoiser.steps") c.denoiser_steps = parse_int(key, value);
  else if (key == "denoiser.batch") c.denoiser_batch = parse_int(key, value);
  else if (key == "denoiser.lr") c.denoiser_lr = parse_double(key, value);
  else if (key == "denoiser.log_every") c.denoiser_log_every = parse_int(key, value);
  // policy
  else if (key == "policy.hidden") c.policy_hidden = parse_int_list(key, value);
  else if (key == "policy.d_emb") c.policy_d_emb = parse_int(key, value);
  else if (key == "policy.d_time") c.policy_d_time = parse_int(key, value);
  else if (key == "policy.emb_scale") c.policy_emb_scale = parse_double(key, value);
  // grpo
  else if (key == "grpo.group_size") c.grpo.group_size = parse_int(key, value);
  else if (key == "grpo.clip_eps") c.grpo.clip_eps = parse_double(key, value);
  else if (key == "grpo.kl_beta") c.grpo.kl_beta = parse_double(key, value);
  else if (key == "grpo.lr") c.grpo.lr = parse_double(key, value);
  else if (key == "grpo.inner_iters") c.grpo.inner_iters = parse_int(key, value);
  else if (key == "grpo.eps_std") c.grpo.eps_std = parse_double(key, value);
  else if (key == "grpo.queries_per_batch") c.grpo.queries_per_batch = parse_int(key, value);
  else if (key == "grpo.updates") c.grpo.total_updates = parse_int(key, value);
  else if (key == "grpo.kl_direction") c.grpo.kl_dir = parse_kl_direction(value);
  else if (key == "grpo.checkpoint_every") c.grpo.checkpoint_every = parse_int(key, value);
  else if (key == "grpo.resample_schedule_per_member")
    c.grpo.resample_schedule_per_member = parse_bool(key, value);
  // env
  else if (key == "env.sampler") c.sampler = value;
  else if (key == "env.ddim_eta") c.ddim_eta = parse_double(key, value);
  else if (key == "env.feedback") c.feedback = value;
  else if (key == "env.refine_steps_train") c.refine_steps_train = parse_int(key, value);
  else if (key == "env.refine_steps_eval") c.refine_steps_eval = parse_int(key, value);
  else if (key == "env.store_trajectory") c.store_trajectory = parse_bool(key, value);
  else if (key == "env.rollout_mode") c.rollout_mode = value;
  // reward
  else if (key == "reward.kind") c.reward.kind = parse_reward_kind(value);
  else if (key == "reward.bandwidth") c.reward.bandwidth = parse_double(key, value);
  else if (key == "reward.w_match") c.reward.w_match = parse_double(key, value);
  else if (key == "reward.w_len") c.reward.w_len = parse_double(key, value);
  else if (key == "reward.w_fmt") c.reward.w_fmt = parse_double(key, value);
  else if (key == "reward.length_budget") c.reward.length_budget = parse_int(key, value);
  else if (key == "reward.query_kind") c.query_kind = value;
  // eval
  else if (key == "eval.episodes") c.eval_episodes = parse_int(key, value);
  else if (key == "eval.mode") c.eval_mode = value;
  else if (key == "eval.bootstrap") c.bootstrap_samples = parse_int(key, value);
  else if (key == "eval.dump_episodes") c.dump_episodes = parse_bool(key, value);
  // sweep
  else if (key == "sweep.refine_steps") c.sweep_refine_steps = parse_int_list(key, value);
  // diffusion_rl
  else if (key == "diffusion_rl.group_size") c.diffrl.group_size = parse_int(key, value);
  else if (key == "diffusion_rl.clip_eps") c.diffrl.clip_eps = parse_double(key, value);
  else if (key == "diffusion_rl.lr") c.diffrl.lr = parse_double(key, value);
  else if (key == "diffusion_rl.inner_iters") c.diffrl.inner_iters = parse_int(key, value);
  else if (key == "diffusion_rl.updates") c.diffrl.total_updates = parse_int(key, value);
  else if (key == "diffusion_rl.query_mode") c.diffrl_query_mode = parse_int(key, value);
  // ablate
  else if (key == "ablate.episodes") c.ablate_episodes = parse_int(key, value);
  // paths
  else if (key == "paths.denoiser") c.denoiser_path = value;
  else if (key == "paths.policy") c.policy_path = value;
  else
    throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    apply_config_line(cfg, key, value);
  }
  return cfg;
}

std::string resolved_config_text(const ExperimentConfig& c) {
  std::ostringstream o;
  auto kv = [&o](const std::string& k, const std::string& v) { o << k << " = " << v << '\n'; };
  kv("run.out_dir", c.out_dir);
  kv("run.seed", std::to_string(c.seed));
  kv("run.threads", std::to_string(c.threads));
  kv("dataset.modes", std::to_string(c.modes));
  kv("dataset.radius", csv_num(c.radius));
  kv("dataset.mode_std", csv_num(c.mode_std));
  kv("prompt.length", std::to_string(c.prompt_len));
  kv("schedule.T", std::to_string(c.T));
  kv("schedule.beta_min", csv_num(c.beta_min));
  kv("schedule.beta_max", csv_num(c.beta_max));
  kv("schedule.kind", c.schedule_kind);
  kv("denoiser.hidden", join_ints(c.denoiser_hidden));
  kv("denoiser.d_emb", std::to_string(c.denoiser_d_emb));
  kv("denoiser.d_time", std::to_string(c.denoiser_d_time));
  kv("denoiser.emb_scale", csv_num(c.denoiser_emb_scale));
  kv("denoiser.steps", std::to_string(c.denoiser_steps));
  kv("denoiser.batch", std::to_string(c.denoiser_batch));
  kv("denoiser.lr", csv_num(c.denoiser_lr));
  kv("denoiser.log_every", std::to_string(c.denoiser_log_every));
  kv("policy.hidden", join_ints(c.policy_hidden));
  kv("policy.d_emb", std::to_string(c.policy_d_emb));
  kv("policy.d_time", std::to_string(c.policy_d_time));
  kv("policy.emb_scale", csv_num(c.policy_emb_scale));
  kv("grpo.group_size", std::to_string(c.grpo.group_size));
  kv("grpo.clip_eps", csv_num(c.grpo.clip_eps));
  kv("grpo.kl_beta", csv_num(c.grpo.kl_beta));
  kv("grpo.lr", csv_num(c.grpo.lr));
  kv("grpo.inner_iters", std::to_string(c.grpo.inner_iters));
  kv("grpo.eps_std", csv_num(c.grpo.eps_std));
  kv("grpo.queries_per_batch", std::to_string(c.grpo.queries_per_batch));
  kv("grpo.updates", std::to_string(c.grpo.total_updates));
  kv("grpo.kl_direction", kl_direction_name(c.grpo.kl_dir));
  kv("grpo.checkpoint_every", std::to_string(c.grpo.checkpoint_every));
  kv("grpo.resample_schedule_per_member",
     c.grpo.resample_schedule_per_member ? "true" : "false");
  kv("env.sampler", c.sampler);
  kv("env.ddim_eta", csv_num(c.ddim_eta));
  kv("env.feedback", c.feedback);
  kv("env.refine_steps_train", std::to_string(c.refine_steps_train));
  kv("env.refine_steps_eval", std::to_string(c.refine_steps_eval));
  kv("env.store_trajectory", c.store_trajectory ? "true" : "false");
  kv("env.rollout_mode", c.rollout_mode);
  kv("reward.kind", reward_kind_name(c.reward.kind));
  kv("reward.bandwidth", csv_num(c.reward.bandwidth));
  kv("reward.w_match", csv_num(c.reward.w_match));
  kv("reward.w_len", csv_num(c.reward.w_len));
  kv("reward.w_fmt", csv_num(c.reward.w_fmt));
  kv("reward.length_budget", std::to_string(c.reward.length_budget));
  kv("reward.query_kind", c.query_kind);
  kv("eval.episodes", std::to_string(c.eval_episodes));
  kv("eval.mode", c.eval_mode);
  kv("eval.bootstrap", std::to_string(c.bootstrap_samples));
  kv("eval.dump_episodes", c.dump_episodes ? "true" : "false");
  kv("sweep.refine_steps", join_ints(c.sweep_refine_steps));
  kv("diffusion_rl.group_size", std::to_string(c.diffrl.group_size));
  kv("diffusion_rl.clip_eps", csv_num(c.diffrl.clip_eps));
  kv("diffusion_rl.lr", csv_num(c.diffrl.lr));
  kv("diffusion_rl.inner_iters", std::to_string(c.diffrl.inner_iters));
  kv("diffusion_rl.updates", std::to_string(c.diffrl.total_updates));
  kv("diffusion_rl.query_mode", std::to_string(c.diffrl_query_mode));
  kv("ablate.episodes", std::to_string(c.ablate_episodes));
  kv("paths.denoiser", c.denoiser_path);
  kv("paths.policy", c.policy_path);
  return o.str();
}

MixtureDataset dataset_from_config(const ExperimentConfig& c) {
  return MixtureDataset(c.modes, c.radius, c.mode_std);
}

Vocabulary vocab_from_config(const ExperimentConfig& c) { return Vocabulary(c.modes); }

NoiseSchedule schedule_from_config(const ExperimentConfig& c) {
  return make_schedule(c.T, c.beta_min, c.beta_max, parse_schedule_kind(c.schedule_kind));
}

EnvConfig env_config_from_config(const ExperimentConfig& c) {
  EnvConfig e;
  e.sampler = parse_sampler_kind(c.sampler);
  e.ddim_eta = c.ddim_eta;
  if (c.feedback == "on")
    e.feedback = Feedback::On;
  else if (c.feedback == "off")
    e.feedback = Feedback::Off;
  else
    throw ConfigError("config key 'env.feedback': expected on|off, got '" + c.feedback + "'");
  e.store_trajectory = c.store_trajectory;
  return e;
}

std::vector<Query> task_query_pool(const Vocabulary& vocab, RewardKind kind,
                                   const std::string& query_kind, int prompt_len) {
  std::string resolved = query_kind;
  if (resolved == "auto")
    resolved = kind == RewardKind::AmbiguousNearest ? "ambiguous" : "mode";
  if (resolved == "mode") return mode_query_pool(vocab, prompt_len);
  if (resolved == "ambiguous") return ambig_query_pool(vocab, prompt_len);
  if (resolved == "both") {
    auto out = mode_query_pool(vocab, prompt_len);
    auto amb = ambig_query_pool(vocab, prompt_len);
    out.insert(out.end(), amb.begin(), amb.end());
    return out;
  }
  throw ConfigError("config key 'reward.query_kind': expected auto|mode|ambiguous|both");
}

double mean_of(const Vec& values) {
  double s = 0.0;
  for (double v : values) s += v;
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

double stddev_of(const Vec& values) {
  if (values.size() < 2) return 0.0;
  const double m = mean_of(values);
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(values.size() - 1));
}

BootstrapCi bootstrap_mean_ci(const Vec& values, int samples, RandomSource rng) {
  if (values.empty() || samples < 2) return {0.0, 0.0};
  const int n = static_cast<int>(values.size());
  Vec means(samples);
  for (int b = 0; b < samples; ++b) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += values[rng.uniform_int(n)];
    means[b] = s / n;
  }
  std::sort(means.begin(), means.end());
  const int lo = static_cast<int>(std::floor(0.025 * (samples - 1)));
  const int hi = static_cast<int>(std::ceil(0.975 * (samples - 1)));
  return {means[lo], means[hi]};
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "closed-loop") return EvalMode::ClosedLoop;
  if (name == "precomputed") return EvalMode::Precomputed;
  if (name == "identity") return EvalMode::Identity;
  if (name == "feedforward") return EvalMode::FeedForward;
  throw ConfigError("unknown eval mode '" + name +
                    "' (expected closed-loop|precomputed|identity|feedforward)");
}

std::string eval_mode_name(EvalMode mode) {
  switch (mode) {
    case EvalMode::ClosedLoop: return "closed-loop";
    case EvalMode::Precomputed: return "precomputed";
    case EvalMode::Identity: return "identity";
    default: return "feedforward";
  }
}

EvalResult run_eval(const Env& env, const PolicyParams* policy, EvalMode mode,
                    const std::vector<Query>& pool, int n_refine, int episodes, int bootstrap,
                    int threads, RandomSource& root) {
  if (pool.empty()) throw ConfigError("run_eval: empty query pool");
  if (mode != EvalMode::Identity && policy == nullptr)
    throw ConfigError("run_eval: mode requires a policy checkpoint");

  EvalResult out;
  out.records.resize(episodes);
  const RefinementSchedule sched =
      episodes > 0 && mode == EvalMode::ClosedLoop ? inference_schedule(env.schedule->T, n_refine)
                                                   : RefinementSchedule{};
  std::vector<RandomSource> seeds;
  seeds.reserve(episodes);
  for (int i = 0; i < episodes; ++i) seeds.push_back(root.split("eval-episode", i));

  parallel_for(episodes, threads, [&](int i) {
    const Query& q = pool[i % pool.size()];
    RandomSource ep_rng = seeds[i];
    switch (mode) {
      case EvalMode::ClosedLoop:
        out.records[i] = rollout(env, *policy, q, sched, ep_rng);
        break;
      case EvalMode::Precomputed: {
        RandomSource plan_rng = ep_rng.split("plan");
        const PromptPlan plan = precompute_prompts(
            *policy, q, inference_schedule(env.schedule->T, n_refine), env.schedule->T, plan_rng);
        out.records[i] = rollout_with_plan(env, q, plan, ep_rng);
        break;
      }
      case EvalMode::Identity:
        out.records[i] = identity_rollout(env, q, ep_rng);
        break;
      case EvalMode::FeedForward:
        out.records[i] = feedforward_rollout(env, *policy, q, ep_rng);
        break;
    }
  });

  out.totals.reserve(episodes);
  for (const EpisodeRecord& ep : out.records) out.totals.push_back(ep.reward.total);

  out.stats.episodes = episodes;
  if (episodes > 0) {
    out.stats.mean = mean_of(out.totals);
    out.stats.std_dev = stddev_of(out.totals);
    const BootstrapCi ci = bootstrap_mean_ci(out.totals, bootstrap, root.split("bootstrap"));
    out.stats.ci_lo = ci.lo;
    out.stats.ci_hi = ci.hi;
    Vec match, lenp, fmt;
    for (const EpisodeRecord& ep : out.records) {
      match.push_back(ep.reward.match);
      lenp.push_back(ep.reward.length_penalty);
      fmt.push_back(ep.reward.format_bonus);
    }
    out.stats.mean_match = mean_of(match);
    out.stats.mean_length_penalty = mean_of(lenp);
    out.stats.mean_format_bonus = mean_of(fmt);
  }
  return out;
}

std::string csv_num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

// ------------------------------------------------------------ cmd drivers

namespace {

class StageTimer {
 public:
  explicit StageTimer(std::string stage) : stage_(std::move(stage)), t0_(clock::now()) {}
  void write(const fs::path& dir) const {
    std::ofstream f(dir / "timings.csv", std::ios::app);
    const double sec = std::chrono::duration<double>(clock::now() - t0_).count();
    f << stage_ << ',' << csv_num(sec) << '\n';
  }

 private:
  using clock = std::chrono::steady_clock;
  std::string stage_;
  clock::time_point t0_;
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  f << text;
}

void write_run_provenance(const ExperimentConfig& cfg, const std::string& stage) {
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  write_text(dir / "config.resolved.txt", resolved_config_text(cfg));
  json info{{"version", kVersion},
            {"stage", stage},
            {"seed", cfg.seed},
            {"threads", cfg.threads}};
  save_json(info, (dir / "run_info.json").string(), 2);
}

std::string run_id(const ExperimentConfig& cfg, const std::string& stage) {
  return stage + "-" + std::to_string(cfg.seed);
}

Env build_env(const ExperimentConfig& cfg, const DenoiserCheckpoint& ckpt,
              const MixtureDataset& dataset) {
  if (ckpt.vocab.modes != dataset.modes)
    throw ConfigError("dataset.modes does not match the denoiser checkpoint");
  Env env;
  env.denoiser = &ckpt.params;
  env.schedule = &ckpt.schedule;
  env.dataset = &dataset;
  env.vocab = &ckpt.vocab;
  env.reward = cfg.reward;
  env.config = env_config_from_config(cfg);
  return env;
}

DenoiserCheckpoint load_denoiser_for(const ExperimentConfig& cfg) {
  if (cfg.denoiser_path.empty())
    throw ConfigError("paths.denoiser is required for this subcommand");
  if (!fs::exists(cfg.denoiser_path))
    throw ConfigError("denoiser checkpoint '" + cfg.denoiser_path + "' does not exist");
  return load_denoiser(cfg.denoiser_path);
}

void write_eval_outputs(const ExperimentConfig& cfg, const fs::path& dir, const EvalResult& res,
                        const Vocabulary& vocab, const std::string& mode_name, int n_refine) {
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / "eval_episodes.csv", std::ios::trunc);
    csv << "run_id,stage,episode,mode,query,reward_total,reward_match,reward_length_penalty,"
           "reward_format_bonus,final_x0,final_x1,final_prompt,n_events,seed\n";
    const std::string rid = run_id(cfg, "eval");
    for (size_t i = 0; i < res.records.size(); ++i) {
      const EpisodeRecord& ep = res.records[i];
      csv << rid << ",eval," << i << ',' << mode_name << ','
          << format_prompt(ep.query, vocab) << ',' << csv_num(ep.reward.total) << ','
          << csv_num(ep.reward.match) << ',' << csv_num(ep.reward.length_penalty) << ','
          << csv_num(ep.reward.format_bonus) << ',' << csv_num(ep.final_x[0]) << ','
          << csv_num(ep.final_x[1]) << ',' << format_prompt(ep.final_prompt, vocab) << ','
          << ep.events.size() << ',' << ep.seed << '\n';
    }
  }
  json summary{{"version", kVersion},
               {"mode", mode_name},
               {"refine_steps", n_refine},
               {"episodes", res.stats.episodes},
               {"reward_kind", reward_kind_name(cfg.reward.kind)},
               {"seed", cfg.seed}};
  auto put = [&summary](const char* k, const std::optional<double>& v) {
    if (v)
      summary[k] = *v;
    else
      summary[k] = nullptr;
  };
  put("mean_reward", res.stats.mean);
  put("std_reward", res.stats.std_dev);
  put("ci95_lo", res.stats.ci_lo);
  put("ci95_hi", res.stats.ci_hi);
  put("mean_match", res.stats.mean_match);
  put("mean_length_penalty", res.stats.mean_length_penalty);
  put("mean_format_bonus", res.stats.mean_format_bonus);
  save_json(summary, (dir / "eval_summary.json").string(), 2);
  if (cfg.dump_episodes) {
    std::ofstream jsonl(dir / "episodes.jsonl", std::ios::trunc);
    for (const EpisodeRecord& ep : res.records) {
      json j = episode_to_json(ep, vocab);
      j["mode"] = mode_name;
      jsonl << j.dump() << '\n';
    }
  }
}

RolloutMode parse_rollout_mode(const std::string& name) {
  if (name == "closed_loop") return RolloutMode::ClosedLoop;
  if (name == "feedforward") return RolloutMode::FeedForward;
  throw ConfigError("config key 'env.rollout_mode': expected closed_loop|feedforward");
}

}  // namespace

void cmd_train_diffusion(const ExperimentConfig& cfg) {
  StageTimer timer("train-diffusion");
  write_run_provenance(cfg, "train-diffusion");
  const fs::path dir(cfg.out_dir);

  const Vocabulary vocab = vocab_from_config(cfg);
  const MixtureDataset dataset = dataset_from_config(cfg);
  const NoiseSchedule schedule = schedule_from_config(cfg);

  DenoiserTrainConfig tc;
  tc.init.hidden = cfg.denoiser_hidden;
  tc.init.d_emb = cfg.denoiser_d_emb;
  tc.init.d_time = cfg.denoiser_d_time;
  tc.init.emb_scale = cfg.denoiser_emb_scale;
  tc.steps = cfg.denoiser_steps;
  tc.batch = cfg.denoiser_batch;
  tc.lr = cfg.denoiser_lr;
  tc.log_every = cfg.denoiser_log_every;

  RandomSource rng = RandomSource(cfg.seed).split("diffusion");
  const DenoiserTrainResult res =
      train_denoiser(dataset, vocab, schedule, cfg.prompt_len, tc, rng);

  save_denoiser(res.params, schedule, vocab, (dir / "denoiser.json").string());
  {
    std::ofstream csv(dir / "denoiser_loss.csv", std::ios::trunc);
    csv << "run_id,stage,step,loss\n";
    const std::string rid = run_id(cfg, "train-diffusion");
    for (const LossPoint& p : res.curve)
      csv << rid << ",train-diffusion," << p.step << ',' << csv_num(p.loss) << '\n';
  }
  timer.write(dir);
}

void cmd_train_policy(const ExperimentConfig& cfg) {
  StageTimer timer("train-policy");
  write_run_provenance(cfg, "train-policy");
  const fs::path dir(cfg.out_dir);

  const DenoiserCheckpoint ckpt = load_denoiser_for(cfg);
  const MixtureDataset dataset = dataset_from_config(cfg);
  const Env env = build_env(cfg, ckpt, dataset);
  const std::vector<Query> pool =
      task_query_pool(ckpt.vocab, cfg.reward.kind, cfg.query_kind, ckpt.params.prompt_len);
  const RolloutMode mode = parse_rollout_mode(cfg.rollout_mode);

  RandomSource root = RandomSource(cfg.seed).split("policy-train");

  const fs::path state_path = dir / "train_state.json";
  const fs::path metrics_path = dir / "policy_metrics.csv";
  PolicyTrainState state;
  std::vector<std::string> kept_rows;
  if (fs::exists(state_path)) {
    state = train_state_from_json(load_json(state_path.string()));
    // Drop any rows from updates after the checkpoint; they will be re-run.
    if (fs::exists(metrics_path)) {
      std::ifstream in(metrics_path);
      std::string line;
      bool first = true;
      while (std::getline(in, line)) {
        if (first) {
          first = false;
          continue;
        }
        std::istringstream ss(line);
        std::string rid_field, stage_field, update_field;
        std::getline(ss, rid_field, ',');
        std::getline(ss, stage_field, ',');
        std::getline(ss, update_field, ',');
        if (!update_field.empty() && std::stoi(update_field) < state.next_update)
          kept_rows.push_back(line);
      }
    }
  } else {
    PolicyInit init;
    init.hidden = cfg.policy_hidden;
    init.d_emb = cfg.policy_d_emb;
    init.d_time = cfg.policy_d_time;
    init.emb_scale = cfg.policy_emb_scale;
    RandomSource init_rng = root.split("policy-init");
    state.policy = init_policy(ckpt.vocab, ckpt.schedule.T, ckpt.params.prompt_len, init, init_rng);
  }

  std::ofstream csv(metrics_path, std::ios::trunc);
  csv << "run_id,stage,update,mean_reward,min_reward,max_reward,mean_kl,adv_std,loss\n";
  for (const std::string& row : kept_rows) csv << row << '\n';
  csv.flush();
  const std::string rid = run_id(cfg, "train-policy");

  auto persist_state = [&](const PolicyTrainState& s) {
    save_json(train_state_to_json(s), state_path.string());
  };

  try {
    train_policy_updates(state, env, pool, cfg.grpo, mode, cfg.refine_steps_train, cfg.threads,
                         root, [&](const UpdateMetrics& m) {
                           csv << rid << ",train-policy," << m.update << ','
                               << csv_num(m.mean_reward) << ',' << csv_num(m.min_reward) << ','
                               << csv_num(m.max_reward) << ',' << csv_num(m.mean_kl) << ','
                               << csv_num(m.adv_std) << ',' << csv_num(m.loss) << '\n';
                           csv.flush();
                           if ((m.update + 1) % cfg.grpo.checkpoint_every == 0)
                             persist_state(state);
                         });
  } catch (const TrainingError&) {
    persist_state(state);  // abort with checkpoint
    throw;
  }

  persist_state(state);
  save_policy(state.policy, (dir / "policy.json").string());
  timer.write(dir);
}

void cmd_eval(const ExperimentConfig& cfg) {
  StageTimer timer("eval");
  write_run_provenance(cfg, "eval");
  const fs::path dir(cfg.out_dir);

  const DenoiserCheckpoint ckpt = load_denoiser_for(cfg);
  const MixtureDataset dataset = dataset_from_config(cfg);
  const Env env = build_env(cfg, ckpt, dataset);
  const EvalMode mode = parse_eval_mode(cfg.eval_mode);

  PolicyParams policy;
  const PolicyParams* policy_ptr = nullptr;
  if (mode != EvalMode::Identity) {  // identity ignores any policy checkpoint
    if (cfg.policy_path.empty())
      throw ConfigError("paths.policy is required for eval mode '" + cfg.eval_mode + "'");
    policy = load_policy(cfg.policy_path);
    policy_ptr = &policy;
  }

  const std::vector<Query> pool =
      task_query_pool(ckpt.vocab, cfg.reward.kind, cfg.query_kind, ckpt.params.prompt_len);
  RandomSource root = RandomSource(cfg.seed).split("eval");
  const EvalResult res = run_eval(env, policy_ptr, mode, pool, cfg.refine_steps_eval,
                                  cfg.eval_episodes, cfg.bootstrap_samples, cfg.threads, root);
  write_eval_outputs(cfg, dir, res, ckpt.vocab, eval_mode_name(mode), cfg.refine_steps_eval);
  timer.write(dir);
}

void cmd_sweep(const ExperimentConfig& cfg) {
  StageTimer timer("sweep");
  write_run_provenance(cfg, "sweep");
  const fs::path dir(cfg.out_dir);

  const DenoiserCheckpoint ckpt = load_denoiser_for(cfg);
  const MixtureDataset dataset = dataset_from_config(cfg);
  const Env env = build_env(cfg, ckpt, dataset);
  if (cfg.policy_path.empty()) throw ConfigError("paths.policy is required for sweep");
  const PolicyParams policy = load_policy(cfg.policy_path);
  const std::vector<Query> pool =
      task_query_pool(ckpt.vocab, cfg.reward.kind, cfg.query_kind, ckpt.params.prompt_len);

  std::ofstream csv(dir / "sweep.csv", std::ios::trunc);
  csv << "run_id,stage,refine_steps,episodes,mean_reward,std_reward,ci95_lo,ci95_hi\n";
  const std::string rid = run_id(cfg, "sweep");
  for (int n : cfg.sweep_refine_steps) {
    // Same root per setting: episode i shares its seed across all settings.
    RandomSource root = RandomSource(cfg.seed).split("sweep-eval");
    const EvalResult res = run_eval(env, &policy, EvalMode::ClosedLoop, pool, n,
                                    cfg.eval_episodes, cfg.bootstrap_samples, cfg.threads, root);
    ExperimentConfig sub = cfg;
    sub.out_dir = (dir / ("nr" + std::to_string(n))).string();
    write_eval_outputs(sub, sub.out_dir, res, ckpt.vocab, "closed-loop", n);
    csv << rid << ",sweep," << n << ',' << res.stats.episodes << ','
        << csv_num(res.stats.mean.value_or(0.0)) << ',' << csv_num(res.stats.std_dev.value_or(0.0))
        << ',' << csv_num(res.stats.ci_lo.value_or(0.0)) << ','
        << csv_num(res.stats.ci_hi.value_or(0.0)) << '\n';
  }
  timer.write(dir);
}

void cmd_ablate(const ExperimentConfig& cfg) {
  StageTimer timer("ablate");
  write_run_provenance(cfg, "ablate");
  const fs::path dir(cfg.out_dir);
  const fs::path ckdir = dir / "checkpoints";
  fs::create_directories(ckdir);

  const DenoiserCheckpoint ckpt = load_denoiser_for(cfg);
  const MixtureDataset dataset = dataset_from_config(cfg);
  const Env env = build_env(cfg, ckpt, dataset);
  const std::vector<Query> pool =
      task_query_pool(ckpt.vocab, cfg.reward.kind, cfg.query_kind, ckpt.params.prompt_len);

  PolicyInit init;
  init.hidden = cfg.policy_hidden;
  init.d_emb = cfg.policy_d_emb;
  init.d_time = cfg.policy_d_time;
  init.emb_scale = cfg.policy_emb_scale;

  // Trains a rung's policy unless its checkpoint is already present.
  auto trained_policy = [&](const std::string& tag, RolloutMode mode,
                            Feedback feedback) -> PolicyParams {
    const fs::path path = ckdir / (tag + ".json");
    if (fs::exists(path)) return load_policy(path.string());
    Env train_env = env;
    train_env.config.feedback = feedback;
    RandomSource root = RandomSource(cfg.seed).split("ablate-train-" + tag);
    PolicyTrainResult res = train_policy(train_env, pool, cfg.grpo, mode, cfg.refine_steps_train,
                                         init, root, cfg.threads);
    save_policy(res.params, path.string());
    return std::move(res.params);
  };

  struct Rung {
    std::string tag;
    EvalMode mode;
    Feedback feedback;
    const PolicyParams* policy;
  };

  RandomSource untrained_rng = RandomSource(cfg.seed).split("ablate-untrained");
  const PolicyParams untrained =
      init_policy(ckpt.vocab, ckpt.schedule.T, ckpt.params.prompt_len, init, untrained_rng);
  const PolicyParams ff = trained_policy("grpo_feedforward", RolloutMode::FeedForward, Feedback::Off);
  const PolicyParams multi = trained_policy("multi_step", RolloutMode::ClosedLoop, Feedback::Off);
  const PolicyParams visual = trained_policy("visual_feedback", RolloutMode::ClosedLoop, Feedback::On);

  // Incremental ladder, base model first.
  const std::vector<Rung> rungs = {
      {"identity", EvalMode::Identity, Feedback::On, nullptr},
      {"untrained_policy", EvalMode::ClosedLoop, Feedback::On, &untrained},
      {"grpo_feedforward", EvalMode::FeedForward, Feedback::Off, &ff},
      {"multi_step", EvalMode::ClosedLoop, Feedback::Off, &multi},
      {"visual_feedback", EvalMode::ClosedLoop, Feedback::On, &visual},
  };

  std::ofstream csv(dir / "ablation.csv", std::ios::trunc);
  csv << "run_id,stage,rung,mode,episodes,mean_reward,std_reward,ci95_lo,ci95_hi\n";
  const std::string rid = run_id(cfg, "ablate");
  for (const Rung& rung : rungs) {
    Env rung_env = env;
    rung_env.config.feedback = rung.feedback;
    // Same eval root for every rung: identical seeds and episode counts.
    RandomSource root = RandomSource(cfg.seed).split("ablate-eval");
    const EvalResult res = run_eval(rung_env, rung.policy, rung.mode, pool, cfg.refine_steps_eval,
                                    cfg.ablate_episodes, cfg.bootstrap_samples, cfg.threads, root);
    ExperimentConfig sub = cfg;
    sub.out_dir = (dir / rung.tag).string();
    write_eval_outputs(sub, sub.out_dir, res, ckpt.vocab, eval_mode_name(rung.mode),
                       cfg.refine_steps_eval);
    csv << rid << ",ablate," << rung.tag << ',' << eval_mode_name(rung.mode) << ','
        << res.stats.episodes << ',' << csv_num(res.stats.mean.value_or(0.0)) << ','
        << csv_num(res.stats.std_dev.value_or(0.0)) << ','
        << csv_num(res.stats.ci_lo.value_or(0.0)) << ','
        << csv_num(res.stats.ci_hi.value_or(0.0)) << '\n';
  }
  timer.write(dir);
}

}  // namespace steerloop
