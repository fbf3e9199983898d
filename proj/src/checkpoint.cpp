#include "steerloop/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "steerloop/errors.hpp"

namespace steerloop {

namespace {

json mat_to_json(const Mat& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.a}};
}

Mat mat_from_json(const json& j) {
  Mat m(j.at("rows").get<int>(), j.at("cols").get<int>());
  m.a = j.at("data").get<Vec>();
  if (m.a.size() != static_cast<size_t>(m.rows) * m.cols)
    throw ConfigError("checkpoint: matrix data does not match its shape");
  return m;
}

json mlp_to_json(const MlpParams& p) {
  json layers = json::array();
  for (size_t l = 0; l < p.layer_count(); ++l)
    layers.push_back(json{{"w", mat_to_json(p.weights[l])}, {"b", p.biases[l]}});
  return json{{"activation", p.activation == Activation::Tanh ? "tanh" : "relu"},
              {"activate_output", p.activate_output},
              {"layers", layers}};
}

MlpParams mlp_from_json(const json& j) {
  MlpParams p;
  const std::string act = j.at("activation").get<std::string>();
  if (act == "tanh")
    p.activation = Activation::Tanh;
  else if (act == "relu")
    p.activation = Activation::Relu;
  else
    throw ConfigError("checkpoint: unknown activation '" + act + "'");
  p.activate_output = j.at("activate_output").get<bool>();
  for (const json& layer : j.at("layers")) {
    p.weights.push_back(mat_from_json(layer.at("w")));
    p.biases.push_back(layer.at("b").get<Vec>());
  }
  return p;
}

void check_format(const json& j, const std::string& expected) {
  if (j.value("format", "") != expected)
    throw ConfigError("checkpoint: expected format '" + expected + "', got '" +
                      j.value("format", "<missing>") + "'");
  if (j.value("version", 0) != 1)
    throw ConfigError("checkpoint: unsupported version");
}

}  // namespace

json schedule_to_json(const NoiseSchedule& s) {
  return json{{"T", s.T},
              {"kind", schedule_kind_name(s.kind)},
              {"beta_min", s.beta_min},
              {"beta_max", s.beta_max}};
}

NoiseSchedule schedule_from_json(const json& j) {
  return make_schedule(j.at("T").get<int>(), j.at("beta_min").get<double>(),
                       j.at("beta_max").get<double>(),
                       parse_schedule_kind(j.at("kind").get<std::string>()));
}

json vocab_to_json(const Vocabulary& v) {
  return json{{"modes", v.modes}, {"ambig", v.ambig}, {"style", v.style}};
}

Vocabulary vocab_from_json(const json& j) {
  Vocabulary v(j.at("modes").get<int>(), /*with_ambig=*/false, j.at("style").get<int>());
  v.ambig = j.at("ambig").get<int>();
  return v;
}

json denoiser_to_json(const DenoiserParams& p, const NoiseSchedule& s, const Vocabulary& v) {
  return json{{"format", "steerloop-denoiser"},
              {"version", 1},
              {"schedule", schedule_to_json(s)},
              {"vocab", vocab_to_json(v)},
              {"prompt_len", p.prompt_len},
              {"d_emb", p.d_emb},
              {"d_time", p.d_time},
              {"T", p.T},
              {"mlp", mlp_to_json(p.mlp)},
              {"token_emb", mat_to_json(p.token_emb)}};
}

DenoiserCheckpoint denoiser_from_json(const json& j) {
  check_format(j, "steerloop-denoiser");
  DenoiserCheckpoint out;
  out.schedule = schedule_from_json(j.at("schedule"));
  out.vocab = vocab_from_json(j.at("vocab"));
  out.params.prompt_len = j.at("prompt_len").get<int>();
  out.params.d_emb = j.at("d_emb").get<int>();
  out.params.d_time = j.at("d_time").get<int>();
  out.params.T = j.at("T").get<int>();
  out.params.mlp = mlp_from_json(j.at("mlp"));
  out.params.token_emb = mat_from_json(j.at("token_emb"));
  return out;
}

json policy_to_json(const PolicyParams& p) {
  json heads = json::array();
  for (size_t h = 0; h < p.head_w.size(); ++h)
    heads.push_back(json{{"w", mat_to_json(p.head_w[h])}, {"b", p.head_b[h]}});
  return json{{"format", "steerloop-policy"},
              {"version", 1},
              {"prompt_len", p.prompt_len},
              {"d_emb", p.d_emb},
              {"d_time", p.d_time},
              {"T", p.T},
              {"vocab_size", p.vocab_size},
              {"token_emb", mat_to_json(p.token_emb)},
              {"trunk", mlp_to_json(p.trunk)},
              {"heads", heads}};
}

PolicyParams policy_from_json(const json& j) {
  check_format(j, "steerloop-policy");
  PolicyParams p;
  p.prompt_len = j.at("prompt_len").get<int>();
  p.d_emb = j.at("d_emb").get<int>();
  p.d_time = j.at("d_time").get<int>();
  p.T = j.at("T").get<int>();
  p.vocab_size = j.at("vocab_size").get<int>();
  p.token_emb = mat_from_json(j.at("token_emb"));
  p.trunk = mlp_from_json(j.at("trunk"));
  for (const json& h : j.at("heads")) {
    p.head_w.push_back(mat_from_json(h.at("w")));
    p.head_b.push_back(h.at("b").get<Vec>());
  }
  return p;
}

json train_state_to_json(const PolicyTrainState& s) {
  json adam{{"lr", s.adam.lr},    {"beta1", s.adam.beta1}, {"beta2", s.adam.beta2},
            {"eps", s.adam.eps},  {"step", s.adam.step},   {"m", s.adam.m},
            {"v", s.adam.v}};
  return json{{"format", "steerloop-train-state"},
              {"version", 1},
              {"next_update", s.next_update},
              {"policy", policy_to_json(s.policy)},
              {"adam", adam}};
}

PolicyTrainState train_state_from_json(const json& j) {
  check_format(j, "steerloop-train-state");
  PolicyTrainState s;
  s.next_update = j.at("next_update").get<int>();
  s.policy = policy_from_json(j.at("policy"));
  const json& a = j.at("adam");
  s.adam.lr = a.at("lr").get<double>();
  s.adam.beta1 = a.at("beta1").get<double>();
  s.adam.beta2 = a.at("beta2").get<double>();
  s.adam.eps = a.at("eps").get<double>();
  s.adam.step = a.at("step").get<long long>();
  s.adam.m = a.at("m").get<std::vector<Vec>>();
  s.adam.v = a.at("v").get<std::vector<Vec>>();
  return s;
}

json episode_to_json(const EpisodeRecord& ep, const Vocabulary& vocab) {
  json events = json::array();
  for (const RefinementEvent& ev : ep.events) {
    events.push_back(json{{"t", ev.state.t},
                          {"x_hat", ev.state.x_hat},
                          {"prompt", format_prompt(ev.state.prompt, vocab)},
                          {"action", format_prompt(ev.action, vocab)},
                          {"logprob", ev.old_logprob}});
  }
  json j{{"query", format_prompt(ep.query, vocab)},
         {"events", events},
         {"final_x", ep.final_x},
         {"final_prompt", format_prompt(ep.final_prompt, vocab)},
         {"reward", json{{"total", ep.reward.total},
                         {"match", ep.reward.match},
                         {"length_penalty", ep.reward.length_penalty},
                         {"format_bonus", ep.reward.format_bonus}}},
         {"seed", ep.seed}};
  if (!ep.trajectory.empty()) j["trajectory"] = ep.trajectory;
  return j;
}

void save_json(const json& j, const std::string& path, int indent) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp + "'");
    out << j.dump(indent) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  json j;
  in >> j;
  return j;
}

void save_denoiser(const DenoiserParams& p, const NoiseSchedule& s, const Vocabulary& v,
                   const std::string& path) {
  save_json(denoiser_to_json(p, s, v), path);
}

DenoiserCheckpoint load_denoiser(const std::string& path) {
  return denoiser_from_json(load_json(path));
}

void save_policy(const PolicyParams& p, const std::string& path) {
  save_json(policy_to_json(p), path);
}

PolicyParams load_policy(const std::string& path) { return policy_from_json(load_json(path)); }

}  // namespace steerloop
