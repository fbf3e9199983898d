#include "steerloop/policy.hpp"

#include <algorithm>
#include <cmath>

#include "steerloop/errors.hpp"

namespace steerloop {

namespace {
constexpr double kXhatClamp = 20.0;
}

PolicyGrads make_zero_grads(const PolicyParams& p) {
  PolicyGrads g;
  g.token_emb = Mat(p.token_emb.rows, p.token_emb.cols);
  g.trunk = make_zero_grads(p.trunk);
  for (size_t h = 0; h < p.head_w.size(); ++h) {
    g.head_w.emplace_back(p.head_w[h].rows, p.head_w[h].cols);
    g.head_b.emplace_back(p.head_b[h].size(), 0.0);
  }
  return g;
}

std::vector<std::span<double>> param_spans(PolicyParams& p) {
  std::vector<std::span<double>> out;
  out.emplace_back(p.token_emb.a);
  for (auto& s : param_spans(p.trunk)) out.push_back(s);
  for (size_t h = 0; h < p.head_w.size(); ++h) {
    out.emplace_back(p.head_w[h].a);
    out.emplace_back(p.head_b[h]);
  }
  return out;
}

std::vector<std::span<const double>> grad_spans(const PolicyGrads& g) {
  std::vector<std::span<const double>> out;
  out.emplace_back(g.token_emb.a);
  for (auto& s : grad_spans(g.trunk)) out.push_back(s);
  for (size_t h = 0; h < g.head_w.size(); ++h) {
    out.emplace_back(g.head_w[h].a);
    out.emplace_back(g.head_b[h]);
  }
  return out;
}

PolicyParams init_policy(const Vocabulary& vocab, int T, int prompt_len, const PolicyInit& init,
                         RandomSource& rng) {
  if (T < 1) throw ConfigError("init_policy: T must be >= 1");
  if (prompt_len < 1) throw ConfigError("init_policy: prompt length must be >= 1");
  if (init.hidden.empty()) throw ConfigError("init_policy: trunk needs at least one hidden layer");
  PolicyParams p;
  p.d_emb = init.d_emb;
  p.d_time = init.d_time;
  p.T = T;
  p.prompt_len = prompt_len;
  p.vocab_size = vocab.size();
  p.token_emb = Mat(vocab.size(), init.d_emb);
  for (double& x : p.token_emb.a) x = init.emb_scale * rng.gaussian();
  std::vector<int> dims;
  dims.push_back(2 + 2 * init.d_emb + init.d_time);
  for (int h : init.hidden) dims.push_back(h);
  p.trunk = make_mlp(dims, Activation::Relu, rng, /*activate_output=*/true);
  const int h_dim = dims.back();
  for (int slot = 0; slot < prompt_len; ++slot) {
    p.head_w.emplace_back(vocab.size(), h_dim);
    p.head_b.emplace_back(vocab.size(), 0.0);
  }
  return p;
}

Vec featurize_state(const PolicyParams& p, const MdpState& s, Feedback feedback) {
  if (s.t < 1 || s.t > s.T) throw UsageError("featurize_state: timestep out of range");
  Vec f;
  f.reserve(2 + 2 * p.d_emb + p.d_time);
  if (feedback == Feedback::On) {
    f.push_back(std::clamp(s.x_hat[0], -kXhatClamp, kXhatClamp));
    f.push_back(std::clamp(s.x_hat[1], -kXhatClamp, kXhatClamp));
  } else {
    f.push_back(0.0);
    f.push_back(0.0);
  }
  const Vec ec = embed_prompt(s.prompt, p.token_emb);
  f.insert(f.end(), ec.begin(), ec.end());
  const Vec eq = embed_prompt(s.query, p.token_emb);
  f.insert(f.end(), eq.begin(), eq.end());
  const Vec tf = time_features(s.t, s.T, p.d_time);
  f.insert(f.end(), tf.begin(), tf.end());
  return f;
}

ActionDistribution policy_distribution(const PolicyParams& p, const MdpState& s, Feedback feedback,
                                       PolicyCache* cache) {
  PolicyCache local;
  PolicyCache& c = cache ? *cache : local;
  c.features = featurize_state(p, s, feedback);
  c.hidden = mlp_forward(p.trunk, c.features, &c.trunk);
  c.logits.assign(p.head_w.size(), {});
  ActionDistribution dist;
  dist.slot_logprobs.resize(p.head_w.size());
  for (size_t slot = 0; slot < p.head_w.size(); ++slot) {
    const Mat& w = p.head_w[slot];
    Vec logits(w.rows);
    for (int r = 0; r < w.rows; ++r) {
      double z = p.head_b[slot][r];
      const double* wr = w.a.data() + static_cast<size_t>(r) * w.cols;
      for (int k = 0; k < w.cols; ++k) z += wr[k] * c.hidden[k];
      logits[r] = z;
    }
    c.logits[slot] = logits;
    dist.slot_logprobs[slot] = log_softmax(logits);
  }
  return dist;
}

SampledAction sample_action(const PolicyParams& p, const MdpState& s, Feedback feedback,
                            RandomSource& rng) {
  const ActionDistribution dist = policy_distribution(p, s, feedback);
  SampledAction out;
  out.action.ids.resize(dist.slot_logprobs.size());
  out.slot_logprobs.resize(dist.slot_logprobs.size());
  for (size_t slot = 0; slot < dist.slot_logprobs.size(); ++slot) {
    const int tok = sample_from_logprobs(dist.slot_logprobs[slot], rng);
    out.action.ids[slot] = tok;
    out.slot_logprobs[slot] = dist.slot_logprobs[slot][tok];
    out.logprob += out.slot_logprobs[slot];
  }
  return out;
}

double action_logprob(const PolicyParams& p, const MdpState& s, Feedback feedback,
                      const Prompt& action, Vec* slot_logprobs) {
  if (action.length() != p.prompt_len) throw UsageError("action_logprob: action length mismatch");
  const ActionDistribution dist = policy_distribution(p, s, feedback);
  double lp = 0.0;
  if (slot_logprobs) slot_logprobs->assign(action.ids.size(), 0.0);
  for (size_t slot = 0; slot < action.ids.size(); ++slot) {
    const int32_t tok = action.ids[slot];
    if (tok < 0 || tok >= p.vocab_size) throw UsageError("action_logprob: token id out of range");
    const double v = dist.slot_logprobs[slot][tok];
    if (slot_logprobs) (*slot_logprobs)[slot] = v;
    lp += v;
  }
  return lp;
}

void policy_backward(const PolicyParams& p, const MdpState& s, Feedback feedback,
                     const PolicyCache& cache, const std::vector<Vec>& d_logits, PolicyGrads& acc) {
  (void)feedback;  // masking already reflected in cache.features
  if (d_logits.size() != p.head_w.size())
    throw UsageError("policy_backward: slot count mismatch");
  Vec d_hidden(cache.hidden.size(), 0.0);
  for (size_t slot = 0; slot < p.head_w.size(); ++slot) {
    const Mat& w = p.head_w[slot];
    const Vec& dl = d_logits[slot];
    if (dl.size() != static_cast<size_t>(w.rows))
      throw UsageError("policy_backward: logit gradient size mismatch");
    Mat& gw = acc.head_w[slot];
    Vec& gb = acc.head_b[slot];
    for (int r = 0; r < w.rows; ++r) {
      if (dl[r] == 0.0) continue;
      gb[r] += dl[r];
      double* gr = gw.a.data() + static_cast<size_t>(r) * gw.cols;
      const double* wr = w.a.data() + static_cast<size_t>(r) * w.cols;
      for (int k = 0; k < w.cols; ++k) {
        gr[k] += dl[r] * cache.hidden[k];
        d_hidden[k] += wr[k] * dl[r];
      }
    }
  }
  const Vec d_input = mlp_backward(p.trunk, cache.trunk, d_hidden, acc.trunk);
  // Embedding blocks: current prompt at [2, 2+d), query at [2+d, 2+2d).
  const double inv_c = 1.0 / static_cast<double>(s.prompt.ids.size());
  for (int32_t id : s.prompt.ids) {
    auto row = acc.token_emb.row(id);
    for (int c = 0; c < p.d_emb; ++c) row[c] += inv_c * d_input[2 + c];
  }
  const double inv_q = 1.0 / static_cast<double>(s.query.ids.size());
  for (int32_t id : s.query.ids) {
    auto row = acc.token_emb.row(id);
    for (int c = 0; c < p.d_emb; ++c) row[c] += inv_q * d_input[2 + p.d_emb + c];
  }
}

}  // namespace steerloop
