#include "steerloop/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "steerloop/errors.hpp"

namespace steerloop {

namespace {

constexpr uint64_t kSplitMixGamma = 0x9E3779B97F4A7C15ull;

uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

RandomSource RandomSource::split(std::string_view label) const {
  return RandomSource(mix64(seed_ ^ mix64(fnv1a(label) + kSplitMixGamma)));
}

RandomSource RandomSource::split(std::string_view label, uint64_t index) const {
  return RandomSource(mix64(seed_ ^ mix64(fnv1a(label) + kSplitMixGamma) ^ mix64(index * kSplitMixGamma + 1)));
}

uint64_t RandomSource::next_u64() {
  state_ += kSplitMixGamma;
  return mix64(state_);
}

double RandomSource::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomSource::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), safe at u1=0
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

int RandomSource::uniform_int(int n) {
  if (n <= 0) throw UsageError("uniform_int: n must be positive");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return static_cast<int>(v % un);
}

MlpParams make_mlp(const std::vector<int>& dims, Activation act, RandomSource& rng,
                   bool activate_output) {
  if (dims.size() < 2) throw ConfigError("make_mlp: need at least input and output dims");
  for (int d : dims)
    if (d <= 0) throw ConfigError("make_mlp: dimensions must be positive");
  MlpParams p;
  p.activation = act;
  p.activate_output = activate_output;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    Mat w(dims[l + 1], dims[l]);
    const double scale = std::sqrt(1.0 / dims[l]);
    for (double& x : w.a) x = scale * rng.gaussian();
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(dims[l + 1], 0.0);
  }
  return p;
}

namespace {

double apply_act(Activation act, double z) {
  return act == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

double act_deriv(Activation act, double pre, double post) {
  return act == Activation::Tanh ? 1.0 - post * post : (pre > 0.0 ? 1.0 : 0.0);
}

}  // namespace

Vec mlp_forward(const MlpParams& p, const Vec& input, MlpCache* cache) {
  if (static_cast<int>(input.size()) != p.input_dim())
    throw ConfigError("mlp_forward: input dimension mismatch");
  if (cache) {
    cache->input = input;
    cache->pre.assign(p.layer_count(), {});
    cache->post.assign(p.layer_count(), {});
  }
  Vec cur = input;
  for (size_t l = 0; l < p.layer_count(); ++l) {
    const Mat& w = p.weights[l];
    const Vec& b = p.biases[l];
    Vec z(w.rows);
    for (int r = 0; r < w.rows; ++r) {
      double s = b[r];
      const double* wr = w.a.data() + static_cast<size_t>(r) * w.cols;
      for (int c = 0; c < w.cols; ++c) s += wr[c] * cur[c];
      z[r] = s;
    }
    const bool activated = (l + 1 < p.layer_count()) || p.activate_output;
    Vec out(w.rows);
    for (int r = 0; r < w.rows; ++r) out[r] = activated ? apply_act(p.activation, z[r]) : z[r];
    if (cache) {
      cache->pre[l] = z;
      cache->post[l] = out;
    }
    cur = std::move(out);
  }
  return cur;
}

MlpGrads make_zero_grads(const MlpParams& p) {
  MlpGrads g;
  for (size_t l = 0; l < p.layer_count(); ++l) {
    g.weights.emplace_back(p.weights[l].rows, p.weights[l].cols);
    g.biases.emplace_back(p.biases[l].size(), 0.0);
  }
  return g;
}

Vec mlp_backward(const MlpParams& p, const MlpCache& cache, const Vec& output_grad, MlpGrads& acc) {
  if (cache.post.size() != p.layer_count() || cache.input.size() != static_cast<size_t>(p.input_dim()))
    throw UsageError("mlp_backward: cache does not match parameters");
  if (acc.weights.size() != p.layer_count())
    throw UsageError("mlp_backward: gradient accumulator shape mismatch");
  if (output_grad.size() != static_cast<size_t>(p.output_dim()))
    throw UsageError("mlp_backward: output gradient dimension mismatch");

  Vec delta = output_grad;
  for (size_t li = p.layer_count(); li-- > 0;) {
    const Mat& w = p.weights[li];
    const bool activated = (li + 1 < p.layer_count()) || p.activate_output;
    if (activated) {
      for (int r = 0; r < w.rows; ++r)
        delta[r] *= act_deriv(p.activation, cache.pre[li][r], cache.post[li][r]);
    }
    const Vec& below = (li == 0) ? cache.input : cache.post[li - 1];
    Mat& gw = acc.weights[li];
    Vec& gb = acc.biases[li];
    for (int r = 0; r < w.rows; ++r) {
      gb[r] += delta[r];
      double* gr = gw.a.data() + static_cast<size_t>(r) * gw.cols;
      for (int c = 0; c < w.cols; ++c) gr[c] += delta[r] * below[c];
    }
    Vec next(w.cols, 0.0);
    for (int r = 0; r < w.rows; ++r) {
      const double* wr = w.a.data() + static_cast<size_t>(r) * w.cols;
      for (int c = 0; c < w.cols; ++c) next[c] += wr[c] * delta[r];
    }
    delta = std::move(next);
  }
  return delta;
}

void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) throw ConfigError("adam_step: param/grad arity mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ConfigError("adam_step: state arity mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    auto g = grads[i];
    if (p.size() != g.size() || p.size() != state.m[i].size())
      throw ConfigError("adam_step: shape mismatch");
    Vec& m = state.m[i];
    Vec& v = state.v[i];
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

std::vector<std::span<double>> param_spans(MlpParams& p) {
  std::vector<std::span<double>> out;
  for (size_t l = 0; l < p.layer_count(); ++l) {
    out.emplace_back(p.weights[l].a);
    out.emplace_back(p.biases[l]);
  }
  return out;
}

std::vector<std::span<const double>> grad_spans(const MlpGrads& g) {
  std::vector<std::span<const double>> out;
  for (size_t l = 0; l < g.weights.size(); ++l) {
    out.emplace_back(g.weights[l].a);
    out.emplace_back(g.biases[l]);
  }
  return out;
}

Vec log_softmax(const Vec& logits) {
  if (logits.empty()) throw UsageError("log_softmax: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  Vec out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] - mx;
    sum += std::exp(out[i]);
  }
  const double lse = std::log(sum);
  for (double& x : out) x -= lse;
  return out;
}

int sample_from_logprobs(const Vec& logprobs, RandomSource& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  for (size_t i = 0; i < logprobs.size(); ++i) {
    cum += std::exp(logprobs[i]);
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(logprobs.size()) - 1;  // guards against cum rounding below 1
}

Vec time_features(int t, int T, int d) {
  if (d % 2 != 0) throw ConfigError("time_features: dimension must be even");
  const double u = static_cast<double>(t) / static_cast<double>(T);
  Vec out(d);
  double freq = M_PI;
  for (int k = 0; k < d / 2; ++k) {
    out[2 * k] = std::sin(u * freq);
    out[2 * k + 1] = std::cos(u * freq);
    freq *= 2.0;
  }
  return out;
}

double finite_diff_check(const std::function<double()>& f,
                         const std::vector<std::span<double>>& params,
                         const std::vector<std::span<const double>>& analytic, double h) {
  if (params.size() != analytic.size())
    throw ConfigError("finite_diff_check: param/grad arity mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    auto a = analytic[i];
    if (p.size() != a.size()) throw ConfigError("finite_diff_check: shape mismatch");
    for (size_t k = 0; k < p.size(); ++k) {
      const double saved = p[k];
      p[k] = saved + h;
      const double fp = f();
      p[k] = saved - h;
      const double fm = f();
      p[k] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(a[k]), std::abs(numeric)});
      worst = std::max(worst, std::abs(a[k] - numeric) / denom);
    }
  }
  return worst;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace steerloop
