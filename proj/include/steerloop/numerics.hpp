#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace steerloop {

using Vec = std::vector<double>;

/// Dense row-major matrix. The one shape used everywhere downstream.
struct Mat {
  int rows = 0;
  int cols = 0;
  Vec a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
};

/// Seeded deterministic random stream with label-keyed child streams.
///
/// Children derive from the construction seed, not from the evolving state,
/// so split("x") yields the same stream no matter how many draws the parent
/// has made. Identical seed + identical call sequence gives identical output
/// on every platform (no libstdc++ distributions involved).
class RandomSource {
 public:
  explicit RandomSource(uint64_t seed) : seed_(seed), state_(seed) {}

  RandomSource split(std::string_view label) const;
  RandomSource split(std::string_view label, uint64_t index) const;

  uint64_t next_u64();
  double uniform();    // [0, 1)
  double gaussian();   // N(0, 1), Box-Muller
  int uniform_int(int n);  // unbiased draw from [0, n)

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

enum class Activation { Tanh, Relu };

/// Plain fully connected net. Hidden layers use `activation`; the last layer
/// is linear unless `activate_output` is set (used for policy trunks whose
/// output is itself a hidden representation).
struct MlpParams {
  std::vector<Mat> weights;  // layer l maps cols -> rows
  std::vector<Vec> biases;
  Activation activation = Activation::Tanh;
  bool activate_output = false;

  int input_dim() const { return weights.empty() ? 0 : weights.front().cols; }
  int output_dim() const { return weights.empty() ? 0 : weights.back().rows; }
  size_t layer_count() const { return weights.size(); }
};

/// He-style init: w ~ N(0, 1/fan_in), biases zero.
MlpParams make_mlp(const std::vector<int>& dims, Activation act, RandomSource& rng,
                   bool activate_output = false);

struct MlpCache {
  Vec input;
  std::vector<Vec> pre;   // pre-activation per layer
  std::vector<Vec> post;  // post-activation per layer; post.back() is the output
};

Vec mlp_forward(const MlpParams& p, const Vec& input, MlpCache* cache = nullptr);

struct MlpGrads {
  std::vector<Mat> weights;
  std::vector<Vec> biases;
};

MlpGrads make_zero_grads(const MlpParams& p);

/// Backprop through the cached forward pass. Accumulates into `acc` and
/// returns the gradient w.r.t. the input vector.
Vec mlp_backward(const MlpParams& p, const MlpCache& cache, const Vec& output_grad, MlpGrads& acc);

/// Adam with bias correction. Moment buffers are allocated on first use and
/// must keep matching shapes afterwards.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<Vec> m, v;
};

void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads);

std::vector<std::span<double>> param_spans(MlpParams& p);
std::vector<std::span<const double>> grad_spans(const MlpGrads& g);

/// Numerically stable log-softmax (max-shifted).
Vec log_softmax(const Vec& logits);

/// Inverse-CDF draw from a categorical given log-probabilities.
int sample_from_logprobs(const Vec& logprobs, RandomSource& rng);

/// Sinusoidal features of t/T, d values (d/2 frequency pairs).
Vec time_features(int t, int T, int d);

/// Central-difference check of an analytic gradient. `f` evaluates the scalar
/// at the current parameter values; entries are perturbed in place and
/// restored. Returns the worst-coordinate error scaled by max(1, |a|, |n|).
double finite_diff_check(const std::function<double()>& f,
                         const std::vector<std::span<double>>& params,
                         const std::vector<std::span<const double>>& analytic, double h = 1e-5);

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Thread count never
/// affects results: work is index-addressed, nothing is reduced in parallel.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

bool all_finite(std::span<const double> xs);

}  // namespace steerloop
