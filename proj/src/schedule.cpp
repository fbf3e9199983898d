#include "steerloop/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "steerloop/errors.hpp"

namespace steerloop {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "cosine") return ScheduleKind::Cosine;
  throw ConfigError("unknown schedule kind '" + name + "' (expected linear|cosine)");
}

std::string schedule_kind_name(ScheduleKind kind) {
  return kind == ScheduleKind::Linear ? "linear" : "cosine";
}

int NoiseSchedule::check(int t) const {
  if (t < 1 || t > T) throw UsageError("timestep out of range [1, T]");
  return t - 1;
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max, ScheduleKind kind) {
  if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
    throw ConfigError("make_schedule: need 0 < beta_min <= beta_max < 1");

  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.beta.resize(T);

  if (kind == ScheduleKind::Linear) {
    const int denom = std::max(1, T - 1);
    for (int t = 1; t <= T; ++t)
      s.beta[t - 1] = beta_min + (beta_max - beta_min) * static_cast<double>(t - 1) / denom;
  } else {
    // alpha_bar follows the squared-cosine profile; beta is derived from its
    // ratio and clipped into (0, 0.999].
    const double off = 0.008;
    auto f = [&](double u) {
      const double x = std::cos((u + off) / (1.0 + off) * M_PI / 2.0);
      return x * x;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double cur = f(static_cast<double>(t) / T) / f0;
      double b = 1.0 - cur / prev;
      b = std::clamp(b, 1e-8, 0.999);
      s.beta[t - 1] = b;
      prev = cur;
    }
  }

  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  s.sigma.resize(T);
  double bar = 1.0;
  for (int t = 1; t <= T; ++t) {
    s.alpha[t - 1] = 1.0 - s.beta[t - 1];
    const double bar_prev = bar;
    bar *= s.alpha[t - 1];
    s.alpha_bar[t - 1] = bar;
    const double var = (1.0 - bar_prev) / (1.0 - bar) * s.beta[t - 1];
    s.sigma[t - 1] = std::sqrt(std::max(0.0, var));
  }
  return s;
}

}  // namespace steerloop
