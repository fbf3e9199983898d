#pragma once

#include <string>

#include "steerloop/numerics.hpp"

namespace steerloop {

enum class ScheduleKind { Linear, Cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string schedule_kind_name(ScheduleKind kind);

/// Variance schedule for the T-step noising chain. Arrays are stored for
/// t = 1..T at index t-1; alpha_bar_prev(1) is defined as 1.
struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::Linear;
  double beta_min = 0.0;
  double beta_max = 0.0;
  Vec beta, alpha, alpha_bar, sigma;

  double beta_t(int t) const { return beta[check(t)]; }
  double alpha_t(int t) const { return alpha[check(t)]; }
  double alpha_bar_t(int t) const { return alpha_bar[check(t)]; }
  double alpha_bar_prev(int t) const { return check(t) == 0 ? 1.0 : alpha_bar[t - 2]; }
  double sigma_t(int t) const { return sigma[check(t)]; }

 private:
  int check(int t) const;
};

NoiseSchedule make_schedule(int T, double beta_min, double beta_max, ScheduleKind kind);

}  // namespace steerloop
