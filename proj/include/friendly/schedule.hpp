#pragma once

#include <string>

#include "friendly/common.hpp"

namespace friendly {

/// Developmental plan: the simplification weight eta ramps from 0 to eta_max
/// over the first gamma_max_simp iterations, after which the auxiliary
/// network is dropped entirely.
struct SchedulePlan {
  int gamma_max = 0;
  int gamma_max_simp = 0;
  double eta_max = 0.0;

  void validate() const {
    if (gamma_max_simp < 2)
      throw Error("schedule: gamma_max_simp must be >= 2, got " +
                  std::to_string(gamma_max_simp));
    if (gamma_max_simp >= gamma_max)
      throw Error("schedule: requires gamma_max_simp < gamma_max, got " +
                  std::to_string(gamma_max_simp) + " vs " + std::to_string(gamma_max));
    if (eta_max <= 0.0) throw Error("schedule: eta_max must be positive");
  }
};

enum class Phase { skip_aux_update, update_aux, dropped };

inline void check_gamma(const SchedulePlan& plan, int gamma) {
  if (gamma < 1 || gamma > plan.gamma_max)
    throw Error("schedule: gamma " + std::to_string(gamma) + " outside [1," +
                std::to_string(plan.gamma_max) + "]");
}

/// eta = eta_max * (1 - [1 - (gamma-1)/(gamma_max_simp-1)]_+^2)
inline double eta_at(const SchedulePlan& plan, int gamma) {
  check_gamma(plan, gamma);
  const double frac =
      1.0 - static_cast<double>(gamma - 1) / static_cast<double>(plan.gamma_max_simp - 1);
  const double clamped = frac > 0.0 ? frac : 0.0;
  return plan.eta_max * (1.0 - clamped * clamped);
}

/// gamma=1: aux transforms but is not trained; then trained up to
/// gamma_max_simp; afterwards replaced by the identity.
inline Phase phase_of(const SchedulePlan& plan, int gamma) {
  check_gamma(plan, gamma);
  if (gamma > plan.gamma_max_simp) return Phase::dropped;
  if (gamma == 1) return Phase::skip_aux_update;
  return Phase::update_aux;
}

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::skip_aux_update: return "skip_aux_update";
    case Phase::update_aux: return "update_aux";
    case Phase::dropped: return "dropped";
  }
  return "?";
}

}  // namespace friendly
