#include "grda/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "grda/errors.hpp"

namespace grda {

void ScheduleState::validate() const {
  if (total <= 0) throw ContractError("schedule: total steps must be positive");
  if (n < 0 || n > total) {
    throw ContractError("schedule: step " + std::to_string(n) + " outside [0, " +
                        std::to_string(total) + "]");
  }
  if (!(alpha > 0.0)) throw ContractError("schedule: alpha must be positive");
  if (!(clamp > 0.0)) throw ContractError("schedule: clamp must be positive");
}

double factor(const ScheduleState& state) {
  state.validate();
  const double progress = static_cast<double>(state.n) / static_cast<double>(state.total);
  return 2.0 / (1.0 + std::exp(-state.alpha * progress)) - 1.0;
}

double clamp_ceiling(const ScheduleState& state) { return state.clamp * factor(state); }

namespace {
void check_nonnegative(const Tensor& losses) {
  for (double v : losses.data()) {
    if (v < 0.0) throw ContractError("clamp_domain_loss: negative loss " + std::to_string(v));
  }
}
}  // namespace

Tensor clamp_domain_loss(const Tensor& per_sample, const ScheduleState& state) {
  check_nonnegative(per_sample);
  const double ceiling = clamp_ceiling(state);
  Tensor out = per_sample;
  for (double& v : out.data()) v = std::min(v, ceiling);
  return out;
}

Var clamp_domain_loss(Var per_sample, const ScheduleState& state) {
  check_nonnegative(per_sample.value());
  return clamp_max(per_sample, clamp_ceiling(state));
}

double combine_losses(double clf_loss, double dmn_loss, double lambda) {
  return clf_loss + lambda * dmn_loss;
}

}  // namespace grda
