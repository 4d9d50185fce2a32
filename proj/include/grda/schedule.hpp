#pragma once

#include <cstdint>

#include "grda/autodiff.hpp"
#include "grda/tensor.hpp"

namespace grda {

/// Progress through a training run: step n of N planned optimizer steps,
/// the factor steepness alpha and the clamp ceiling coefficient.
struct ScheduleState {
  std::int64_t n = 0;
  std::int64_t total = 1;
  double alpha = 10.0;
  double clamp = 5000.0;

  void validate() const;
};

/// Domain-loss weight 2 / (1 + exp(-alpha * n / N)) - 1. Starts at exactly 0,
/// increases strictly with n and stays below 1.
double factor(const ScheduleState& state);

/// Upper bound clamp * factor(state) applied to each per-sample domain loss.
double clamp_ceiling(const ScheduleState& state);

/// Caps every per-sample domain loss at clamp_ceiling(state), before any
/// averaging. Throws ContractError on a negative loss.
Tensor clamp_domain_loss(const Tensor& per_sample, const ScheduleState& state);

/// Same cap recorded on a tape so the gradient is cut for capped samples.
Var clamp_domain_loss(Var per_sample, const ScheduleState& state);

/// Total objective L_clf + lambda * L_dmn.
double combine_losses(double clf_loss, double dmn_loss, double lambda);

}  // namespace grda
