#pragma once

#include <ostream>
#include <span>
#include <string>

#include "grda/training.hpp"

namespace grda {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

inline constexpr const char* kMetricsHeader = "epoch,domain,split,accuracy,clf_loss,dmn_loss,lambda";
inline constexpr const char* kStepsHeader = "step,epoch,clf_loss,dmn_loss,lambda,total_loss";

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records);
void write_steps_csv(std::ostream& out, std::span<const StepMetrics> steps);
std::string metrics_row(const MetricsRecord& record);

}  // namespace grda
