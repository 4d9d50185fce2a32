#include "grda/report.hpp"

#include <charconv>

namespace grda {

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

std::string metrics_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + ',' + std::to_string(r.domain) + ',' + r.split + ',' +
         format_double(r.accuracy) + ',' + format_double(r.clf_loss) + ',' +
         format_double(r.dmn_loss) + ',' + format_double(r.lambda);
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records) {
  out << kMetricsHeader << '\n';
  for (const auto& r : records) out << metrics_row(r) << '\n';
}

void write_steps_csv(std::ostream& out, std::span<const StepMetrics> steps) {
  out << kStepsHeader << '\n';
  for (const auto& s : steps) {
    out << s.step << ',' << s.epoch << ',' << format_double(s.clf_loss) << ','
        << format_double(s.dmn_loss) << ',' << format_double(s.lambda) << ','
        << format_double(s.total_loss) << '\n';
  }
}

}  // namespace grda
