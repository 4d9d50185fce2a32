#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grda/data.hpp"
#include "grda/model.hpp"
#include "grda/schedule.hpp"

namespace grda {

enum class Protocol { Baseline, Finetune, DomainAdaptation };

std::string to_string(Protocol protocol);
Protocol parse_protocol(std::string_view text);

struct TrainConfig {
  Protocol protocol = Protocol::Baseline;
  std::size_t epochs = 10;
  std::size_t batch_per_domain = 8;
  double learning_rate = 1e-2;
  int source_domain = 0;
  // Domains taking part in training. Empty selects the protocol default:
  // {source} for baseline, every domain for da. Finetune needs exactly one.
  std::vector<int> active_domains;
  double alpha = 10.0;
  double clamp = 5000.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  ModelConfig model;

  std::vector<int> resolved_domains(std::size_t available) const;
  /// Domains whose class labels enter the classification loss.
  std::vector<int> labeled_domains(std::size_t available) const;
  void validate(std::size_t available) const;
};

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double clf_loss = 0.0;
  double dmn_loss = 0.0;  // clamped mean for da, plain mean otherwise
  double lambda = 0.0;
  double total_loss = 0.0;
};

struct MetricsRecord {
  std::size_t epoch = 0;
  int domain = 0;
  std::string split = "val";
  double accuracy = 0.0;
  double clf_loss = 0.0;
  double dmn_loss = 0.0;
  double lambda = 0.0;
};

struct TrainStepResult {
  ModelParams params;
  StepMetrics metrics;
};

/// One SGD step on an aggregated batch. The classification loss averages
/// the per-sample NLL over source_mask samples. For da, per-sample domain
/// losses over every sample are clamped, averaged and weighted by
/// factor(state). Advances state.n.
TrainStepResult train_step(const ModelParams& params, const AggregatedBatch& batch,
                           const TrainConfig& config, ScheduleState& state);

/// Accuracy and mean unclamped losses over one split of one domain.
MetricsRecord evaluate(const ModelParams& params, const DomainDataset& dataset,
                       const std::string& split);

/// Latent vectors [n x latent_width] of the chosen samples.
Tensor compute_latent(const ModelParams& params, const DomainDataset& dataset,
                      std::span<const std::size_t> indices);

/// Validation accuracy of a freshly fitted linear domain probe on the
/// frozen latent space. Measures how much domain identity the extractor
/// still exposes; 1/D is chance for equal-sized domains.
double domain_probe_accuracy(const ModelParams& params, std::span<const DomainDataset> datasets);

struct SgdState {
  double learning_rate = 0.0;
  std::int64_t steps = 0;
};

struct Checkpoint {
  ModelParams params;
  SgdState optimizer;
  ScheduleState schedule;
  std::uint64_t fingerprint = 0;
  std::size_t epoch = 0;
  double lambda = 0.0;  // factor value logged with the final metrics rows
};

struct RunResult {
  std::vector<MetricsRecord> history;
  std::vector<StepMetrics> steps;
  Checkpoint checkpoint;
};

/// Called after every optimizer step with the step's metrics and the updated
/// parameters.
using StepObserver = std::function<void(const StepMetrics&, const ModelParams&)>;

/// Runs one experiment protocol. Validation metrics for every dataset are
/// recorded before training and after every eval_every epochs (and after
/// the last epoch). Finetune requires `init`.
RunResult run_protocol(const TrainConfig& config, std::span<const DomainDataset> datasets,
                       const Checkpoint* init = nullptr, const StepObserver& observer = {});

/// Stable hash of the resolved training configuration.
std::uint64_t config_fingerprint(const TrainConfig& config);

}  // namespace grda
