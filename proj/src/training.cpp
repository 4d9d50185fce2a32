#include "grda/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "grda/config_json.hpp"
#include "grda/errors.hpp"
#include "grda/rng.hpp"

namespace grda {

std::string to_string(Protocol protocol) {
  switch (protocol) {
    case Protocol::Baseline: return "baseline";
    case Protocol::Finetune: return "finetune";
    case Protocol::DomainAdaptation: return "da";
  }
  return "unknown";
}

Protocol parse_protocol(std::string_view text) {
  if (text == "baseline") return Protocol::Baseline;
  if (text == "finetune") return Protocol::Finetune;
  if (text == "da") return Protocol::DomainAdaptation;
  throw ConfigError("unknown protocol '" + std::string(text) + "' (expected baseline, finetune or da)");
}

std::vector<int> TrainConfig::resolved_domains(std::size_t available) const {
  if (!active_domains.empty()) return active_domains;
  if (protocol == Protocol::DomainAdaptation) {
    std::vector<int> all(available);
    for (std::size_t d = 0; d < available; ++d) all[d] = static_cast<int>(d);
    return all;
  }
  return {source_domain};
}

std::vector<int> TrainConfig::labeled_domains(std::size_t available) const {
  if (protocol == Protocol::DomainAdaptation) return {source_domain};
  return resolved_domains(available);
}

void TrainConfig::validate(std::size_t available) const {
  model.validate();
  if (batch_per_domain == 0) throw ConfigError("batch_per_domain must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (eval_every == 0) throw ConfigError("eval_every must be at least 1");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(clamp > 0.0)) throw ConfigError("clamp must be positive");
  const auto domains = resolved_domains(available);
  std::set<int> unique(domains.begin(), domains.end());
  if (unique.size() != domains.size()) throw ConfigError("active domains contain duplicates");
  for (int d : domains) {
    if (d < 0 || static_cast<std::size_t>(d) >= available) {
      throw ConfigError("active domain " + std::to_string(d) + " is not in the dataset (" +
                        std::to_string(available) + " domains)");
    }
    if (static_cast<std::size_t>(d) >= model.num_domains) {
      throw ConfigError("domain " + std::to_string(d) + " exceeds the model's " +
                        std::to_string(model.num_domains) + " domain outputs");
    }
  }
  switch (protocol) {
    case Protocol::Baseline:
      break;
    case Protocol::Finetune:
      if (domains.size() != 1) throw ConfigError("finetune trains on exactly one target domain");
      break;
    case Protocol::DomainAdaptation:
      if (domains.size() < 2) throw ConfigError("da requires at least 2 active domains");
      if (!unique.count(source_domain)) {
        throw ConfigError("source domain " + std::to_string(source_domain) + " is not active");
      }
      break;
  }
}

TrainStepResult train_step(const ModelParams& params, const AggregatedBatch& batch,
                           const TrainConfig& config, ScheduleState& state) {
  const bool da = config.protocol == Protocol::DomainAdaptation;
  const std::size_t b = batch.class_labels.size();
  if (b == 0 || batch.domain_labels.size() != b || batch.source_mask.size() != b ||
      batch.images.rank() != 4 || batch.images.dim(0) != b) {
    throw ContractError("train_step: malformed aggregated batch");
  }
  if (da) {
    std::set<int> domains(batch.domain_labels.begin(), batch.domain_labels.end());
    if (domains.size() < 2) throw ConfigError("da step needs samples from at least 2 domains");
  }
  const double lambda = da ? factor(state) : 0.0;

  Tape tape;
  const ForwardOutput fwd =
      forward(tape, params, batch.images, da ? DomainPath::Reversed : DomainPath::Detached);

  const auto labeled = static_cast<std::size_t>(
      std::count_if(batch.source_mask.begin(), batch.source_mask.end(), [](auto m) { return m != 0; }));
  Var clf_terms = nll_loss(fwd.clf_logprobs, batch.class_labels, batch.source_mask);
  Var clf_loss = labeled ? scale(sum(clf_terms), 1.0 / static_cast<double>(labeled))
                         : tape.constant(Tensor::scalar(0.0));

  Var dmn_terms = nll_loss(fwd.dmn_logprobs, batch.domain_labels);
  Var total;
  Var dmn_loss;
  if (da) {
    dmn_loss = scale(sum(clamp_domain_loss(dmn_terms, state)), 1.0 / static_cast<double>(b));
    total = add(clf_loss, scale(dmn_loss, lambda));
  } else {
    dmn_loss = scale(sum(dmn_terms), 1.0 / static_cast<double>(b));
    total = clf_loss;
  }

  const Gradients grads = backward(total);
  ModelParams next = params;
  for (auto& [name, tensor] : next.tensors) {
    const Tensor& g = grads.at(name);
    auto values = tensor.data();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= config.learning_rate * g[i];
  }

  StepMetrics m;
  m.step = static_cast<std::size_t>(state.n);
  m.clf_loss = clf_loss.value().item();
  m.dmn_loss = dmn_loss.value().item();
  m.lambda = lambda;
  m.total_loss = total.value().item();
  ++state.n;
  return {std::move(next), m};
}

namespace {
constexpr std::size_t kEvalChunk = 64;
}

MetricsRecord evaluate(const ModelParams& params, const DomainDataset& dataset,
                       const std::string& split) {
  const auto& indices = dataset.split(split);
  if (indices.empty()) {
    throw DataError("domain " + std::to_string(dataset.domain_label) + " has an empty " + split +
                    " split");
  }
  double clf_sum = 0.0, dmn_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(indices.size(), start + kEvalChunk);
    std::span<const std::size_t> chunk(indices.data() + start, stop - start);
    std::vector<int> classes, domains;
    for (std::size_t idx : chunk) {
      classes.push_back(dataset.samples[idx].class_label);
      domains.push_back(dataset.samples[idx].domain_label);
    }
    Tape tape;
    const ForwardOutput fwd = forward(tape, params, stack_images(dataset, chunk), DomainPath::Detached);
    for (double v : nll_loss(fwd.clf_logprobs, classes).value().data()) clf_sum += v;
    for (double v : nll_loss(fwd.dmn_logprobs, domains).value().data()) dmn_sum += v;
    const auto predicted = predict(fwd.clf_logprobs.value());
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == classes[i];
  }
  const double n = static_cast<double>(indices.size());
  MetricsRecord r;
  r.domain = dataset.domain_label;
  r.split = split;
  r.accuracy = static_cast<double>(correct) / n;
  r.clf_loss = clf_sum / n;
  r.dmn_loss = dmn_sum / n;
  return r;
}

Tensor compute_latent(const ModelParams& params, const DomainDataset& dataset,
                      std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("compute_latent: no samples selected");
  const std::size_t width = params.config.latent_width();
  Tensor out({indices.size(), width});
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(indices.size(), start + kEvalChunk);
    Tape tape;
    const ForwardOutput fwd = forward(
        tape, params, stack_images(dataset, indices.subspan(start, stop - start)), DomainPath::Detached);
    const auto latent = fwd.latent.value().data();
    std::copy(latent.begin(), latent.end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * width));
  }
  return out;
}

double domain_probe_accuracy(const ModelParams& params, std::span<const DomainDataset> datasets) {
  constexpr int kIterations = 300;
  constexpr double kStep = 0.5;
  const std::size_t D = params.config.num_domains;
  const std::size_t width = params.config.latent_width();

  auto gather = [&](const char* split, std::vector<int>& labels) {
    std::vector<double> rows;
    for (const auto& ds : datasets) {
      const auto& idx = ds.split(split);
      if (idx.empty()) continue;
      const Tensor lat = compute_latent(params, ds, idx);
      rows.insert(rows.end(), lat.data().begin(), lat.data().end());
      labels.insert(labels.end(), idx.size(), ds.domain_label);
    }
    if (labels.empty()) throw DataError("domain probe: empty " + std::string(split) + " split");
    return Tensor({labels.size(), width}, std::move(rows));
  };
  std::vector<int> train_labels, val_labels;
  Tensor train = gather("train", train_labels);
  Tensor val = gather("val", val_labels);

  // Standardise with train statistics.
  for (std::size_t j = 0; j < width; ++j) {
    double mean = 0.0, var = 0.0;
    const std::size_t n = train.dim(0);
    for (std::size_t i = 0; i < n; ++i) mean += train[i * width + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += std::pow(train[i * width + j] - mean, 2);
    const double sd = std::sqrt(var / static_cast<double>(n)) + 1e-8;
    for (Tensor* t : {&train, &val}) {
      for (std::size_t i = 0; i < t->dim(0); ++i) (*t)[i * width + j] = ((*t)[i * width + j] - mean) / sd;
    }
  }

  Tensor weight({width, D});
  Tensor bias({D});
  for (int it = 0; it < kIterations; ++it) {
    Tape tape;
    Var w = tape.parameter("w", weight);
    Var b = tape.parameter("b", bias);
    Var loss = sum(nll_loss(log_softmax(linear(tape.constant(train), w, b)), train_labels));
    loss = scale(loss, 1.0 / static_cast<double>(train_labels.size()));
    const Gradients g = backward(loss);
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] -= kStep * g.at("w")[i];
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] -= kStep * g.at("b")[i];
  }
  Tape tape;
  Var logits = linear(tape.constant(val), tape.constant(weight), tape.constant(bias));
  const auto predicted = predict(logits.value());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == val_labels[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

std::uint64_t config_fingerprint(const TrainConfig& config) {
  const std::string canonical = nlohmann::json(config).dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

namespace {

void record_evaluation(std::vector<MetricsRecord>& history, const ModelParams& params,
                       std::span<const DomainDataset> datasets, std::size_t epoch, double lambda) {
  for (const auto& ds : datasets) {
    MetricsRecord r = evaluate(params, ds, "val");
    r.epoch = epoch;
    r.lambda = lambda;
    history.push_back(r);
  }
}

}  // namespace

RunResult run_protocol(const TrainConfig& config, std::span<const DomainDataset> datasets,
                       const Checkpoint* init, const StepObserver& observer) {
  if (datasets.empty()) throw DataError("run_protocol: no datasets");
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    if (datasets[d].domain_label != static_cast<int>(d)) {
      throw DataError("datasets must be ordered by domain label");
    }
  }
  if (config.protocol == Protocol::Finetune && init == nullptr) {
    throw ConfigError("finetune requires an initial checkpoint");
  }
  TrainConfig resolved = config;
  if (init != nullptr) resolved.model = init->params.config;
  resolved.active_domains = config.resolved_domains(datasets.size());
  resolved.validate(datasets.size());
  if (datasets.size() > resolved.model.num_domains) {
    throw DimensionError("dataset has " + std::to_string(datasets.size()) +
                         " domains but the model has " + std::to_string(resolved.model.num_domains) +
                         " domain outputs");
  }
  if (datasets[0].image_size != resolved.model.input_size) {
    throw DimensionError("dataset images are " + std::to_string(datasets[0].image_size) +
                         " pixels but the model expects " + std::to_string(resolved.model.input_size));
  }

  ModelParams params = init != nullptr
                           ? init->params
                           : init_params(resolved.model, derive_seed(resolved.seed, "init"));

  std::vector<DomainDataset> active;
  for (int d : resolved.active_domains) active.push_back(datasets[static_cast<std::size_t>(d)]);
  const auto labeled = resolved.labeled_domains(datasets.size());
  const bool da = resolved.protocol == Protocol::DomainAdaptation;

  const std::size_t per_epoch = steps_per_epoch(active, resolved.batch_per_domain);
  ScheduleState state;
  state.total = static_cast<std::int64_t>(std::max<std::size_t>(1, resolved.epochs * per_epoch));
  state.alpha = resolved.alpha;
  state.clamp = resolved.clamp;

  RunResult result;
  auto current_lambda = [&] { return da ? factor(state) : 0.0; };
  record_evaluation(result.history, params, datasets, 0, current_lambda());

  const std::uint64_t shuffle_seed = derive_seed(resolved.seed, "shuffle");
  for (std::size_t epoch = 1; epoch <= resolved.epochs; ++epoch) {
    const auto batches = make_epoch(active, resolved.batch_per_domain,
                                    derive_seed(shuffle_seed, "epoch/" + std::to_string(epoch)),
                                    labeled);
    for (const auto& batch : batches) {
      TrainStepResult step = train_step(params, batch, resolved, state);
      step.metrics.epoch = epoch;
      params = std::move(step.params);
      result.steps.push_back(step.metrics);
      if (observer) observer(step.metrics, params);
    }
    if (epoch % resolved.eval_every == 0 || epoch == resolved.epochs) {
      record_evaluation(result.history, params, datasets, epoch, current_lambda());
    }
  }

  Checkpoint& ck = result.checkpoint;
  ck.params = std::move(params);
  ck.optimizer = {resolved.learning_rate, state.n};
  ck.schedule = state;
  ck.fingerprint = config_fingerprint(resolved);
  ck.epoch = resolved.epochs;
  ck.lambda = current_lambda();
  return result;
}

}  // namespace grda
