#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "grda/checkpoint.hpp"
#include "grda/config_json.hpp"
#include "grda/data.hpp"
#include "grda/errors.hpp"
#include "grda/projection.hpp"
#include "grda/report.hpp"
#include "grda/schedule.hpp"
#include "grda/tensor_io.hpp"
#include "grda/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace grda;

namespace {

constexpr int kManifestVersion = 1;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

bool non_empty_dir(const fs::path& p) {
  return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p));
}

// ---- gen-data ----

struct GenArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t domains = 4;
  std::vector<std::size_t> per_class{20};
  std::size_t size = 32;
  std::string shift = "default";
  bool force = false;
};

int cmd_gen_data(const GenArgs& a) {
  GeneratorConfig cfg;
  cfg.seed = a.seed;
  cfg.num_domains = a.domains;
  cfg.per_class = a.per_class;
  cfg.image_size = a.size;
  cfg.shift = a.shift;
  cfg.validate();
  if (non_empty_dir(a.out)) {
    if (!a.force) throw UsageError(a.out + " exists and is not empty; pass --force to replace it");
    fs::remove_all(a.out);
  }
  const auto datasets = generate_synthetic(cfg);
  save_datasets(a.out, datasets, cfg);
  std::cout << "domain  samples  train  val\n";
  for (const auto& ds : datasets) {
    std::cout << std::setw(6) << ds.domain_label << std::setw(9) << ds.samples.size() << std::setw(7)
              << ds.train.size() << std::setw(5) << ds.val.size() << '\n';
  }
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string protocol, data, out, config, init_checkpoint;
  std::optional<std::size_t> epochs, batch, eval_every, tap_width, hidden_width;
  std::optional<double> lr, alpha, clamp, leaky_slope;
  std::optional<int> source;
  std::optional<std::uint64_t> seed;
  std::vector<int> domains;
  std::vector<std::size_t> channels;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg;
  std::string data = a.data, init = a.init_checkpoint;
  bool model_given = false;
  if (!a.config.empty()) {
    json j = read_json(a.config);
    // A run manifest carries the config plus its inputs.
    if (j.contains("config")) {
      if (data.empty()) data = j.value("data", "");
      if (init.empty()) init = j.value("init_checkpoint", "");
      j = j["config"];
    }
    try {
      j.get_to(cfg);
    } catch (const json::exception& e) {
      throw ConfigError(a.config + ": " + e.what());
    }
    model_given = j.contains("model");
  }
  if (!a.protocol.empty()) cfg.protocol = parse_protocol(a.protocol);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch) cfg.batch_per_domain = *a.batch;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.source) cfg.source_domain = *a.source;
  if (!a.domains.empty()) cfg.active_domains = a.domains;
  if (a.alpha) cfg.alpha = *a.alpha;
  if (a.clamp) cfg.clamp = *a.clamp;
  if (a.seed) cfg.seed = *a.seed;
  if (a.eval_every) cfg.eval_every = *a.eval_every;
  if (!a.channels.empty()) cfg.model.conv_channels = a.channels;
  if (a.tap_width) cfg.model.tap_width = *a.tap_width;
  if (a.hidden_width) cfg.model.hidden_width = *a.hidden_width;
  if (a.leaky_slope) cfg.model.leaky_slope = *a.leaky_slope;

  if (data.empty()) throw UsageError("--data is required");
  if (cfg.protocol == Protocol::Finetune && init.empty()) {
    throw UsageError("--protocol finetune needs --init-checkpoint");
  }
  if (cfg.protocol != Protocol::Finetune && !init.empty()) {
    throw UsageError("--init-checkpoint only applies to --protocol finetune");
  }

  const auto datasets = load_datasets(data);
  std::optional<Checkpoint> start;
  if (!init.empty()) {
    if (!fs::exists(init)) throw UsageError("checkpoint not found: " + init);
    start = load_checkpoint(init);
    cfg.model = start->params.config;
  } else if (!model_given) {
    cfg.model.input_size = datasets.front().image_size;
    cfg.model.num_domains = std::max(cfg.model.num_domains, datasets.size());
  }
  cfg.active_domains = cfg.resolved_domains(datasets.size());
  cfg.validate(datasets.size());

  fs::create_directories(a.out);
  const auto t0 = std::chrono::steady_clock::now();
  const RunResult run = run_protocol(cfg, datasets, start ? &*start : nullptr);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path out(a.out);
  {
    auto f = open_out(out / "metrics.csv");
    write_metrics_csv(f, run.history);
  }
  {
    auto f = open_out(out / "steps.csv");
    write_steps_csv(f, run.steps);
  }
  save_checkpoint(run.checkpoint, out / "checkpoint.grda");

  json manifest = {
      {"command", "train"},
      {"manifest_version", kManifestVersion},
      {"config", cfg},
      {"seed", cfg.seed},
      {"data", fs::absolute(data).string()},
      {"init_checkpoint", init.empty() ? "" : fs::absolute(init).string()},
      {"artifacts",
       {{"metrics", "metrics.csv"}, {"steps", "steps.csv"}, {"checkpoint", "checkpoint.grda"}}},
      {"format_versions", {{"tensor", kTensorFormatVersion}, {"manifest", kManifestVersion}}},
      {"fingerprint", run.checkpoint.fingerprint},
      {"timing", {{"seconds", seconds}, {"steps", run.steps.size()}}},
  };
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  std::cout << to_string(cfg.protocol) << ": " << run.steps.size() << " steps in " << std::fixed
            << std::setprecision(1) << seconds << " s\n";
  std::cout.unsetf(std::ios::floatfield);
  for (const auto& r : run.history) {
    if (r.epoch == cfg.epochs) {
      std::cout << "  domain " << r.domain << "  accuracy " << std::setprecision(4) << r.accuracy
                << "  clf_loss " << r.clf_loss << '\n';
    }
  }
  return 0;
}

// ---- eval / project ----

std::vector<DomainDataset> load_matching(const std::string& data, const Checkpoint& ck) {
  auto datasets = load_datasets(data);
  const ModelConfig& m = ck.params.config;
  if (datasets.front().image_size != m.input_size) {
    throw ShapeMismatchError("data images are " + std::to_string(datasets.front().image_size) +
                             " pixels, checkpoint model expects " + std::to_string(m.input_size));
  }
  if (datasets.size() > m.num_domains) {
    throw ShapeMismatchError("data has " + std::to_string(datasets.size()) +
                             " domains, checkpoint model has " + std::to_string(m.num_domains));
  }
  return datasets;
}

Checkpoint load_existing(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

struct EvalArgs {
  std::string checkpoint, data, out;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = load_existing(a.checkpoint);
  const auto datasets = load_matching(a.data, ck);
  std::vector<MetricsRecord> rows;
  for (const auto& ds : datasets) {
    MetricsRecord r = evaluate(ck.params, ds, "val");
    r.epoch = ck.epoch;
    r.lambda = ck.lambda;
    rows.push_back(r);
  }
  std::cout << "domain  accuracy  clf_loss  dmn_loss\n";
  for (const auto& r : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "%6d  %8.4f  %8.4f  %8.4f\n", r.domain, r.accuracy, r.clf_loss,
                  r.dmn_loss);
    std::cout << line;
  }
  if (!a.out.empty()) {
    auto f = open_out(a.out);
    write_metrics_csv(f, rows);
  }
  return 0;
}

struct ProjectArgs {
  std::string checkpoint, data, out, split = "all";
};

int cmd_project(const ProjectArgs& a) {
  const Checkpoint ck = load_existing(a.checkpoint);
  const auto datasets = load_matching(a.data, ck);
  const Projection p = project_latent(ck.params, datasets, a.split);
  if (p.degenerate) std::cerr << "warning: latent vectors have no spread; coordinates are zero\n";
  if (!p.converged) std::cerr << "warning: eigensolver stopped before reaching tolerance\n";
  auto f = open_out(a.out);
  write_projection_csv(f, p);
  std::cout << p.coords.size() << " points, component variances " << p.variances[0] << ", "
            << p.variances[1] << '\n';
  return 0;
}

// ---- schedule ----

struct ScheduleArgs {
  double alpha = 10.0;
  std::int64_t steps = 0;
  double clamp = 5000.0;
  std::size_t rows = 11;
};

int cmd_schedule(const ScheduleArgs& a) {
  if (a.steps <= 0) throw UsageError("--steps must be positive");
  if (a.rows < 2) throw UsageError("--rows must be at least 2");
  if (!(a.alpha > 0.0) || !(a.clamp > 0.0)) throw UsageError("--alpha and --clamp must be positive");
  std::cout << "n,fraction,lambda,ceiling\n";
  std::int64_t last = -1;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const auto n = static_cast<std::int64_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(a.steps) / static_cast<double>(a.rows - 1)));
    if (n == last) continue;
    last = n;
    const ScheduleState s{n, a.steps, a.alpha, a.clamp};
    std::cout << n << ',' << format_double(static_cast<double>(n) / static_cast<double>(a.steps)) << ','
              << format_double(factor(s)) << ',' << format_double(clamp_ceiling(s)) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adversarial training on synthetic multi-domain image data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "grda 1.0");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic multi-domain dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Master seed")->required();
  g->add_option("--domains", gen.domains, "Number of domains")->capture_default_str();
  g->add_option("--per-class", gen.per_class, "Samples per class: one value or one per domain")
      ->delimiter(',')
      ->capture_default_str();
  g->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  g->add_option("--shift", gen.shift, "Domain appearance preset")
      ->check(CLI::IsMember({"default", "identity"}))
      ->capture_default_str();
  g->add_flag("--force", gen.force, "Replace a non-empty output directory");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Run a training protocol");
  t->add_option("--protocol", tr.protocol, "baseline, finetune or da")
      ->check(CLI::IsMember({"baseline", "finetune", "da"}));
  t->add_option("--data", tr.data, "Dataset directory");
  t->add_option("--out", tr.out, "Run output directory")->required();
  t->add_option("--config", tr.config, "JSON config or run manifest; flags override it")
      ->check(CLI::ExistingFile);
  t->add_option("--init-checkpoint", tr.init_checkpoint, "Starting checkpoint for finetune");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch", tr.batch, "Samples per domain in each aggregated batch");
  t->add_option("--lr", tr.lr, "SGD learning rate");
  t->add_option("--source", tr.source, "Labelled source domain");
  t->add_option("--domains", tr.domains, "Active domains, comma separated")->delimiter(',');
  t->add_option("--alpha", tr.alpha, "Schedule steepness");
  t->add_option("--clamp", tr.clamp, "Domain loss clamp");
  t->add_option("--seed", tr.seed);
  t->add_option("--eval-every", tr.eval_every, "Validation cadence in epochs");
  t->add_option("--channels", tr.channels, "Conv block channels, comma separated")->delimiter(',');
  t->add_option("--tap-width", tr.tap_width);
  t->add_option("--hidden-width", tr.hidden_width);
  t->add_option("--leaky-slope", tr.leaky_slope);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on every domain's validation split");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--out", ev.out, "Metrics CSV path");

  ProjectArgs pr;
  auto* p = app.add_subcommand("project", "Export a 2-D PCA projection of the latent space");
  p->add_option("--checkpoint", pr.checkpoint)->required();
  p->add_option("--data", pr.data)->required();
  p->add_option("--out", pr.out, "CSV path")->required();
  p->add_option("--split", pr.split)->check(CLI::IsMember({"train", "val", "all"}))->capture_default_str();

  ScheduleArgs sc;
  auto* s = app.add_subcommand("schedule", "Print the domain-loss factor table");
  s->add_option("--alpha", sc.alpha)->capture_default_str();
  s->add_option("--steps", sc.steps, "Total optimizer steps")->required();
  s->add_option("--clamp", sc.clamp)->capture_default_str();
  s->add_option("--rows", sc.rows)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*p) return cmd_project(pr);
    if (*s) return cmd_schedule(sc);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 2;
}
