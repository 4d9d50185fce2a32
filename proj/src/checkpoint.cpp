#include "grda/checkpoint.hpp"

#include <cmath>
#include <sstream>

#include "grda/errors.hpp"

namespace grda {

namespace {

constexpr const char* kInfo = "checkpoint/info";
constexpr const char* kModel = "model/config";
constexpr const char* kOptimizer = "optimizer/sgd";
constexpr const char* kSchedule = "schedule/state";
constexpr const char* kParamPrefix = "param/";

Tensor model_config_tensor(const ModelConfig& c) {
  std::vector<double> v{static_cast<double>(c.input_size),  static_cast<double>(c.tap_width),
                        static_cast<double>(c.hidden_width), static_cast<double>(c.num_classes),
                        static_cast<double>(c.num_domains),  c.leaky_slope};
  for (std::size_t ch : c.conv_channels) v.push_back(static_cast<double>(ch));
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

std::size_t as_count(double v, const char* what) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 9.0e15) {
    throw FormatError(std::string("checkpoint field ") + what + " is not a count");
  }
  return static_cast<std::size_t>(v);
}

ModelConfig model_config_from(const Tensor& t) {
  if (t.rank() != 1 || t.size() < 7) throw FormatError("checkpoint model config is malformed");
  ModelConfig c;
  c.input_size = as_count(t[0], "input_size");
  c.tap_width = as_count(t[1], "tap_width");
  c.hidden_width = as_count(t[2], "hidden_width");
  c.num_classes = as_count(t[3], "num_classes");
  c.num_domains = as_count(t[4], "num_domains");
  c.leaky_slope = t[5];
  c.conv_channels.clear();
  for (std::size_t i = 6; i < t.size(); ++i) c.conv_channels.push_back(as_count(t[i], "conv_channels"));
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint model config is invalid: ") + e.what());
  }
  return c;
}

const Tensor& expect_vector(const std::vector<NamedTensor>& tensors, const char* name, std::size_t n) {
  const Tensor& t = find_tensor(tensors, name);
  if (t.rank() != 1 || t.size() != n) {
    throw FormatError(std::string("checkpoint entry ") + name + " has shape " + shape_str(t.shape()));
  }
  return t;
}

}  // namespace

std::vector<NamedTensor> checkpoint_tensors(const Checkpoint& ck) {
  const double hi = static_cast<double>(ck.fingerprint >> 32);
  const double lo = static_cast<double>(ck.fingerprint & 0xFFFFFFFFULL);
  std::vector<NamedTensor> out{
      {kInfo, Tensor({4}, {static_cast<double>(ck.epoch), hi, lo, ck.lambda})},
      {kModel, model_config_tensor(ck.params.config)},
      {kOptimizer, Tensor({2}, {ck.optimizer.learning_rate, static_cast<double>(ck.optimizer.steps)})},
      {kSchedule, Tensor({4}, {static_cast<double>(ck.schedule.n), static_cast<double>(ck.schedule.total),
                               ck.schedule.alpha, ck.schedule.clamp})},
  };
  for (const auto& [name, t] : ck.params.tensors) {
    Tensor copy = t;
    copy.set_requires_grad(false);
    out.push_back({kParamPrefix + name, std::move(copy)});
  }
  return out;
}

Checkpoint checkpoint_from_tensors(const std::vector<NamedTensor>& tensors) {
  Checkpoint ck;
  const Tensor& info = expect_vector(tensors, kInfo, 4);
  ck.epoch = as_count(info[0], "epoch");
  ck.fingerprint = (static_cast<std::uint64_t>(as_count(info[1], "fingerprint")) << 32) |
                   static_cast<std::uint64_t>(as_count(info[2], "fingerprint"));
  ck.lambda = info[3];
  ck.params.config = model_config_from(find_tensor(tensors, kModel));
  const Tensor& sgd = expect_vector(tensors, kOptimizer, 2);
  ck.optimizer = {sgd[0], static_cast<std::int64_t>(as_count(sgd[1], "optimizer steps"))};
  const Tensor& sched = expect_vector(tensors, kSchedule, 4);
  ck.schedule = {static_cast<std::int64_t>(as_count(sched[0], "schedule step")),
                 static_cast<std::int64_t>(as_count(sched[1], "schedule total")), sched[2], sched[3]};

  const std::string prefix = kParamPrefix;
  for (const auto& nt : tensors) {
    if (nt.name.rfind(prefix, 0) == 0) ck.params.tensors[nt.name.substr(prefix.size())] = nt.tensor;
  }
  const std::string diff = shape_diff(ck.params, ck.params.config);
  if (!diff.empty()) throw FormatError("checkpoint parameters disagree with its own config:\n" + diff);
  return ck;
}

std::string shape_diff(const ModelParams& params, const ModelConfig& expected) {
  std::ostringstream os;
  const auto layout = ModelParams::layout(expected);
  for (const auto& [name, shape] : layout) {
    auto it = params.tensors.find(name);
    if (it == params.tensors.end()) {
      os << "  " << name << ": missing, expected " << shape_str(shape) << '\n';
    } else if (it->second.shape() != shape) {
      os << "  " << name << ": checkpoint " << shape_str(it->second.shape()) << ", expected "
         << shape_str(shape) << '\n';
    }
  }
  for (const auto& [name, t] : params.tensors) {
    if (!layout.count(name)) os << "  " << name << ": unexpected " << shape_str(t.shape()) << '\n';
  }
  return os.str();
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_tensor_file(path, checkpoint_tensors(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_tensors(read_tensor_file(path));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  const std::string diff = shape_diff(ck.params, expected);
  if (!diff.empty()) {
    throw ShapeMismatchError("checkpoint " + path.string() + " does not fit the model config:\n" + diff);
  }
  return ck;
}

}  // namespace grda
