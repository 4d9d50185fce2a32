#include "grda/model.hpp"

#include <cmath>
#include <random>

#include "grda/errors.hpp"

namespace grda {

void ModelConfig::validate() const {
  if (input_size == 0) throw ConfigError("input_size must be positive");
  if (conv_channels.empty()) throw ConfigError("at least one conv block is required");
  for (std::size_t c : conv_channels) {
    if (c == 0) throw ConfigError("conv channel counts must be positive");
  }
  const std::size_t blocks = conv_blocks();
  if (blocks >= 8 * sizeof(std::size_t) || input_size % (std::size_t{1} << blocks) != 0) {
    throw ConfigError("input_size " + std::to_string(input_size) + " is not divisible by 2^" +
                      std::to_string(blocks));
  }
  if (input_size >> blocks == 0) throw ConfigError("too many conv blocks for input_size");
  if (input_size < 3) throw ConfigError("input_size must be at least 3");
  if (tap_width == 0) throw ConfigError("tap_width must be positive");
  if (hidden_width == 0) throw ConfigError("hidden_width must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (num_domains < 2) throw ConfigError("num_domains must be at least 2");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in (0,1)");
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

namespace {

std::string block_name(const char* prefix, std::size_t i) { return prefix + std::to_string(i); }

void add_linear(std::map<std::string, Shape>& out, const std::string& name, std::size_t in,
                std::size_t width) {
  out[name + ".weight"] = {in, width};
  out[name + ".bias"] = {width};
}

}  // namespace

std::map<std::string, Shape> ModelParams::layout(const ModelConfig& config) {
  config.validate();
  std::map<std::string, Shape> out;
  std::size_t channels = 1;
  std::size_t side = config.input_size;
  for (std::size_t i = 0; i < config.conv_blocks(); ++i) {
    const std::size_t oc = config.conv_channels[i];
    out[block_name("conv", i) + ".kernel"] = {oc, channels, 3, 3};
    out[block_name("conv", i) + ".bias"] = {oc};
    channels = oc;
    side /= 2;
    add_linear(out, block_name("tap", i), channels * side * side, config.tap_width);
  }
  add_linear(out, "trunk", channels * side * side, config.hidden_width);
  add_linear(out, block_name("tap", config.conv_blocks()), config.hidden_width, config.tap_width);
  add_linear(out, "clf.hidden", config.latent_width(), config.hidden_width);
  add_linear(out, "clf.out", config.hidden_width, config.num_classes);
  add_linear(out, "dmn.hidden", config.latent_width(), config.hidden_width);
  add_linear(out, "dmn.out", config.hidden_width, config.num_domains);
  return out;
}

bool is_clf_param(const std::string& name) { return name.rfind("clf.", 0) == 0; }
bool is_dmn_param(const std::string& name) { return name.rfind("dmn.", 0) == 0; }
bool is_extractor_param(const std::string& name) {
  return !is_clf_param(name) && !is_dmn_param(name);
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params;
  params.config = config;
  std::mt19937_64 engine(seed);
  // std::map iterates in name order, so the draw sequence is fixed per seed.
  for (const auto& [name, shape] : ModelParams::layout(config)) {
    Tensor t(shape);
    if (shape.size() > 1) {
      double fan_in = 0.0, fan_out = 0.0;
      if (shape.size() == 4) {
        fan_in = static_cast<double>(shape[1] * 9);
        fan_out = static_cast<double>(shape[0] * 9);
      } else {
        fan_in = static_cast<double>(shape[0]);
        fan_out = static_cast<double>(shape[1]);
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : t.data()) v = dist(engine);
    }
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

ForwardOutput forward(Tape& tape, const ModelParams& params, const Tensor& batch,
                      DomainPath domain_path) {
  const ModelConfig& cfg = params.config;
  const std::size_t s = cfg.input_size;
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != s || batch.dim(3) != s) {
    throw DimensionError("forward: expected [b x 1 x " + std::to_string(s) + " x " +
                         std::to_string(s) + "] input, got " + shape_str(batch.shape()));
  }
  ForwardOutput out;
  for (const auto& [name, t] : params.tensors) out.params[name] = tape.parameter(name, t);
  auto p = [&](const std::string& name) -> Var {
    auto it = out.params.find(name);
    if (it == out.params.end()) throw ContractError("missing parameter '" + name + "'");
    return it->second;
  };
  auto dense = [&](Var x, const std::string& name) {
    return leaky_relu(linear(x, p(name + ".weight"), p(name + ".bias")), cfg.leaky_slope);
  };

  std::vector<Var> taps;
  Var h = tape.constant(batch);
  Var flat;
  for (std::size_t i = 0; i < cfg.conv_blocks(); ++i) {
    const std::string conv = block_name("conv", i);
    h = leaky_relu(conv2d(h, p(conv + ".kernel"), p(conv + ".bias")), cfg.leaky_slope);
    h = maxpool2d(h);
    flat = flatten(h);
    taps.push_back(dense(flat, block_name("tap", i)));
  }
  Var trunk = dense(flat, "trunk");
  taps.push_back(dense(trunk, block_name("tap", cfg.conv_blocks())));
  out.latent = concat(taps);

  auto head = [&](Var x, const std::string& prefix) {
    Var hidden = dense(x, prefix + ".hidden");
    return log_softmax(linear(hidden, p(prefix + ".out.weight"), p(prefix + ".out.bias")));
  };
  out.clf_logprobs = head(out.latent, "clf");

  Var dmn_in;
  switch (domain_path) {
    case DomainPath::Reversed: dmn_in = grad_reverse(out.latent); break;
    case DomainPath::Detached: dmn_in = detach(out.latent); break;
    case DomainPath::Identity: dmn_in = out.latent; break;
  }
  out.dmn_logprobs = head(dmn_in, "dmn");
  return out;
}

ForwardOutput forward(Tape& tape, const ModelParams& params, const Tensor& batch,
                      bool lambda_active) {
  return forward(tape, params, batch, lambda_active ? DomainPath::Reversed : DomainPath::Detached);
}

std::vector<int> predict(const Tensor& logprobs) {
  if (logprobs.rank() != 2) throw DimensionError("predict: expected [b x k], got " + shape_str(logprobs.shape()));
  const std::size_t b = logprobs.dim(0), k = logprobs.dim(1);
  std::vector<int> labels(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logprobs[i * k + j] > logprobs[i * k + best]) best = j;
    }
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

}  // namespace grda
