#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "grda/autodiff.hpp"
#include "grda/tensor.hpp"

namespace grda {

/// Topology of the feature extractor and both heads.
///
/// The extractor runs `conv_channels.size()` blocks of conv3x3 + leaky ReLU +
/// 2x2 max pool. After every pool the flattened map is projected by a tap
/// (linear, tap_width wide, leaky ReLU). The last pooled map also feeds the
/// trunk's first linear layer (hidden_width wide), which gets one more tap.
/// The concatenated taps form the latent vector of width
/// (blocks + 1) * tap_width.
struct ModelConfig {
  std::size_t input_size = 32;
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t tap_width = 16;
  std::size_t hidden_width = 32;
  std::size_t num_classes = 7;
  std::size_t num_domains = 4;
  double leaky_slope = 0.01;

  std::size_t conv_blocks() const { return conv_channels.size(); }
  std::size_t latent_width() const { return (conv_blocks() + 1) * tap_width; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter tensors for the extractor (conv*, tap*, trunk.*), the
/// label predictor (clf.*) and the domain classifier (dmn.*).
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;
  /// Expected shape of every parameter for `config`, keyed by name.
  static std::map<std::string, Shape> layout(const ModelConfig& config);
};

bool is_extractor_param(const std::string& name);
bool is_clf_param(const std::string& name);
bool is_dmn_param(const std::string& name);

/// Glorot-uniform weights, zero biases; bit-identical for equal seeds.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// How the domain classifier attaches to the latent vector.
enum class DomainPath {
  Reversed,  // through grad_reverse: adversarial training
  Detached,  // computed for monitoring only; no gradient reaches the extractor
  Identity,  // plain connection, used to check the reversal
};

struct ForwardOutput {
  Var latent;
  Var clf_logprobs;
  Var dmn_logprobs;
  std::map<std::string, Var> params;
};

/// Records the full model on `tape`. `batch` is [b x 1 x s x s] with
/// s == config.input_size.
ForwardOutput forward(Tape& tape, const ModelParams& params, const Tensor& batch,
                      DomainPath domain_path);

/// lambda_active selects the reversed domain path; otherwise the domain head
/// is detached from the extractor.
ForwardOutput forward(Tape& tape, const ModelParams& params, const Tensor& batch,
                      bool lambda_active);

/// Row-wise argmax; ties resolve to the lowest index.
std::vector<int> predict(const Tensor& logprobs);

}  // namespace grda
