#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Tape records every operation in execution order, so the record list is
// already topologically sorted. backward() walks it once from the loss node
// down to the first record. Vars are lightweight handles into a tape; the
// tape must outlive every Var that refers to it.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "grda/tensor.hpp"

namespace grda {

enum class OpKind : std::uint8_t {
  Constant,
  Parameter,
  MatMul,
  AddRowBias,
  Conv2d,
  MaxPool2d,
  LeakyRelu,
  Concat,
  LogSoftmax,
  NllLoss,
  GradReverse,
  Reshape,
  Sum,
  Scale,
  Add,
  Mul,
  ClampMax,
};

const char* op_name(OpKind kind);

using NodeId = std::size_t;

class Tape;

/// Handle to one recorded value.
struct Var {
  Tape* tape = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Per-parameter gradient set produced by backward().
class Gradients {
 public:
  void set(const std::string& name, Tensor grad) { grads_[name] = std::move(grad); }
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return grads_.count(name) != 0; }
  std::size_t size() const { return grads_.size(); }
  const std::map<std::string, Tensor>& entries() const { return grads_; }

  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<std::string, Tensor> grads_;
};

class Tape {
 public:
  struct Record {
    OpKind kind = OpKind::Constant;
    std::vector<NodeId> inputs;
    Tensor value;
    // Op-specific saved state: scalar coefficient (slope, scale, ceiling),
    // integer side data (pool argmax, targets, concat widths), and a mask.
    double coeff = 0.0;
    std::vector<std::size_t> index;
    std::vector<std::uint8_t> mask;
    std::string name;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var constant(Tensor value);
  /// A gradient-receiving leaf. Names must be unique within the tape.
  Var parameter(const std::string& name, Tensor value);

  std::size_t size() const noexcept { return records_.size(); }
  const Record& record(NodeId id) const { return records_.at(id); }

  Var push(Record record);

 private:
  std::vector<Record> records_;
  std::map<std::string, NodeId> parameters_;

  friend Gradients backward(Var loss);
};

// Operators. All shape checks throw DimensionError naming the offending shapes.

/// [m x k] . [k x n] -> [m x n]
Var matmul(Var a, Var b);
/// Adds a length-n bias to every row of an [m x n] input.
Var add_row_bias(Var x, Var bias);
/// Affine layer x . weight + bias with weight stored as [in x out].
Var linear(Var x, Var weight, Var bias);
/// 3x3 cross-correlation, padding 1, stride 1: [b,c,h,w] x [o,c,3,3] + [o] -> [b,o,h,w].
Var conv2d(Var x, Var kernel, Var bias);
/// 2x2 max pooling with stride 2. Ties route the gradient to the first
/// position in row-major window order.
Var maxpool2d(Var x);
Var leaky_relu(Var x, double slope);
/// Column-wise concatenation of [b x d_i] parts in argument order.
Var concat(std::span<const Var> parts);
/// Row-wise log-softmax of a [b x k] input, k >= 2.
Var log_softmax(Var x);
/// Unreduced negative log-likelihood: out[i] = -log_probs[i, targets[i]]
/// where mask[i] is set, and 0 elsewhere.
Var nll_loss(Var log_probs, std::span<const int> targets, std::span<const std::uint8_t> mask);
Var nll_loss(Var log_probs, std::span<const int> targets);
/// Identity forward; the backward pass multiplies the upstream gradient by -1.
Var grad_reverse(Var x);
Var reshape(Var x, Shape shape);
/// Flattens [b, ...] to [b, rest].
Var flatten(Var x);
/// Sum of all elements as a rank-0 tensor.
Var sum(Var x);
Var scale(Var x, double factor);
Var add(Var a, Var b);
Var mul(Var a, Var b);
/// Elementwise min(x, ceiling). Elements at or above the ceiling receive no gradient.
Var clamp_max(Var x, double ceiling);
/// Copies x onto the tape as a constant, cutting the gradient path.
Var detach(Var x);

/// Reverse traversal from a one-element loss. Every parameter leaf on the
/// tape gets an entry; parameters the loss does not reach get zeros.
Gradients backward(Var loss);

}  // namespace grda
