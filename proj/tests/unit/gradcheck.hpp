#pragma once

// Central finite-difference oracle for tape-built scalar functions. It only
// evaluates forward values; the analytic side comes from grda::backward.
//
// Piecewise ops (leaky ReLU, max pool, clamp) make the function
// non-differentiable at kinks. Every forward records an activation
// signature; a coordinate whose +h or -h evaluation changes the signature
// straddles a kink and is skipped.
//
// The default step sits near cbrt(machine epsilon), where truncation and
// round-off error of the central difference balance.

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "grda/autodiff.hpp"

namespace gradcheck {

inline constexpr double kStep = 1e-5;

using Builder = std::function<grda::Var(grda::Tape&, std::span<const grda::Var>)>;

struct Result {
  std::vector<double> rel_error;  // per leaf: |a - c| / (|c| + 1e-8), Euclidean norms
  std::size_t checked = 0;
  std::size_t skipped = 0;

  double max_rel_error() const {
    double m = 0.0;
    for (double e : rel_error) m = std::max(m, e);
    return m;
  }
};

inline std::vector<std::size_t> signature(const grda::Tape& tape) {
  std::vector<std::size_t> sig;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const auto& r = tape.record(id);
    switch (r.kind) {
      case grda::OpKind::LeakyRelu:
        for (double v : tape.record(r.inputs[0]).value.data()) sig.push_back(v < 0.0);
        break;
      case grda::OpKind::ClampMax:
        for (double v : tape.record(r.inputs[0]).value.data()) sig.push_back(v < r.coeff);
        break;
      case grda::OpKind::MaxPool2d:
        sig.insert(sig.end(), r.index.begin(), r.index.end());
        break;
      default:
        break;
    }
  }
  return sig;
}

inline std::vector<grda::Var> make_leaves(grda::Tape& tape, const std::vector<grda::Tensor>& leaves) {
  std::vector<grda::Var> vars;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    vars.push_back(tape.parameter("leaf" + std::to_string(i), leaves[i]));
  }
  return vars;
}

struct Evaluation {
  double value;
  std::vector<std::size_t> sig;
};

inline Evaluation evaluate(const Builder& build, const std::vector<grda::Tensor>& leaves) {
  grda::Tape tape;
  const auto vars = make_leaves(tape, leaves);
  const grda::Var out = build(tape, vars);
  return {out.value().item(), signature(tape)};
}

inline std::vector<grda::Tensor> analytic(const Builder& build, const std::vector<grda::Tensor>& leaves) {
  grda::Tape tape;
  const auto vars = make_leaves(tape, leaves);
  const auto grads = grda::backward(build(tape, vars));
  std::vector<grda::Tensor> out;
  for (std::size_t i = 0; i < leaves.size(); ++i) out.push_back(grads.at("leaf" + std::to_string(i)));
  return out;
}

/// `sign` = -1 compares against the negated difference quotient, for graphs
/// whose analytic gradient is deliberately reversed.
inline Result check(const Builder& build, std::vector<grda::Tensor> leaves, double h = kStep,
                    double sign = 1.0) {
  const auto grads = analytic(build, leaves);
  const auto base = evaluate(build, leaves);
  Result res;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const double orig = leaves[l][i];
      leaves[l][i] = orig + h;
      const auto plus = evaluate(build, leaves);
      leaves[l][i] = orig - h;
      const auto minus = evaluate(build, leaves);
      leaves[l][i] = orig;
      if (plus.sig != base.sig || minus.sig != base.sig) {
        ++res.skipped;
        continue;
      }
      ++res.checked;
      const double fd = sign * (plus.value - minus.value) / (2.0 * h);
      diff2 += std::pow(grads[l][i] - fd, 2);
      ref2 += fd * fd;
    }
    res.rel_error.push_back(std::sqrt(diff2) / (std::sqrt(ref2) + 1e-8));
  }
  return res;
}

/// Same check for graphs that register their own named parameters, such as
/// the full model. Returns one relative error per name, in map order.
using NamedBuilder = std::function<grda::Var(grda::Tape&, const std::map<std::string, grda::Tensor>&)>;

inline Result check_named(const NamedBuilder& build, std::map<std::string, grda::Tensor> leaves,
                          double h = kStep) {
  auto eval = [&](const std::map<std::string, grda::Tensor>& at) {
    grda::Tape tape;
    const grda::Var out = build(tape, at);
    return Evaluation{out.value().item(), signature(tape)};
  };
  grda::Gradients grads;
  {
    grda::Tape tape;
    grads = grda::backward(build(tape, leaves));
  }
  const auto base = eval(leaves);
  Result res;
  for (auto& [name, tensor] : leaves) {
    const grda::Tensor& g = grads.at(name);
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + h;
      const auto plus = eval(leaves);
      tensor[i] = orig - h;
      const auto minus = eval(leaves);
      tensor[i] = orig;
      if (plus.sig != base.sig || minus.sig != base.sig) {
        ++res.skipped;
        continue;
      }
      ++res.checked;
      const double fd = (plus.value - minus.value) / (2.0 * h);
      diff2 += std::pow(g[i] - fd, 2);
      ref2 += fd * fd;
    }
    res.rel_error.push_back(std::sqrt(diff2) / (std::sqrt(ref2) + 1e-8));
  }
  return res;
}

}  // namespace gradcheck
