#include "grda/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "grda/errors.hpp"

namespace grda {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::AddRowBias: return "add_row_bias";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool2d: return "maxpool2d";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Concat: return "concat";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::NllLoss: return "nll_loss";
    case OpKind::GradReverse: return "grad_reverse";
    case OpKind::Reshape: return "reshape";
    case OpKind::Sum: return "sum";
    case OpKind::Scale: return "scale";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::ClampMax: return "clamp_max";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (tape == nullptr) throw ContractError("Var is not attached to a tape");
  return tape->record(id).value;
}

const Tensor& Gradients::at(const std::string& name) const {
  auto it = grads_.find(name);
  if (it == grads_.end()) throw ContractError("no gradient for '" + name + "'");
  return it->second;
}

Var Tape::push(Record record) {
  for (NodeId in : record.inputs) {
    if (in >= records_.size()) throw ContractError("record input precedes the tape");
  }
  records_.push_back(std::move(record));
  return Var{this, records_.size() - 1};
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  Record r;
  r.kind = OpKind::Constant;
  r.value = std::move(value);
  return push(std::move(r));
}

Var Tape::parameter(const std::string& name, Tensor value) {
  if (parameters_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  value.set_requires_grad(true);
  Record r;
  r.kind = OpKind::Parameter;
  r.value = std::move(value);
  r.name = name;
  Var v = push(std::move(r));
  parameters_[name] = v.id;
  return v;
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractError("operands belong to different tapes");
  }
  return *a.tape;
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ContractError("Var is not attached to a tape");
  return *a.tape;
}

Var record_op(Tape& tape, OpKind kind, std::vector<NodeId> inputs, Tensor value,
              double coeff = 0.0, std::vector<std::size_t> index = {},
              std::vector<std::uint8_t> mask = {}) {
  Tape::Record r;
  r.kind = kind;
  r.inputs = std::move(inputs);
  r.value = std::move(value);
  r.coeff = coeff;
  r.index = std::move(index);
  r.mask = std::move(mask);
  return tape.push(std::move(r));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(A.shape()) + " by " +
                         shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &C[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return record_op(tape, OpKind::MatMul, {a.id, b.id}, std::move(C));
}

Var add_row_bias(Var x, Var bias) {
  Tape& tape = same_tape(x, bias);
  const Tensor& X = x.value();
  const Tensor& Bv = bias.value();
  if (X.rank() != 2 || Bv.rank() != 1 || Bv.dim(0) != X.dim(1)) {
    throw DimensionError("add_row_bias: input " + shape_str(X.shape()) + " vs bias " +
                         shape_str(Bv.shape()));
  }
  Tensor Y = X;
  Y.set_requires_grad(false);
  const std::size_t m = X.dim(0), n = X.dim(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) Y[i * n + j] += Bv[j];
  return record_op(tape, OpKind::AddRowBias, {x.id, bias.id}, std::move(Y));
}

Var linear(Var x, Var weight, Var bias) { return add_row_bias(matmul(x, weight), bias); }

Var conv2d(Var x, Var kernel, Var bias) {
  Tape& tape = same_tape(x, kernel);
  same_tape(x, bias);
  const Tensor& X = x.value();
  const Tensor& K = kernel.value();
  const Tensor& Bv = bias.value();
  require_rank(X, 4, "conv2d input");
  require_rank(K, 4, "conv2d kernel");
  if (K.dim(1) != X.dim(1)) {
    throw DimensionError("conv2d: input channels of " + shape_str(X.shape()) +
                         " do not match kernel " + shape_str(K.shape()));
  }
  if (K.dim(2) != 3 || K.dim(3) != 3) {
    throw DimensionError("conv2d: kernel must be [o,c,3,3], got " + shape_str(K.shape()));
  }
  if (Bv.rank() != 1 || Bv.dim(0) != K.dim(0)) {
    throw DimensionError("conv2d: bias " + shape_str(Bv.shape()) + " does not match kernel " +
                         shape_str(K.shape()));
  }
  const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3), O = K.dim(0);
  if (H < 3 || W < 3) throw DimensionError("conv2d: spatial extent below 3 in " + shape_str(X.shape()));
  const std::size_t plane = H * W;
  Tensor Y({B, O, H, W});
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      double* out = &Y[(n * O + o) * plane];
      std::fill(out, out + plane, Bv[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const double* in = &X[(n * C + c) * plane];
        const double* kp = &K[(o * C + c) * 9];
        for (int ky = 0; ky < 3; ++ky) {
          for (std::size_t y = 0; y < H; ++y) {
            const long iy = static_cast<long>(y) + ky - 1;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            const double* row_in = in + static_cast<std::size_t>(iy) * W;
            double* row_out = out + y * W;
            for (int kx = 0; kx < 3; ++kx) {
              const double w = kp[ky * 3 + kx];
              const long dx = kx - 1;
              const std::size_t x0 = dx < 0 ? 1 : 0;
              const std::size_t x1 = dx > 0 ? W - 1 : W;
              for (std::size_t xx = x0; xx < x1; ++xx) row_out[xx] += w * row_in[xx + dx];
            }
          }
        }
      }
    }
  }
  return record_op(tape, OpKind::Conv2d, {x.id, kernel.id, bias.id}, std::move(Y));
}

Var maxpool2d(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& X = x.value();
  require_rank(X, 4, "maxpool2d");
  const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (H % 2 || W % 2) throw DimensionError("maxpool2d: odd spatial extent in " + shape_str(X.shape()));
  const std::size_t OH = H / 2, OW = W / 2;
  Tensor Y({B, C, OH, OW});
  std::vector<std::size_t> argmax(Y.size());
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const std::size_t base = bc * H * W;
    for (std::size_t y = 0; y < OH; ++y) {
      for (std::size_t xx = 0; xx < OW; ++xx, ++o) {
        std::size_t best = base + (2 * y) * W + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * y + dy) * W + 2 * xx + dx;
            if (X[idx] > X[best]) best = idx;
          }
        }
        Y[o] = X[best];
        argmax[o] = best;
      }
    }
  }
  return record_op(tape, OpKind::MaxPool2d, {x.id}, std::move(Y), 0.0, std::move(argmax));
}

Var leaky_relu(Var x, double slope) {
  Tape& tape = tape_of(x);
  Tensor Y = x.value();
  Y.set_requires_grad(false);
  for (double& v : Y.data()) {
    if (v < 0.0) v *= slope;
  }
  return record_op(tape, OpKind::LeakyRelu, {x.id}, std::move(Y), slope);
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  Tape& tape = tape_of(parts[0]);
  const std::size_t b = parts[0].value().rank() == 2 ? parts[0].value().dim(0) : 0;
  std::vector<std::size_t> widths;
  std::vector<NodeId> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const Tensor& t = p.value();
    if (t.rank() != 2 || t.dim(0) != b) {
      throw DimensionError("concat: part " + shape_str(t.shape()) + " does not match batch " +
                           std::to_string(b));
    }
    widths.push_back(t.dim(1));
    ids.push_back(p.id);
    total += t.dim(1);
  }
  Tensor Y({b, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < b; ++i)
      std::copy_n(&t[i * w], w, &Y[i * total + offset]);
    offset += w;
  }
  return record_op(tape, OpKind::Concat, std::move(ids), std::move(Y), 0.0, std::move(widths));
}

Var log_softmax(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& X = x.value();
  require_rank(X, 2, "log_softmax");
  const std::size_t b = X.dim(0), k = X.dim(1);
  if (k < 2) throw DimensionError("log_softmax: need at least 2 columns, got " + shape_str(X.shape()));
  Tensor Y({b, k});
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = &X[i * k];
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) Y[i * k + j] = row[j] - lse;
  }
  return record_op(tape, OpKind::LogSoftmax, {x.id}, std::move(Y));
}

Var nll_loss(Var log_probs, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  Tape& tape = tape_of(log_probs);
  const Tensor& L = log_probs.value();
  require_rank(L, 2, "nll_loss");
  const std::size_t b = L.dim(0), k = L.dim(1);
  if (targets.size() != b || mask.size() != b) {
    throw DimensionError("nll_loss: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries for log-probs " +
                         shape_str(L.shape()));
  }
  Tensor out({b});
  std::vector<std::size_t> index(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k) {
      throw LabelError("nll_loss: target " + std::to_string(targets[i]) + " outside [0," +
                       std::to_string(k) + ")");
    }
    index[i] = static_cast<std::size_t>(targets[i]);
    if (mask[i]) out[i] = -L[i * k + index[i]];
  }
  return record_op(tape, OpKind::NllLoss, {log_probs.id}, std::move(out), 0.0, std::move(index),
                   std::vector<std::uint8_t>(mask.begin(), mask.end()));
}

Var nll_loss(Var log_probs, std::span<const int> targets) {
  std::vector<std::uint8_t> all(targets.size(), 1);
  return nll_loss(log_probs, targets, all);
}

Var grad_reverse(Var x) {
  Tape& tape = tape_of(x);
  Tensor Y = x.value();
  Y.set_requires_grad(false);
  return record_op(tape, OpKind::GradReverse, {x.id}, std::move(Y));
}

Var reshape(Var x, Shape shape) {
  Tape& tape = tape_of(x);
  Tensor Y = x.value().reshaped(std::move(shape));
  Y.set_requires_grad(false);
  return record_op(tape, OpKind::Reshape, {x.id}, std::move(Y));
}

Var flatten(Var x) {
  const Tensor& X = x.value();
  if (X.rank() < 1) throw DimensionError("flatten: scalar input");
  const std::size_t b = X.dim(0);
  return reshape(x, {b, X.size() / b});
}

Var sum(Var x) {
  Tape& tape = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return record_op(tape, OpKind::Sum, {x.id}, Tensor::scalar(s));
}

Var scale(Var x, double factor) {
  Tape& tape = tape_of(x);
  Tensor Y = x.value();
  Y.set_requires_grad(false);
  for (double& v : Y.data()) v *= factor;
  return record_op(tape, OpKind::Scale, {x.id}, std::move(Y), factor);
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor Y = a.value();
  Y.set_requires_grad(false);
  const Tensor& Bv = b.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += Bv[i];
  return record_op(tape, OpKind::Add, {a.id, b.id}, std::move(Y));
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor Y = a.value();
  Y.set_requires_grad(false);
  const Tensor& Bv = b.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= Bv[i];
  return record_op(tape, OpKind::Mul, {a.id, b.id}, std::move(Y));
}

Var clamp_max(Var x, double ceiling) {
  Tape& tape = tape_of(x);
  Tensor Y = x.value();
  Y.set_requires_grad(false);
  for (double& v : Y.data()) v = std::min(v, ceiling);
  return record_op(tape, OpKind::ClampMax, {x.id}, std::move(Y), ceiling);
}

Var detach(Var x) { return tape_of(x).constant(x.value()); }

namespace {

class GradBuffer {
 public:
  explicit GradBuffer(std::size_t n) : grads_(n) {}

  Tensor& slot(NodeId id, const Shape& shape) {
    Tensor& g = grads_[id];
    if (g.empty()) g = Tensor::zeros(shape);
    return g;
  }
  void accumulate(NodeId id, Tensor&& g) {
    Tensor& dst = grads_[id];
    if (dst.empty()) {
      dst = std::move(g);
      return;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
  Tensor& operator[](NodeId id) { return grads_[id]; }

 private:
  std::vector<Tensor> grads_;
};

void backprop_record(const Tape& tape, const Tape::Record& r, const Tensor& g, GradBuffer& buf) {
  auto input = [&](std::size_t k) -> const Tensor& { return tape.record(r.inputs[k]).value; };
  switch (r.kind) {
    case OpKind::Constant:
    case OpKind::Parameter:
      return;
    case OpKind::MatMul: {
      const Tensor& A = input(0);
      const Tensor& B = input(1);
      const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
      Tensor dA({m, k});
      Tensor dB({k, n});
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = &B[p * n];
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          dA[i * k + p] = s;
          const double av = A[i * k + p];
          double* dbrow = &dB[p * n];
          for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
        }
      }
      buf.accumulate(r.inputs[0], std::move(dA));
      buf.accumulate(r.inputs[1], std::move(dB));
      return;
    }
    case OpKind::AddRowBias: {
      const std::size_t m = g.dim(0), n = g.dim(1);
      Tensor db({n});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
      Tensor dx = g;
      buf.accumulate(r.inputs[0], std::move(dx));
      buf.accumulate(r.inputs[1], std::move(db));
      return;
    }
    case OpKind::Conv2d: {
      const Tensor& X = input(0);
      const Tensor& K = input(1);
      const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3), O = K.dim(0);
      const std::size_t plane = H * W;
      Tensor dX(X.shape());
      Tensor dK(K.shape());
      Tensor dBias({O});
      for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
          const double* gp = &g[(n * O + o) * plane];
          double bsum = 0.0;
          for (std::size_t i = 0; i < plane; ++i) bsum += gp[i];
          dBias[o] += bsum;
          for (std::size_t c = 0; c < C; ++c) {
            const double* in = &X[(n * C + c) * plane];
            double* din = &dX[(n * C + c) * plane];
            const double* kp = &K[(o * C + c) * 9];
            double* dkp = &dK[(o * C + c) * 9];
            for (int ky = 0; ky < 3; ++ky) {
              for (std::size_t y = 0; y < H; ++y) {
                const long iy = static_cast<long>(y) + ky - 1;
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                const double* row_in = in + static_cast<std::size_t>(iy) * W;
                double* row_din = din + static_cast<std::size_t>(iy) * W;
                const double* row_g = gp + y * W;
                for (int kx = 0; kx < 3; ++kx) {
                  const double w = kp[ky * 3 + kx];
                  const long dx = kx - 1;
                  const std::size_t x0 = dx < 0 ? 1 : 0;
                  const std::size_t x1 = dx > 0 ? W - 1 : W;
                  double s = 0.0;
                  for (std::size_t xx = x0; xx < x1; ++xx) {
                    s += row_g[xx] * row_in[xx + dx];
                    row_din[xx + dx] += w * row_g[xx];
                  }
                  dkp[ky * 3 + kx] += s;
                }
              }
            }
          }
        }
      }
      buf.accumulate(r.inputs[0], std::move(dX));
      buf.accumulate(r.inputs[1], std::move(dK));
      buf.accumulate(r.inputs[2], std::move(dBias));
      return;
    }
    case OpKind::MaxPool2d: {
      Tensor& dX = buf.slot(r.inputs[0], input(0).shape());
      for (std::size_t o = 0; o < g.size(); ++o) dX[r.index[o]] += g[o];
      return;
    }
    case OpKind::LeakyRelu: {
      const Tensor& X = input(0);
      Tensor dX = g;
      for (std::size_t i = 0; i < dX.size(); ++i) {
        if (X[i] < 0.0) dX[i] *= r.coeff;
      }
      buf.accumulate(r.inputs[0], std::move(dX));
      return;
    }
    case OpKind::Concat: {
      const std::size_t b = g.dim(0), total = g.dim(1);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < r.inputs.size(); ++k) {
        const std::size_t w = r.index[k];
        Tensor part({b, w});
        for (std::size_t i = 0; i < b; ++i) std::copy_n(&g[i * total + offset], w, &part[i * w]);
        buf.accumulate(r.inputs[k], std::move(part));
        offset += w;
      }
      return;
    }
    case OpKind::LogSoftmax: {
      const Tensor& Y = r.value;
      const std::size_t b = Y.dim(0), k = Y.dim(1);
      Tensor dX({b, k});
      for (std::size_t i = 0; i < b; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < k; ++j) gs += g[i * k + j];
        for (std::size_t j = 0; j < k; ++j)
          dX[i * k + j] = g[i * k + j] - std::exp(Y[i * k + j]) * gs;
      }
      buf.accumulate(r.inputs[0], std::move(dX));
      return;
    }
    case OpKind::NllLoss: {
      const Tensor& L = input(0);
      const std::size_t k = L.dim(1);
      Tensor& dL = buf.slot(r.inputs[0], L.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (r.mask[i]) dL[i * k + r.index[i]] -= g[i];
      }
      return;
    }
    case OpKind::GradReverse: {
      Tensor dX = g;
      for (double& v : dX.data()) v = -v;
      buf.accumulate(r.inputs[0], std::move(dX));
      return;
    }
    case OpKind::Reshape:
      buf.accumulate(r.inputs[0], g.reshaped(input(0).shape()));
      return;
    case OpKind::Sum:
      buf.accumulate(r.inputs[0], Tensor::full(input(0).shape(), g.item()));
      return;
    case OpKind::Scale: {
      Tensor dX = g;
      for (double& v : dX.data()) v *= r.coeff;
      buf.accumulate(r.inputs[0], std::move(dX));
      return;
    }
    case OpKind::Add: {
      Tensor ga = g;
      Tensor gb = g;
      buf.accumulate(r.inputs[0], std::move(ga));
      buf.accumulate(r.inputs[1], std::move(gb));
      return;
    }
    case OpKind::Mul: {
      const Tensor& A = input(0);
      const Tensor& B = input(1);
      Tensor dA = g;
      Tensor dB = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        dA[i] *= B[i];
        dB[i] *= A[i];
      }
      buf.accumulate(r.inputs[0], std::move(dA));
      buf.accumulate(r.inputs[1], std::move(dB));
      return;
    }
    case OpKind::ClampMax: {
      const Tensor& X = input(0);
      Tensor dX = g;
      for (std::size_t i = 0; i < dX.size(); ++i) {
        if (!(X[i] < r.coeff)) dX[i] = 0.0;
      }
      buf.accumulate(r.inputs[0], std::move(dX));
      return;
    }
  }
}

}  // namespace

Gradients backward(Var loss) {
  Tape& tape = tape_of(loss);
  const Tensor& L = loss.value();
  if (L.size() != 1) {
    throw ContractError("backward: loss must be a single value, got shape " + shape_str(L.shape()));
  }
  GradBuffer buf(tape.size());
  buf[loss.id] = Tensor::full(L.shape(), 1.0);
  for (NodeId id = loss.id + 1; id-- > 0;) {
    if (buf[id].empty()) continue;
    const Tensor g = std::move(buf[id]);
    const Tape::Record& r = tape.record(id);
    if (r.kind == OpKind::Parameter) {
      buf[id] = g;
      continue;
    }
    backprop_record(tape, r, g, buf);
  }
  Gradients out;
  for (const auto& [name, id] : tape.parameters_) {
    Tensor g = buf[id].empty() ? Tensor::zeros(tape.record(id).value.shape()) : std::move(buf[id]);
    out.set(name, std::move(g));
  }
  return out;
}

}  // namespace grda
