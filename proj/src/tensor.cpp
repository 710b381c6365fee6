#include "bimspu/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bimspu {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ContractError(std::string(op) + ": expected rank " + std::to_string(rank) +
                        ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                        " vs " + shape_string(b.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (shape_.empty()) throw ContractError("tensor shape must have at least one extent");
  for (auto extent : shape_) {
    if (extent == 0) throw ContractError("tensor extents must be positive: " + shape_string(shape_));
  }
  if (product(shape_) != data.size()) {
    throw ContractError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_string(shape_));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ContractError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  }
  return shape_[axis];
}

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= shape_[0] || col >= shape_[1]) {
    throw ContractError("at(" + std::to_string(row) + "," + std::to_string(col) +
                        ") invalid for shape " + shape_string(shape_));
  }
  return (*data_)[row * shape_[1] + col];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor out = *this;
  out.tape_ = nullptr;
  out.slot_ = 0;
  return out;
}

IndexTable::IndexTable(std::initializer_list<std::initializer_list<std::size_t>> init) {
  rows = init.size();
  cols = rows ? init.begin()->size() : 0;
  data.reserve(rows * cols);
  for (const auto& row : init) {
    if (row.size() != cols) throw ContractError("ragged index table");
    data.insert(data.end(), row.begin(), row.end());
  }
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::watch(const Tensor& value) {
  if (value.empty()) throw ContractError("cannot watch an empty tensor");
  if (value.tape_ != nullptr) throw ContractError("tensor is already tracked by a tape");
  Tensor out = value;
  out.tape_ = this;
  out.slot_ = entries_.size();
  entries_.push_back(Entry{"leaf", value.numel(), nullptr, {}});
  return out;
}

bool Tape::any_tracked(std::initializer_list<const Tensor*> inputs) const {
  bool tracked = false;
  for (const Tensor* t : inputs) {
    if (t->tape_ == nullptr) continue;
    if (t->tape_ != this) throw ContractError("tensor is not on this tape");
    tracked = true;
  }
  return tracked;
}

Tensor Tape::record(const char* op, Shape shape, std::vector<double> data,
                    std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  return record(op, std::move(shape), std::make_shared<const std::vector<double>>(std::move(data)),
                inputs, std::move(backward));
}

Tensor Tape::record(const char* op, Shape shape, std::shared_ptr<const std::vector<double>> data,
                    std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::move(data);
  if (!any_tracked(inputs)) return out;
  out.tape_ = this;
  out.slot_ = entries_.size();
  entries_.push_back(Entry{op, out.numel(), std::move(backward), {}});
  return out;
}

Tensor Tape::record(const char* op, Shape shape, std::vector<double> data,
                    const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::make_shared<const std::vector<double>>(std::move(data));
  bool tracked = false;
  for (const auto& t : inputs) {
    if (t.tape_ == nullptr) continue;
    if (t.tape_ != this) throw ContractError("tensor is not on this tape");
    tracked = true;
  }
  if (!tracked) return out;
  out.tape_ = this;
  out.slot_ = entries_.size();
  entries_.push_back(Entry{op, out.numel(), std::move(backward), {}});
  return out;
}

void Tape::check_owned(const Tensor& t) const {
  if (t.tape_ != this) throw ContractError("tensor is not on this tape");
}

void Tape::backward(const Tensor& loss) {
  check_owned(loss);
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (swept_) throw ContractError("tape has already been swept backward");
  swept_ = true;
  entries_[loss.slot_].grad.assign(1, 1.0);
  for (std::size_t i = entries_.size(); i-- > 0;) {
    Entry& e = entries_[i];
    if (e.grad.empty() || !e.backward) continue;
    if (!corrupt_op_.empty() && e.op == corrupt_op_) {
      for (auto& g : e.grad) g *= corrupt_factor_;
    }
    e.backward(e.grad, *this);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  check_owned(t);
  const Entry& e = entries_[t.slot_];
  if (e.grad.empty()) return std::vector<double>(e.numel, 0.0);
  return e.grad;
}

Tensor Tape::grad_tensor(const Tensor& t) const { return Tensor(t.shape(), grad(t)); }

std::span<double> Tape::grad_buffer(const Tensor& t) {
  check_owned(t);
  Entry& e = entries_[t.slot_];
  if (e.grad.empty()) e.grad.assign(e.numel, 0.0);
  return e.grad;
}

void Tape::accumulate(const Tensor& t, std::span<const double> g) {
  if (t.tape_ == nullptr) return;
  auto buf = grad_buffer(t);
  if (buf.size() != g.size()) throw ContractError("gradient size mismatch in accumulate");
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::corrupt_op(std::string op, double factor) {
  corrupt_op_ = std::move(op);
  corrupt_factor_ = factor;
}

// ---------------------------------------------------------------------------
// Ops

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  require_rank(b, 1, "linear");
  if (x.dim(1) != w.dim(0) || b.dim(0) != w.dim(1)) {
    throw ContractError("linear: shape mismatch x" + shape_string(x.shape()) + " W" +
                        shape_string(w.shape()) + " b" + shape_string(b.shape()));
  }
  const auto m = x.dim(0), cin = x.dim(1), cout = w.dim(1);
  std::vector<double> out(m * cout);
  MutMap y(out.data(), m, cout);
  y.noalias() = ConstMap(x.ptr(), m, cin) * ConstMap(w.ptr(), cin, cout);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.ptr(), cout);
  return tape.record("linear", {m, cout}, std::move(out), {&x, &w, &b},
                     [x, w, b, m, cin, cout](std::span<const double> g, Tape& t) {
                       ConstMap gy(g.data(), m, cout);
                       if (x.requires_grad()) {
                         MutMap(t.grad_buffer(x).data(), m, cin).noalias() +=
                             gy * ConstMap(w.ptr(), cin, cout).transpose();
                       }
                       if (w.requires_grad()) {
                         MutMap(t.grad_buffer(w).data(), cin, cout).noalias() +=
                             ConstMap(x.ptr(), m, cin).transpose() * gy;
                       }
                       if (b.requires_grad()) {
                         Eigen::Map<Eigen::RowVectorXd>(t.grad_buffer(b).data(), cout) +=
                             gy.colwise().sum();
                       }
                     });
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  if (x.dim(1) != w.dim(0)) {
    throw ContractError("linear: shape mismatch x" + shape_string(x.shape()) + " W" +
                        shape_string(w.shape()));
  }
  const auto m = x.dim(0), cin = x.dim(1), cout = w.dim(1);
  std::vector<double> out(m * cout);
  MutMap(out.data(), m, cout).noalias() = ConstMap(x.ptr(), m, cin) * ConstMap(w.ptr(), cin, cout);
  return tape.record("linear", {m, cout}, std::move(out), {&x, &w},
                     [x, w, m, cin, cout](std::span<const double> g, Tape& t) {
                       ConstMap gy(g.data(), m, cout);
                       if (x.requires_grad()) {
                         MutMap(t.grad_buffer(x).data(), m, cin).noalias() +=
                             gy * ConstMap(w.ptr(), cin, cout).transpose();
                       }
                       if (w.requires_grad()) {
                         MutMap(t.grad_buffer(w).data(), cin, cout).noalias() +=
                             ConstMap(x.ptr(), m, cin).transpose() * gy;
                       }
                     });
}

Tensor relu(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return tape.record("relu", x.shape(), std::move(out), {&x},
                     [x](std::span<const double> g, Tape& t) {
                       auto gx = t.grad_buffer(x);
                       const auto in = x.data();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (in[i] > 0.0) gx[i] += g[i];
                       }
                     });
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  return concat_channels(tape, std::vector<Tensor>{a, b});
}

Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const auto m = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_channels");
    if (p.dim(0) != m) {
      throw ContractError("concat_channels: leading extent mismatch " +
                          shape_string(parts.front().shape()) + " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    const auto w = widths[k];
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(src.data() + r * w, w, out.data() + r * total + offset);
    }
    offset += w;
  }
  return tape.record("concat_channels", {m, total}, std::move(out), parts,
                     [parts, widths, m, total](std::span<const double> g, Tape& t) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < parts.size(); ++k) {
                         const auto w = widths[k];
                         if (parts[k].requires_grad()) {
                           auto gp = t.grad_buffer(parts[k]);
                           for (std::size_t r = 0; r < m; ++r) {
                             for (std::size_t c = 0; c < w; ++c) {
                               gp[r * w + c] += g[r * total + offset + c];
                             }
                           }
                         }
                         offset += w;
                       }
                     });
}

Tensor gather_rows(Tape& tape, const Tensor& x, const IndexTable& idx) {
  require_rank(x, 2, "gather_rows");
  const auto m = x.dim(0), c = x.dim(1);
  if (idx.rows == 0 || idx.cols == 0) throw ContractError("gather_rows: empty index table");
  for (auto i : idx.data) {
    if (i >= m) {
      throw ContractError("gather_rows: index " + std::to_string(i) + " out of bounds for " +
                          std::to_string(m) + " rows");
    }
  }
  std::vector<double> out(idx.data.size() * c);
  const auto src = x.data();
  for (std::size_t q = 0; q < idx.data.size(); ++q) {
    std::copy_n(src.data() + idx.data[q] * c, c, out.data() + q * c);
  }
  return tape.record("gather_rows", {idx.rows, idx.cols, c}, std::move(out), {&x},
                     [x, indices = idx.data, c](std::span<const double> g, Tape& t) {
                       auto gx = t.grad_buffer(x);
                       for (std::size_t q = 0; q < indices.size(); ++q) {
                         double* dst = gx.data() + indices[q] * c;
                         const double* src = g.data() + q * c;
                         for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor reduce_max_axis1(Tape& tape, const Tensor& x) {
  require_rank(x, 3, "reduce_max_axis1");
  const auto m = x.dim(0), k = x.dim(1), c = x.dim(2);
  std::vector<double> out(m * c);
  std::vector<std::size_t> argmax(m * c);
  const auto in = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* block = in.data() + r * k * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = 0;
      double value = block[ch];
      for (std::size_t j = 1; j < k; ++j) {
        if (block[j * c + ch] > value) {
          value = block[j * c + ch];
          best = j;
        }
      }
      out[r * c + ch] = value;
      argmax[r * c + ch] = best;
    }
  }
  return tape.record("reduce_max_axis1", {m, c}, std::move(out), {&x},
                     [x, argmax = std::move(argmax), k, c](std::span<const double> g, Tape& t) {
                       auto gx = t.grad_buffer(x);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const auto r = i / c, ch = i % c;
                         gx[(r * k + argmax[i]) * c + ch] += g[i];
                       }
                     });
}

Tensor repeat_rows(Tape& tape, const Tensor& x, std::size_t u) {
  require_rank(x, 2, "repeat_rows");
  if (u < 1) throw ContractError("repeat_rows: factor must be >= 1");
  const auto m = x.dim(0), c = x.dim(1);
  std::vector<double> out(u * m * c);
  const auto in = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t copy = 0; copy < u; ++copy) {
      std::copy_n(in.data() + r * c, c, out.data() + (r * u + copy) * c);
    }
  }
  return tape.record("repeat_rows", {u * m, c}, std::move(out), {&x},
                     [x, u, m, c](std::span<const double> g, Tape& t) {
                       auto gx = t.grad_buffer(x);
                       for (std::size_t r = 0; r < m; ++r) {
                         for (std::size_t copy = 0; copy < u; ++copy) {
                           const double* src = g.data() + (r * u + copy) * c;
                           for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += src[j];
                         }
                       }
                     });
}

Tensor group_channels(Tape& tape, const Tensor& x, std::size_t u) {
  require_rank(x, 2, "group_channels");
  if (u < 1 || x.dim(0) % u != 0) {
    throw ContractError("group_channels: leading extent " + std::to_string(x.dim(0)) +
                        " not divisible by " + std::to_string(u));
  }
  // Row-major layout of [uM,C] and [M,uC] coincide.
  return tape.record("group_channels", {x.dim(0) / u, x.dim(1) * u},
                     std::vector<double>(x.data().begin(), x.data().end()), {&x},
                     [x](std::span<const double> g, Tape& t) { t.accumulate(x, g); });
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (product(shape) != x.numel()) {
    throw ContractError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape) +
                        " changes element count");
  }
  return tape.record("reshape", std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                     {&x}, [x](std::span<const double> g, Tape& t) { t.accumulate(x, g); });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return tape.record("add", a.shape(), std::move(out), {&a, &b},
                     [a, b](std::span<const double> g, Tape& t) {
                       t.accumulate(a, g);
                       t.accumulate(b, g);
                     });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return tape.record("sub", a.shape(), std::move(out), {&a, &b},
                     [a, b](std::span<const double> g, Tape& t) {
                       t.accumulate(a, g);
                       if (b.requires_grad()) {
                         auto gb = t.grad_buffer(b);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                       }
                     });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return tape.record("scale", x.shape(), std::move(out), {&x},
                     [x, factor](std::span<const double> g, Tape& t) {
                       auto gx = t.grad_buffer(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
                     });
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return tape.record("sum", {1}, std::vector<double>{total}, {&x},
                     [x](std::span<const double> g, Tape& t) {
                       auto gx = t.grad_buffer(x);
                       for (auto& v : gx) v += g[0];
                     });
}

Tensor weighted_sum(Tape& tape, const Tensor& x, const Tensor& coeffs) {
  require_same_shape(x, coeffs, "weighted_sum");
  if (coeffs.requires_grad()) throw ContractError("weighted_sum: coefficients must be constant");
  double total = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) total += x[i] * coeffs[i];
  return tape.record("weighted_sum", {1}, std::vector<double>{total}, {&x},
                     [x, coeffs](std::span<const double> g, Tape& t) {
                       auto gx = t.grad_buffer(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * coeffs[i];
                     });
}

Tensor weighted_fuse(Tape& tape, const std::vector<Tensor>& inputs, const Tensor& weights,
                     double eps) {
  if (inputs.empty()) throw ContractError("weighted_fuse: no inputs");
  require_rank(weights, 1, "weighted_fuse");
  if (weights.dim(0) != inputs.size()) {
    throw ContractError("weighted_fuse: " + std::to_string(inputs.size()) + " inputs but " +
                        std::to_string(weights.dim(0)) + " weights");
  }
  for (const auto& in : inputs) require_same_shape(inputs.front(), in, "weighted_fuse");
  const auto n = inputs.size();
  std::vector<double> effective(n);
  double denom = eps;
  for (std::size_t i = 0; i < n; ++i) {
    effective[i] = std::max(weights[i], 0.0);
    denom += effective[i];
  }
  if (!(denom > 0.0)) throw ContractError("weighted_fuse: non-positive normalizer");

  const auto numel = inputs.front().numel();
  std::vector<double> out(numel, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto in = inputs[i].data();
    for (std::size_t e = 0; e < numel; ++e) out[e] += effective[i] * in[e];
  }
  for (auto& v : out) v /= denom;

  std::vector<Tensor> all = inputs;
  all.push_back(weights);
  return tape.record(
      "weighted_fuse", inputs.front().shape(), out, all,
      [inputs, weights, effective, denom, out](std::span<const double> g, Tape& t) {
        const auto n = inputs.size();
        for (std::size_t i = 0; i < n; ++i) {
          const auto in = inputs[i].data();
          if (inputs[i].requires_grad()) {
            auto gi = t.grad_buffer(inputs[i]);
            const double factor = effective[i] / denom;
            for (std::size_t e = 0; e < g.size(); ++e) gi[e] += g[e] * factor;
          }
          if (weights.requires_grad() && weights[i] > 0.0) {
            double acc = 0.0;
            for (std::size_t e = 0; e < g.size(); ++e) acc += g[e] * (in[e] - out[e]);
            t.grad_buffer(weights)[i] += acc / denom;
          }
        }
      });
}

}  // namespace bimspu
