#pragma once

// Dense f64 tensors with a per-forward-pass reverse-mode tape.
//
// A Tensor is an immutable value (shape + shared data). A Tensor that was
// registered on a Tape with Tape::watch, or produced by an op from such a
// tensor, carries a slot on that tape and therefore requires a gradient.
// Ops whose inputs are all constants are evaluated without being recorded.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bimspu/errors.hpp"

namespace bimspu {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool empty() const { return !data_; }

  std::span<const double> data() const;
  const double* ptr() const { return data_->data(); }
  double operator[](std::size_t flat) const { return (*data_)[flat]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const { return tape_ != nullptr; }
  const Tape* tape() const { return tape_; }

  /// Same values, detached from any tape.
  Tensor detach() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t slot_ = 0;
};

/// Row-major table of integer indices, e.g. Q queries x k neighbors.
struct IndexTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> data;

  IndexTable() = default;
  IndexTable(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c) {}
  IndexTable(std::initializer_list<std::initializer_list<std::size_t>> init);

  std::size_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::size_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf whose gradient will be available after backward().
  Tensor watch(const Tensor& value);

  /// Records an op output. Returns an untracked tensor when no input is on this tape.
  Tensor record(const char* op, Shape shape, std::vector<double> data,
                std::initializer_list<const Tensor*> inputs, BackwardFn backward);
  Tensor record(const char* op, Shape shape, std::shared_ptr<const std::vector<double>> data,
                std::initializer_list<const Tensor*> inputs, BackwardFn backward);
  Tensor record(const char* op, Shape shape, std::vector<double> data,
                const std::vector<Tensor>& inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. A tape can be swept once.
  void backward(const Tensor& loss);

  /// Gradient of `t` after backward(); zeros when nothing flowed into it.
  std::vector<double> grad(const Tensor& t) const;
  Tensor grad_tensor(const Tensor& t) const;

  /// Adds into the gradient buffer of `t`; no-op for untracked tensors.
  void accumulate(const Tensor& t, std::span<const double> g);
  /// Writable gradient buffer of a tracked tensor, allocated on first use.
  std::span<double> grad_buffer(const Tensor& t);

  std::size_t size() const { return entries_.size(); }
  const std::string& op_name(std::size_t slot) const { return entries_.at(slot).op; }

  /// Test hook: gradients flowing through every recorded op with this name
  /// are scaled by `factor` during backward().
  void corrupt_op(std::string op, double factor = 1.5);

 private:
  struct Entry {
    std::string op;
    std::size_t numel = 0;
    BackwardFn backward;
    std::vector<double> grad;
  };
  void check_owned(const Tensor& t) const;
  bool any_tracked(std::initializer_list<const Tensor*> inputs) const;

  std::vector<Entry> entries_;
  bool swept_ = false;
  std::string corrupt_op_;
  double corrupt_factor_ = 1.0;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Every op takes the tape explicitly so independent
// forward passes never share mutable state.

/// out[m,j] = sum_i x[m,i] W[i,j] + b[j]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);
/// Bias-free variant.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w);

Tensor relu(Tape& tape, const Tensor& x);

/// [M,Ca] ++ [M,Cb] -> [M,Ca+Cb]
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts);

/// [M,C] gathered by a QxK table -> [Q,K,C]; backward scatter-adds.
Tensor gather_rows(Tape& tape, const Tensor& x, const IndexTable& idx);

/// [M,K,C] -> [M,C]; gradient goes to the first argmax (lowest index on ties).
Tensor reduce_max_axis1(Tape& tape, const Tensor& x);

/// [M,C] -> [uM,C]; parent m owns rows u*m .. u*m+u-1.
Tensor repeat_rows(Tape& tape, const Tensor& x, std::size_t u);

/// [uM,C] -> [M,uC]; rows u*m .. u*m+u-1 are concatenated into row m.
Tensor group_channels(Tape& tape, const Tensor& x, std::size_t u);

/// Same data, new shape with equal element count.
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);

/// Scalar sum of all elements.
Tensor sum(Tape& tape, const Tensor& x);

/// Scalar sum of x * coeffs with constant coefficients of the same shape.
Tensor weighted_sum(Tape& tape, const Tensor& x, const Tensor& coeffs);

/// out = sum_i relu(w_i) * inputs_i / (sum_i relu(w_i) + eps), w of shape [n].
Tensor weighted_fuse(Tape& tape, const std::vector<Tensor>& inputs, const Tensor& weights,
                     double eps);

}  // namespace bimspu
