#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tape records one forward pass. Var is a cheap handle (tape pointer + node
// index). Parameters live outside the tape; binding one with Tape::parameter
// makes backward() accumulate into Parameter::grad. The tape may be replayed
// backward exactly once; clear() starts the next forward pass.
//
// Broadcasting is limited to scalar-tensor arithmetic. Row-wise operations
// treat a rank-3 tensor [a, b, c] as an (a*b) x c matrix.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "utraj/error.hpp"

namespace utraj::ad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);

  [[nodiscard]] std::size_t rank() const noexcept { return rank_; }
  [[nodiscard]] std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  [[nodiscard]] std::size_t numel() const noexcept;
  /// Leading dims flattened; 1 for scalars.
  [[nodiscard]] std::size_t rows() const noexcept;
  /// Last dim; 1 for scalars.
  [[nodiscard]] std::size_t cols() const noexcept;
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b) noexcept;

 private:
  std::array<std::size_t, 3> dims_{1, 1, 1};
  std::size_t rank_ = 0;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, v); }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }
  static Tensor from_rows(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t numel() const noexcept { return data_.size(); }
  [[nodiscard]] std::size_t rows() const noexcept { return shape_.rows(); }
  [[nodiscard]] std::size_t cols() const noexcept { return shape_.cols(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* ptr(std::size_t i = 0) { return data_.data() + i; }
  [[nodiscard]] const double* ptr(std::size_t i = 0) const { return data_.data() + i; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  [[nodiscard]] double item() const;

  [[nodiscard]] MatrixMap mat() { return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())}; }
  [[nodiscard]] ConstMatrixMap mat() const {
    return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }

  void fill(double v);
  [[nodiscard]] Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  // Aligned so Eigen's vectorized reductions peel identically on every run.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

/// Trainable tensor with a gradient accumulator of the same shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad = Tensor(value.shape()); }
};

/// Name-ordered parameter collection; iteration order is deterministic.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  [[nodiscard]] Parameter& at(const std::string& name);
  [[nodiscard]] const Parameter& at(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const { return params_.contains(name); }
  [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
  [[nodiscard]] std::size_t scalar_count() const;

  void zero_grad();
  /// Global L2 norm of all gradients.
  [[nodiscard]] double grad_norm() const;
  void scale_grads(double factor);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  [[nodiscard]] auto begin() const { return params_.begin(); }
  [[nodiscard]] auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] Tape* tape() const noexcept { return tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Tensor& grad() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape (read back through Var::grad).
  Var variable(Tensor value);
  /// Leaf bound to an external parameter.
  Var parameter(Parameter& p);

  /// Records an op node. `parents` must already be on this tape.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 (root must be a scalar) and runs every
  /// recorded rule once in reverse creation order.
  void backward(const Var& root);
  void clear();

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] const Tensor& grad(std::size_t id) const;
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  [[nodiscard]] std::size_t parent(std::size_t id, std::size_t k) const { return nodes_[id].parents[k]; }

  /// Gradient accumulator of node `id`, allocated (zeroed) on first use.
  Tensor& grad_buffer(std::size_t id);
  /// Gradient flowing into node `id` during backward (empty if none arrived).
  [[nodiscard]] const Tensor& incoming(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool replayed_ = false;
};

// ---------------------------------------------------------------------------
// Primitive ops

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
/// x W + 1 b^T for x [m,k], W [k,n], b [n].
Var affine(const Var& x, const Var& w, const Var& b);
/// axis 0 stacks rows, axis 1 appends columns (rank <= 2).
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
Var select_cols(const Var& a, std::span<const std::size_t> cols);
Var reshape(const Var& a, Shape shape);
Var sum(const Var& a);
Var mean(const Var& a);
/// [R, C] -> [R, 1]
Var sum_cols(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
/// Row-wise softmax over the last axis.
Var softmax(const Var& a);
Var log_softmax(const Var& a);
/// [B, C] -> [B*k, C], each row repeated k times consecutively.
Var repeat_rows(const Var& a, std::size_t k);
/// Row r of a scaled by w[r]; w has shape [R, 1].
Var scale_rows(const Var& a, const Var& w);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator-(const Var& a);

// ---------------------------------------------------------------------------
// Recurrent cells. Weight layouts follow the common fused-gate convention.

struct GruWeights {
  Var w_input;   // [in, 3H]  gates ordered (reset, update, candidate)
  Var w_hidden;  // [H, 3H]
  Var b_input;   // [3H]
  Var b_hidden;  // [3H]
};

/// h' = (1 - z) * n + z * h with n = tanh(W_n x + b_n + r * (U_n h + c_n)).
Var gru_cell(const Var& x, const Var& h, const GruWeights& w);

struct LstmWeights {
  Var w_input;   // [in, 4H]  gates ordered (input, forget, cell, output)
  Var w_hidden;  // [H, 4H]
  Var bias;      // [4H]
};

struct LstmState {
  Var h;
  Var c;
};

LstmState lstm_cell(const Var& x, const LstmState& state, const LstmWeights& w);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

struct AdamMoments {
  Tensor m;
  Tensor v;
  std::int64_t t = 0;
};

/// One adaptive-moment update of `param` from `param.grad`.
void adam_step(Parameter& param, AdamMoments& moments, const AdamConfig& config);

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Clips the global gradient norm, then updates every parameter. Returns the
  /// pre-clip norm.
  double step(ParameterStore& params);
  [[nodiscard]] const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  std::map<std::string, AdamMoments> moments_;
};

}  // namespace utraj::ad
