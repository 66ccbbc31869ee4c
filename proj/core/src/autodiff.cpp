#include "utraj/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace utraj::ad {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch, op + ": " + a.str() + " vs " + b.str());
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw Error(ErrorCode::InvalidArgument, "operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error(ErrorCode::InvalidArgument, "operands recorded on different tapes");
  return t;
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Elementwise unary op whose local derivative is a function of (input, output).
template <typename F, typename D>
Var unary(const Var& a, F forward, D derivative) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = forward(x[i]);
  return t.record(std::move(y), {a.id()}, [derivative](Tape& tape, std::size_t self) {
    const std::size_t pa = tape.parent(self, 0);
    if (!tape.requires_grad(pa)) return;
    const Tensor& g = tape.incoming(self);
    const Tensor& x = tape.value(pa);
    const Tensor& y = tape.value(self);
    Tensor& ga = tape.grad_buffer(pa);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * derivative(x[i], y[i]);
  });
}

/// Accumulates `g` (shape of the op output) into parent `p`, summing over
/// elements when the parent was a broadcast scalar.
void accumulate(Tape& tape, std::size_t p, const Tensor& g, double factor) {
  if (!tape.requires_grad(p)) return;
  Tensor& gp = tape.grad_buffer(p);
  if (gp.numel() == g.numel()) {
    for (std::size_t i = 0; i < g.numel(); ++i) gp[i] += factor * g[i];
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) s += g[i];
    gp[0] += factor * s;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape / Tensor

Shape::Shape(std::initializer_list<std::size_t> dims) {
  if (dims.size() > 3) throw Error(ErrorCode::ShapeMismatch, "tensors are limited to rank 3");
  rank_ = dims.size();
  std::size_t i = 0;
  for (std::size_t d : dims) dims_[i++] = d;
}

std::size_t Shape::numel() const noexcept {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::size_t Shape::rows() const noexcept {
  if (rank_ <= 1) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < rank_; ++i) n *= dims_[i];
  return n;
}

std::size_t Shape::cols() const noexcept { return rank_ == 0 ? 1 : dims_[rank_ - 1]; }

std::string Shape::str() const {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < rank_; ++i) s << (i ? "," : "") << dims_[i];
  s << ']';
  return s.str();
}

bool operator==(const Shape& a, const Shape& b) noexcept {
  if (a.rank_ != b.rank_) return false;
  for (std::size_t i = 0; i < a.rank_; ++i) {
    if (a.dims_[i] != b.dims_[i]) return false;
  }
  return true;
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(values.begin(), values.end()) {
  if (data_.size() != shape_.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "tensor data size does not match shape " + shape_.str());
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_.str());
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != numel()) throw Error(ErrorCode::ShapeMismatch, "reshape " + shape_.str() + " -> " + shape.str());
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw Error(ErrorCode::InvalidArgument, "duplicate parameter " + name);
  it->second.name = name;
  it->second.value = std::move(init);
  it->second.zero_grad();
  return it->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorCode::InvalidArgument, "unknown parameter " + name);
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorCode::InvalidArgument, "unknown parameter " + name);
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) {
    if (p.grad.shape() == p.value.shape()) {
      p.grad.fill(0.0);
    } else {
      p.zero_grad();
    }
  }
}

double ParameterStore::grad_norm() const {
  double acc = 0.0;
  for (const auto& [_, p] : params_) {
    for (double g : p.grad.data()) acc += g * g;
  }
  return std::sqrt(acc);
}

void ParameterStore::scale_grads(double factor) {
  for (auto& [_, p] : params_) {
    for (double& g : p.grad.data()) g *= factor;
  }
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_of(*this).value(id_); }
const Tensor& Var::grad() const { return tape_of(*this).grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, {}, &p, true});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  bool needs = false;
  for (std::size_t p : parents) {
    if (p >= nodes_.size()) throw Error(ErrorCode::InvalidArgument, "parent not on tape");
    needs = needs || nodes_[p].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(parents), needs ? std::move(backward) : BackwardFn{},
                        nullptr, needs});
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t id) const {
  static const Tensor kEmpty;
  const Node& n = nodes_.at(id);
  return n.grad.empty() && !n.value.empty() ? kEmpty : n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.numel() != n.value.numel()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) throw Error(ErrorCode::InvalidArgument, "backward root is on another tape");
  if (replayed_) throw Error(ErrorCode::BackwardReplay, "tape already replayed; record a new forward pass");
  if (nodes_[root.id()].value.numel() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "backward root must be a scalar");
  }
  replayed_ = true;
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.numel() != p.value.numel()) p.zero_grad();
      for (std::size_t k = 0; k < n.grad.numel(); ++k) p.grad[k] += n.grad[k];
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  replayed_ = false;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

namespace {

template <typename F>
Tensor binary_values(const Tensor& x, const Tensor& y, const std::string& op, F f) {
  if (x.shape() == y.shape()) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i], y[i]);
    return out;
  }
  if (is_scalar(y)) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i], y[0]);
    return out;
  }
  if (is_scalar(x)) {
    Tensor out(y.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) out[i] = f(x[0], y[i]);
    return out;
  }
  shape_error(op, x.shape(), y.shape());
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  Tensor out = binary_values(a.value(), b.value(), "add", [](double x, double y) { return x + y; });
  return t.record(std::move(out), {a.id(), b.id()}, [](Tape& tape, std::size_t self) {
    const Tensor& g = tape.incoming(self);
    accumulate(tape, tape.parent(self, 0), g, 1.0);
    accumulate(tape, tape.parent(self, 1), g, 1.0);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  Tensor out = binary_values(a.value(), b.value(), "sub", [](double x, double y) { return x - y; });
  return t.record(std::move(out), {a.id(), b.id()}, [](Tape& tape, std::size_t self) {
    const Tensor& g = tape.incoming(self);
    accumulate(tape, tape.parent(self, 0), g, 1.0);
    accumulate(tape, tape.parent(self, 1), g, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  Tensor out = binary_values(a.value(), b.value(), "mul", [](double x, double y) { return x * y; });
  return t.record(std::move(out), {a.id(), b.id()}, [](Tape& tape, std::size_t self) {
    const Tensor& g = tape.incoming(self);
    const std::size_t pa = tape.parent(self, 0);
    const std::size_t pb = tape.parent(self, 1);
    const Tensor& x = tape.value(pa);
    const Tensor& y = tape.value(pb);
    auto push = [&](std::size_t p, const Tensor& other, const Tensor& mine) {
      if (!tape.requires_grad(p)) return;
      Tensor& gp = tape.grad_buffer(p);
      const bool other_scalar = other.numel() == 1 && g.numel() != 1;
      const bool mine_scalar = mine.numel() == 1 && g.numel() != 1;
      if (mine_scalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.numel(); ++i) s += g[i] * other[other_scalar ? 0 : i];
        gp[0] += s;
      } else {
        for (std::size_t i = 0; i < g.numel(); ++i) gp[i] += g[i] * other[other_scalar ? 0 : i];
      }
    };
    push(pa, y, x);
    push(pb, x, y);
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double factor) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return t.record(std::move(out), {a.id()}, [factor](Tape& tape, std::size_t self) {
    accumulate(tape, tape.parent(self, 0), tape.incoming(self), factor);
  });
}

Var add_scalar(const Var& a, double c) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v += c;
  return t.record(std::move(out), {a.id()}, [](Tape& tape, std::size_t self) {
    accumulate(tape, tape.parent(self, 0), tape.incoming(self), 1.0);
  });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator-(const Var& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Linear algebra and structure

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape().rank() != 2 || y.shape().rank() != 2 || x.cols() != y.rows()) {
    shape_error("matmul", x.shape(), y.shape());
  }
  Tensor out = Tensor::matrix(x.rows(), y.cols());
  out.mat().noalias() = x.mat() * y.mat();
  return t.record(std::move(out), {a.id(), b.id()}, [](Tape& tape, std::size_t self) {
    const Tensor& g = tape.incoming(self);
    const std::size_t pa = tape.parent(self, 0);
    const std::size_t pb = tape.parent(self, 1);
    if (tape.requires_grad(pa)) tape.grad_buffer(pa).mat().noalias() += g.mat() * tape.value(pb).mat().transpose();
    if (tape.requires_grad(pb)) tape.grad_buffer(pb).mat().noalias() += tape.value(pa).mat().transpose() * g.mat();
  });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  Tape& t = tape_of(x, w);
  if (b.tape() != &t) throw Error(ErrorCode::InvalidArgument, "operands recorded on different tapes");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.shape().rank() != 2 || wv.shape().rank() != 2 || xv.cols() != wv.rows() || bv.numel() != wv.cols()) {
    shape_error("affine", xv.shape(), wv.shape());
  }
  Tensor out = Tensor::matrix(xv.rows(), wv.cols());
  auto om = out.mat();
  om.noalias() = xv.mat() * wv.mat();
  const Eigen::Map<const Eigen::RowVectorXd> bias(bv.data().data(), static_cast<Eigen::Index>(bv.numel()));
  om.rowwise() += bias;
  return t.record(std::move(out), {x.id(), w.id(), b.id()}, [](Tape& tape, std::size_t self) {
    const Tensor& g = tape.incoming(self);
    const std::size_t px = tape.parent(self, 0);
    const std::size_t pw = tape.parent(self, 1);
    const std::size_t pb = tape.parent(self, 2);
    if (tape.requires_grad(px)) tape.grad_buffer(px).mat().noalias() += g.mat() * tape.value(pw).mat().transpose();
    if (tape.requires_grad(pw)) tape.grad_buffer(pw).mat().noalias() += tape.value(px).mat().transpose() * g.mat();
    if (tape.requires_grad(pb)) {
      Tensor& gb = tape.grad_buffer(pb);
      Eigen::Map<Eigen::RowVectorXd> gbv(gb.data().data(), static_cast<Eigen::Index>(gb.numel()));
      gbv += g.mat().colwise().sum();
    }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorCode::InvalidArgument, "concat of nothing");
  if (axis > 1) throw Error(ErrorCode::ShapeMismatch, "concat axis must be 0 or 1");
  Tape& t = tape_of(parts.front());
  const std::size_t rows0 = parts.front().value().rows();
  const std::size_t cols0 = parts.front().value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw Error(ErrorCode::InvalidArgument, "operands recorded on different tapes");
    const Tensor& v = p.value();
    if (axis == 0 ? v.cols() != cols0 : v.rows() != rows0) shape_error("concat", parts.front().shape(), v.shape());
    extents.push_back(axis == 0 ? v.rows() : v.cols());
    total += extents.back();
    ids.push_back(p.id());
  }
  Tensor out = axis == 0 ? Tensor::matrix(total, cols0) : Tensor::matrix(rows0, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    if (axis == 0) {
      out.mat().middleRows(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(extents[k])) = v.mat();
    } else {
      out.mat().middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(extents[k])) = v.mat();
    }
    offset += extents[k];
  }
  return t.record(std::move(out), std::move(ids), [axis, extents](Tape& tape, std::size_t self) {
    const Tensor& g = tape.incoming(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t p = tape.parent(self, k);
      if (tape.requires_grad(p)) {
        auto gp = tape.grad_buffer(p).mat();
        const auto o = static_cast<Eigen::Index>(offset);
        const auto e = static_cast<Eigen::Index>(extents[k]);
        if (axis == 0) {
          gp += g.mat().middleRows(o, e);
        } else {
          gp += g.mat().middleCols(o, e);
        }
      }
      offset += extents[k];
    }
  });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& v = a.value();
  const std::size_t extent = axis == 0 ? v.rows() : v.cols();
  if (axis > 1 || begin >= end || end > extent) {
    throw Error(ErrorCode::ShapeMismatch, "slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                              ") on axis " + std::to_string(axis) + " of " + v.shape().str());
  }
  const auto b = static_cast<Eigen::Index>(begin);
  const auto n = static_cast<Eigen::Index>(end - begin);
  Tensor out = axis == 0 ? Tensor::matrix(end - begin, v.cols()) : Tensor::matrix(v.rows(), end - begin);
  if (axis == 0) {
    out.mat() = v.mat().middleRows(b, n);
  } else {
    out.mat() = v.mat().middleCols(b, n);
  }
  return t.record(std::move(out), {a.id()}, [axis, b, n](Tape& tape, std::size_t self) {
    const std::size_t p = tape.parent(self, 0);
    if (!tape.requires_grad(p)) return;
    auto gp = tape.grad_buffer(p).mat();
    if (axis == 0) {
      gp.middleRows(b, n) += tape.incoming(self).mat();
    } else {
      gp.middleCols(b, n) += tape.incoming(self).mat();
    }
  });
}

Var select_cols(const Var& a, std::span<const std::size_t> cols) {
  Tape& t = tape_of(a);
  const Tensor& v = a.value();
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  for (std::size_t c : idx) {
    if (c >= v.cols()) throw Error(ErrorCode::ShapeMismatch, "select_cols index out of range for " + v.shape().str());
  }
  Tensor out = Tensor::matrix(v.rows(), idx.size());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t k = 0; k < idx.size(); ++k) out.at(r, k) = v.at(r, idx[k]);
  }
  return t.record(std::move(out), {a.id()}, [idx](Tape& tape, std::size_t self) {
    const std::size_t p = tape.parent(self, 0);
    if (!tape.requires_grad(p)) return;
    const Tensor& g = tape.incoming(self);
    Tensor& gp = tape.grad_buffer(p);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t k = 0; k < idx.size(); ++k) gp.at(r, idx[k]) += g.at(r, k);
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tape& t = tape_of(a);
  Tensor out = a.value().reshaped(shape);
  return t.record(std::move(out), {a.id()}, [](Tape& tape, std::size_t self) {
    accumulate(tape, tape.parent(self, 0), tape.incoming(self), 1.0);
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(Tensor::scalar(s), {a.id()}, [](Tape& tape, std::size_t self) {
    const std::size_t p = tape.parent(self, 0);
    if (!tape.requires_grad(p)) return;
    const double g = tape.incoming(self)[0];
    for (double& v : tape.grad_buffer(p).data()) v += g;
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().numel());
  return scale(sum(a), 1.0 / n);
}

Var sum_cols(const Var& a) {
  Tape& t = tape_of(a);
  const Tensor& v = a.value();
  Tensor out = Tensor::matrix(v.rows(), 1);
  Eigen::Map<Eigen::VectorXd>(out.data().data(), static_cast<Eigen::Index>(v.rows())) = v.mat().rowwise().sum();
  return t.record(std::move(out), {a.id()}, [](Tape& tape, std::size_t self) {
    const std::size_t p = tape.parent(self, 0);
    if (!tape.requires_grad(p)) return;
    const Tensor& g = tape.incoming(self);
    Tensor& gp = tape.grad_buffer(p);
    const std::size_t c = gp.cols();
    for (std::size_t r = 0; r < gp.rows(); ++r) {
      for (std::size_t k = 0; k < c; ++k) gp.at(r, k) += g[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise transcendental

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var softmax(const Var& a) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double m = x[r * c];
    for (std::size_t k = 1; k < c; ++k) m = std::max(m, x[r * c + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += (out[r * c + k] = std::exp(x[r * c + k] - m));
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] /= z;
  }
  return t.record(std::move(out), {a.id()}, [](Tape& tape, std::size_t self) {
    const std::size_t p = tape.parent(self, 0);
    if (!tape.requires_grad(p)) return;
    const Tensor& g = tape.incoming(self);
    const Tensor& s = tape.value(self);
    Tensor& gp = tape.grad_buffer(p);
    const std::size_t c = s.cols();
    // Jacobian-vector product: dx_i = s_i (g_i - sum_j g_j s_j).
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += g[r * c + k] * s[r * c + k];
      for (std::size_t k = 0; k < c; ++k) gp[r * c + k] += s[r * c + k] * (g[r * c + k] - dot);
    }
  });
}

Var log_softmax(const Var& a) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double m = x[r * c];
    for (std::size_t k = 1; k < c; ++k) m = std::max(m, x[r * c + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(x[r * c + k] - m);
    const double lz = m + std::log(z);
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = x[r * c + k] - lz;
  }
  return t.record(std::move(out), {a.id()}, [](Tape& tape, std::size_t self) {
    const std::size_t p = tape.parent(self, 0);
    if (!tape.requires_grad(p)) return;
    const Tensor& g = tape.incoming(self);
    const Tensor& y = tape.value(self);
    Tensor& gp = tape.grad_buffer(p);
    const std::size_t c = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t k = 0; k < c; ++k) gs += g[r * c + k];
      for (std::size_t k = 0; k < c; ++k) gp[r * c + k] += g[r * c + k] - std::exp(y[r * c + k]) * gs;
    }
  });
}

Var repeat_rows(const Var& a, std::size_t k) {
  Tape& t = tape_of(a);
  const Tensor& v = a.value();
  const std::size_t c = v.cols();
  Tensor out = Tensor::matrix(v.rows() * k, c);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(r * c), c,
                  out.data().begin() + static_cast<std::ptrdiff_t>((r * k + j) * c));
    }
  }
  return t.record(std::move(out), {a.id()}, [k](Tape& tape, std::size_t self) {
    const std::size_t p = tape.parent(self, 0);
    if (!tape.requires_grad(p)) return;
    const Tensor& g = tape.incoming(self);
    Tensor& gp = tape.grad_buffer(p);
    const std::size_t c = gp.cols();
    for (std::size_t r = 0; r < gp.rows(); ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t q = 0; q < c; ++q) gp[r * c + q] += g[(r * k + j) * c + q];
      }
    }
  });
}

Var scale_rows(const Var& a, const Var& w) {
  Tape& t = tape_of(a, w);
  const Tensor& x = a.value();
  const Tensor& wv = w.value();
  if (wv.numel() != x.rows()) shape_error("scale_rows", x.shape(), wv.shape());
  Tensor out = x;
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] *= wv[r];
  }
  return t.record(std::move(out), {a.id(), w.id()}, [](Tape& tape, std::size_t self) {
    const Tensor& g = tape.incoming(self);
    const std::size_t pa = tape.parent(self, 0);
    const std::size_t pw = tape.parent(self, 1);
    const Tensor& x = tape.value(pa);
    const Tensor& wv = tape.value(pw);
    const std::size_t c = x.cols();
    if (tape.requires_grad(pa)) {
      Tensor& ga = tape.grad_buffer(pa);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t k = 0; k < c; ++k) ga[r * c + k] += g[r * c + k] * wv[r];
      }
    }
    if (tape.requires_grad(pw)) {
      Tensor& gw = tape.grad_buffer(pw);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += g[r * c + k] * x[r * c + k];
        gw[r] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Recurrent cells

Var gru_cell(const Var& x, const Var& h, const GruWeights& w) {
  const std::size_t hidden = h.value().cols();
  if (w.w_hidden.value().rows() != hidden || w.w_hidden.value().cols() != 3 * hidden) {
    shape_error("gru_cell hidden weights", w.w_hidden.shape(), h.shape());
  }
  const Var gx = affine(x, w.w_input, w.b_input);
  const Var gh = affine(h, w.w_hidden, w.b_hidden);
  const Var r = sigmoid(slice(gx, 1, 0, hidden) + slice(gh, 1, 0, hidden));
  const Var z = sigmoid(slice(gx, 1, hidden, 2 * hidden) + slice(gh, 1, hidden, 2 * hidden));
  const Var n = tanh(slice(gx, 1, 2 * hidden, 3 * hidden) + r * slice(gh, 1, 2 * hidden, 3 * hidden));
  // (1 - z) * n + z * h == n + z * (h - n)
  return n + z * (h - n);
}

LstmState lstm_cell(const Var& x, const LstmState& state, const LstmWeights& w) {
  const std::size_t hidden = state.h.value().cols();
  if (w.w_hidden.value().rows() != hidden || w.w_hidden.value().cols() != 4 * hidden) {
    shape_error("lstm_cell hidden weights", w.w_hidden.shape(), state.h.shape());
  }
  const Var gates = affine(x, w.w_input, w.bias) + matmul(state.h, w.w_hidden);
  const Var i = sigmoid(slice(gates, 1, 0, hidden));
  const Var f = sigmoid(slice(gates, 1, hidden, 2 * hidden));
  const Var g = tanh(slice(gates, 1, 2 * hidden, 3 * hidden));
  const Var o = sigmoid(slice(gates, 1, 3 * hidden, 4 * hidden));
  const Var c = f * state.c + i * g;
  return {o * tanh(c), c};
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(Parameter& param, AdamMoments& moments, const AdamConfig& config) {
  const std::size_t n = param.value.numel();
  if (param.grad.numel() != n) throw Error(ErrorCode::ShapeMismatch, "adam_step: gradient shape for " + param.name);
  if (moments.m.numel() != n) {
    moments.m = Tensor(param.value.shape());
    moments.v = Tensor(param.value.shape());
    moments.t = 0;
  }
  ++moments.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(moments.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(moments.t));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = param.grad[i];
    moments.m[i] = config.beta1 * moments.m[i] + (1.0 - config.beta1) * g;
    moments.v[i] = config.beta2 * moments.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = moments.m[i] / c1;
    const double v_hat = moments.v[i] / c2;
    param.value[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

double Adam::step(ParameterStore& params) {
  const double norm = params.grad_norm();
  if (config_.clip_norm > 0.0 && norm > config_.clip_norm) params.scale_grads(config_.clip_norm / norm);
  for (auto& [name, p] : params) adam_step(p, moments_[name], config_);
  return norm;
}

}  // namespace utraj::ad
