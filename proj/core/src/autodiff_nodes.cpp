#include "utraj/autodiff_nodes.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace utraj::ad {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void require_cols(const Tensor& t, std::size_t rows, std::size_t cols, const char* what) {
  if (t.rows() != rows || t.cols() != cols || t.numel() != rows * cols) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": expected [" + std::to_string(rows) + "," +
                                              std::to_string(cols) + "], got " + t.shape().str());
  }
}

/// Symmetric 2x2 read from a 4-entry row, regularized.
Mat2 read_cov(const double* c) {
  Mat2 m;
  const double off = 0.5 * (c[1] + c[2]);
  m << c[0] + kEpsReg, off, off, c[3] + kEpsReg;
  return m;
}

Mat2 inverse2(const Mat2& m, double& det) {
  det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  Mat2 inv;
  inv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
  return inv / det;
}

void write_sym_grad(double* out, const Mat2& g, double scale) {
  out[0] += scale * g(0, 0);
  out[1] += scale * g(0, 1);
  out[2] += scale * g(1, 0);
  out[3] += scale * g(1, 1);
}

}  // namespace

Var cov2_from_params(const Var& params) {
  const Tensor& p = params.value();
  const std::size_t rows = p.rows();
  require_cols(p, rows, 3, "cov2_from_params");
  Tensor out = Tensor::matrix(rows, 4);
  for (std::size_t r = 0; r < rows; ++r) {
    const double sx = std::exp(p[3 * r]);
    const double sy = std::exp(p[3 * r + 1]);
    const double rho = std::tanh(p[3 * r + 2]);
    out[4 * r] = sx * sx;
    out[4 * r + 1] = out[4 * r + 2] = rho * sx * sy;
    out[4 * r + 3] = sy * sy;
  }
  return params.tape()->record(std::move(out), {params.id()}, [](Tape& tape, std::size_t self) {
    const std::size_t pid = tape.parent(self, 0);
    const Tensor& g = tape.incoming(self);
    const Tensor& p = tape.value(pid);
    Tensor& gp = tape.grad_buffer(pid);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      const double sx = std::exp(p[3 * r]);
      const double sy = std::exp(p[3 * r + 1]);
      const double rho = std::tanh(p[3 * r + 2]);
      const double g_off = g[4 * r + 1] + g[4 * r + 2];
      gp[3 * r] += 2.0 * sx * sx * g[4 * r] + g_off * rho * sx * sy;
      gp[3 * r + 1] += 2.0 * sy * sy * g[4 * r + 3] + g_off * rho * sx * sy;
      gp[3 * r + 2] += g_off * sx * sy * (1.0 - rho * rho);
    }
  });
}

Var gaussian2_nll_rows(const Var& mean, const Var& cov, const Tensor& target) {
  const std::size_t rows = mean.value().rows();
  require_cols(mean.value(), rows, 2, "gaussian2_nll_rows mean");
  require_cols(cov.value(), rows, 4, "gaussian2_nll_rows cov");
  require_cols(target, rows, 2, "gaussian2_nll_rows target");
  if (cov.tape() != mean.tape()) throw Error(ErrorCode::InvalidArgument, "operands on different tapes");
  const Tensor& mu = mean.value();
  const Tensor& c = cov.value();
  Tensor out = Tensor::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double det = 0.0;
    const Mat2 inv = inverse2(read_cov(c.ptr(4 * r)), det);
    const Vec2 d(target[2 * r] - mu[2 * r], target[2 * r + 1] - mu[2 * r + 1]);
    out[r] = 0.5 * d.dot(inv * d) + 0.5 * std::log(det) + kLog2Pi;
  }
  return mean.tape()->record(std::move(out), {mean.id(), cov.id()}, [target](Tape& tape, std::size_t self) {
    const std::size_t pm = tape.parent(self, 0);
    const std::size_t pc = tape.parent(self, 1);
    const Tensor& g = tape.incoming(self);
    const Tensor& mu = tape.value(pm);
    const Tensor& c = tape.value(pc);
    const bool need_m = tape.requires_grad(pm);
    const bool need_c = tape.requires_grad(pc);
    for (std::size_t r = 0; r < g.numel(); ++r) {
      double det = 0.0;
      const Mat2 inv = inverse2(read_cov(c.ptr(4 * r)), det);
      const Vec2 d(target[2 * r] - mu[2 * r], target[2 * r + 1] - mu[2 * r + 1]);
      const Vec2 w = inv * d;
      if (need_m) {
        Tensor& gm = tape.grad_buffer(pm);
        gm[2 * r] -= g[r] * w(0);
        gm[2 * r + 1] -= g[r] * w(1);
      }
      if (need_c) {
        const Mat2 gc = 0.5 * (inv - w * w.transpose());
        write_sym_grad(tape.grad_buffer(pc).ptr(4 * r), gc, g[r]);
      }
    }
  });
}

Var bhattacharyya_rows(const Var& mean, const Var& cov, const Tensor& target_mean, const Tensor& target_cov) {
  const std::size_t rows = mean.value().rows();
  require_cols(mean.value(), rows, 2, "bhattacharyya_rows mean");
  require_cols(cov.value(), rows, 4, "bhattacharyya_rows cov");
  require_cols(target_mean, rows, 2, "bhattacharyya_rows target mean");
  require_cols(target_cov, rows, 4, "bhattacharyya_rows target cov");
  if (cov.tape() != mean.tape()) throw Error(ErrorCode::InvalidArgument, "operands on different tapes");

  struct Parts {
    Vec2 w;
    Mat2 avg_inv;
    Mat2 p_inv;
  };
  auto parts = [target_mean, target_cov](const Tensor& mu, const Tensor& c, std::size_t r, double* value) {
    const Mat2 cp = read_cov(c.ptr(4 * r));
    const Mat2 cq = read_cov(target_cov.ptr(4 * r));
    const Mat2 avg = 0.5 * (cp + cq);
    double det_avg = 0.0, det_p = 0.0, det_q = 0.0;
    Parts out;
    out.avg_inv = inverse2(avg, det_avg);
    out.p_inv = inverse2(cp, det_p);
    (void)inverse2(cq, det_q);
    const Vec2 d(mu[2 * r] - target_mean[2 * r], mu[2 * r + 1] - target_mean[2 * r + 1]);
    out.w = out.avg_inv * d;
    if (value != nullptr) {
      const double v = 0.125 * d.dot(out.w) + 0.5 * std::log(det_avg) - 0.25 * std::log(det_p) -
                       0.25 * std::log(det_q);
      *value = v > 0.0 ? v : 0.0;
    }
    return out;
  };

  Tensor out = Tensor::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) (void)parts(mean.value(), cov.value(), r, out.ptr(r));
  return mean.tape()->record(std::move(out), {mean.id(), cov.id()}, [parts = std::move(parts)](Tape& tape, std::size_t self) {
    const std::size_t pm = tape.parent(self, 0);
    const std::size_t pc = tape.parent(self, 1);
    const Tensor& g = tape.incoming(self);
    const bool need_m = tape.requires_grad(pm);
    const bool need_c = tape.requires_grad(pc);
    for (std::size_t r = 0; r < g.numel(); ++r) {
      const Parts p = parts(tape.value(pm), tape.value(pc), r, nullptr);
      if (need_m) {
        Tensor& gm = tape.grad_buffer(pm);
        gm[2 * r] += g[r] * 0.25 * p.w(0);
        gm[2 * r + 1] += g[r] * 0.25 * p.w(1);
      }
      if (need_c) {
        const Mat2 gc = -(1.0 / 16.0) * p.w * p.w.transpose() + 0.25 * p.avg_inv - 0.25 * p.p_inv;
        write_sym_grad(tape.grad_buffer(pc).ptr(4 * r), gc, g[r]);
      }
    }
  });
}

Var gaussian2_nll_node(const Var& mean, const Var& cov_params, const Vec2& target) {
  return gaussian2_nll_rows(mean, cov2_from_params(cov_params), Tensor::from_rows(1, 2, {target(0), target(1)}));
}

Var bhattacharyya_node(const Var& mean, const Var& cov_params, const Gaussian2& target) {
  const Mat2& c = target.cov();
  return bhattacharyya_rows(mean, cov2_from_params(cov_params),
                            Tensor::from_rows(1, 2, {target.mean()(0), target.mean()(1)}),
                            Tensor::from_rows(1, 4, {c(0, 0), c(0, 1), c(1, 0), c(1, 1)}));
}

Var propagate(const dynamics::DynamicsModel& model, const Var& state_mean, const Var& state_cov,
              const Var& ctrl_mean, const Var& ctrl_cov) {
  const auto d = static_cast<std::size_t>(model.state_dim());
  const std::size_t rows = state_mean.value().rows();
  require_cols(state_mean.value(), rows, d, "propagate state mean");
  require_cols(state_cov.value(), rows, d * d, "propagate state cov");
  require_cols(ctrl_mean.value(), rows, 2, "propagate control mean");
  require_cols(ctrl_cov.value(), rows, 4, "propagate control cov");
  Tape& tape = *state_mean.tape();
  for (const Var* v : {&state_cov, &ctrl_mean, &ctrl_cov}) {
    if (v->tape() != &tape) throw Error(ErrorCode::InvalidArgument, "operands on different tapes");
  }

  const auto n = static_cast<Eigen::Index>(d);
  using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  const bool linear = model.is_linear();
  dynamics::Linearization fixed;
  if (linear) fixed = dynamics::jacobians(model, VecX::Zero(n), VecX::Zero(2));

  Tensor out = Tensor::matrix(rows, d + d * d);
  const Tensor& s = state_mean.value();
  const Tensor& c = state_cov.value();
  const Tensor& u = ctrl_mean.value();
  const Tensor& cu = ctrl_cov.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const VecX sv = Eigen::Map<const VecX>(s.ptr(r * d), n);
    const VecX uv = Eigen::Map<const VecX>(u.ptr(2 * r), 2);
    const MatX cm = RowMap(c.ptr(r * d * d), n, n);
    const MatX cum = RowMap(cu.ptr(4 * r), 2, 2);
    const dynamics::Linearization lin = linear ? fixed : dynamics::jacobians(model, sv, uv);
    const VecX next = linear ? VecX(lin.a * sv + lin.b * uv) : dynamics::step_mean(model, sv, uv);
    MatX cov = lin.a * cm * lin.a.transpose() + lin.b * cum * lin.b.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
    double* o = out.ptr(r * (d + d * d));
    for (Eigen::Index i = 0; i < n; ++i) o[i] = next(i);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(o + d, n, n) = cov;
  }

  return tape.record(
      std::move(out), {state_mean.id(), state_cov.id(), ctrl_mean.id(), ctrl_cov.id()},
      [model, d, n, linear, fixed](Tape& tape, std::size_t self) {
        const std::size_t ps = tape.parent(self, 0);
        const std::size_t pc = tape.parent(self, 1);
        const std::size_t pu = tape.parent(self, 2);
        const std::size_t pcu = tape.parent(self, 3);
        const Tensor& g = tape.incoming(self);
        const Tensor& s = tape.value(ps);
        const Tensor& c = tape.value(pc);
        const Tensor& u = tape.value(pu);
        const Tensor& cu = tape.value(pcu);
        const std::size_t rows = s.rows();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.ptr(r * (d + d * d));
          const VecX gm = Eigen::Map<const VecX>(gr, n);
          MatX gc = RowMap(gr + d, n, n);
          gc = 0.5 * (gc + gc.transpose()).eval();
          const VecX sv = Eigen::Map<const VecX>(s.ptr(r * d), n);
          const VecX uv = Eigen::Map<const VecX>(u.ptr(2 * r), 2);
          const MatX cm = RowMap(c.ptr(r * d * d), n, n);
          const MatX cum = RowMap(cu.ptr(4 * r), 2, 2);
          const dynamics::Linearization lin = linear ? fixed : dynamics::jacobians(model, sv, uv);

          VecX g_state = lin.a.transpose() * gm;
          VecX g_ctrl = lin.b.transpose() * gm;
          if (!linear) {
            // d/dx of tr(G (A C A^T + B S B^T)) = 2 tr(G dA C A^T) + 2 tr(G dB S B^T).
            const auto sens = dynamics::jacobian_sensitivity(model, sv, uv);
            const MatX gac = gc * lin.a * cm;    // so tr(G dA C A^T) = <dA, G A C>
            const MatX gbs = gc * lin.b * cum;
            for (Eigen::Index k = 0; k < n; ++k) {
              g_state(k) += 2.0 * (sens.da_dstate[k].cwiseProduct(gac).sum() +
                                   sens.db_dstate[k].cwiseProduct(gbs).sum());
            }
            for (Eigen::Index k = 0; k < 2; ++k) {
              g_ctrl(k) += 2.0 * (sens.da_dcontrol[k].cwiseProduct(gac).sum() +
                                  sens.db_dcontrol[k].cwiseProduct(gbs).sum());
            }
          }
          if (tape.requires_grad(ps)) {
            double* o = tape.grad_buffer(ps).ptr(r * d);
            for (Eigen::Index i = 0; i < n; ++i) o[i] += g_state(i);
          }
          if (tape.requires_grad(pu)) {
            double* o = tape.grad_buffer(pu).ptr(2 * r);
            o[0] += g_ctrl(0);
            o[1] += g_ctrl(1);
          }
          if (tape.requires_grad(pc)) {
            const MatX gcov = lin.a.transpose() * gc * lin.a;
            double* o = tape.grad_buffer(pc).ptr(r * d * d);
            for (Eigen::Index i = 0; i < n; ++i) {
              for (Eigen::Index j = 0; j < n; ++j) o[i * n + j] += gcov(i, j);
            }
          }
          if (tape.requires_grad(pcu)) {
            const MatX gcu = lin.b.transpose() * gc * lin.b;
            double* o = tape.grad_buffer(pcu).ptr(4 * r);
            o[0] += gcu(0, 0);
            o[1] += gcu(0, 1);
            o[2] += gcu(1, 0);
            o[3] += gcu(1, 1);
          }
        }
      });
}

}  // namespace utraj::ad
