#include "utraj/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "utraj/autodiff_nodes.hpp"

namespace utraj::model {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::NllOnly: return "nll";
    case LossMode::SdOnly: return "sd";
    case LossMode::Composite: return "composite";
  }
  return "unknown";
}

LossMode loss_mode_from_string(std::string_view name) {
  if (name == "nll" || name == "NllOnly" || name == "nll_only") return LossMode::NllOnly;
  if (name == "sd" || name == "SdOnly" || name == "sd_only") return LossMode::SdOnly;
  if (name == "composite" || name == "Composite") return LossMode::Composite;
  throw Error(ErrorCode::ConfigError, "unknown loss mode '" + std::string(name) + "'");
}

RadiusTable default_radius_table() {
  RadiusTable t;
  for (AgentType a : kAllAgentTypes) {
    for (AgentType b : kAllAgentTypes) {
      t[{a, b}] = (a == AgentType::Vehicle || b == AgentType::Vehicle) ? 10.0 : 3.0;
    }
  }
  return t;
}

void ModelConfig::validate() const {
  if (!(dt > 0.0)) throw Error(ErrorCode::ConfigError, "model.dt must be positive");
  if (history_len < 1 || horizon < 1) throw Error(ErrorCode::ConfigError, "history_len and horizon must be >= 1");
  if (latent_size < 1) throw Error(ErrorCode::ConfigError, "latent_size must be >= 1");
  if (hist_hidden < 1 || edge_hidden < 1 || dec_hidden < 1 || q_hidden < 1) {
    throw Error(ErrorCode::ConfigError, "hidden sizes must be >= 1");
  }
  if (lambda_sd < 0.0 || beta < 0.0 || alpha_info < 0.0) {
    throw Error(ErrorCode::ConfigError, "loss weights must be nonnegative");
  }
  for (AgentType a : kAllAgentTypes) {
    for (AgentType b : kAllAgentTypes) {
      auto it = edge_radius.find({a, b});
      if (it == edge_radius.end()) {
        throw Error(ErrorCode::MissingRadiusEntry, "edge radius missing for (" + std::string(to_string(a)) + ", " +
                                                       std::string(to_string(b)) + ")");
      }
      if (!(it->second >= 0.0)) throw Error(ErrorCode::ConfigError, "edge radius must be >= 0");
    }
  }
}

dynamics::DynamicsModel ModelConfig::dynamics() const { return dynamics::model_for(agent_type, dt); }

// ---------------------------------------------------------------------------
// Scene graph

namespace {

Vec2 position_at(const AgentTrack& a, int step) {
  if (!a.tracked.empty()) return a.tracked_at(step).state.head<2>();
  return a.gt_at(step).position;
}

/// World-frame velocity from a tracked state (constant-velocity or bicycle layout).
Vec2 velocity_at(const AgentTrack& a, int step) {
  if (a.tracked.empty()) return a.gt_at(step).velocity;
  const TrackedState& s = a.tracked_at(step);
  if (s.agent_type == AgentType::Vehicle) return s.state(3) * Vec2(std::cos(s.state(2)), std::sin(s.state(2)));
  return s.state.segment<2>(2);
}

Mat2 position_cov_at(const AgentTrack& a, int step) {
  if (a.tracked.empty()) return Mat2::Zero();
  return a.tracked_at(step).cov.topLeftCorner<2, 2>();
}

}  // namespace

std::vector<Edge> build_graph(const Scene& scene, int step, const RadiusTable& radius) {
  std::vector<Edge> edges;
  const std::size_t n = scene.agents.size();
  for (std::size_t i = 0; i < n; ++i) {
    const AgentTrack& a = scene.agents[i];
    if (!a.covers(step)) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const AgentTrack& b = scene.agents[j];
      if (i == j || !b.covers(step)) continue;
      auto it = radius.find({a.type, b.type});
      if (it == radius.end()) {
        throw Error(ErrorCode::MissingRadiusEntry, "no radius for (" + std::string(to_string(a.type)) + ", " +
                                                       std::string(to_string(b.type)) + ")");
      }
      if ((position_at(a, step) - position_at(b, step)).norm() <= it->second) edges.push_back({i, j});
    }
  }
  return edges;
}

// ---------------------------------------------------------------------------
// Frames and windows

Mat2 Frame::rotation() const {
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

Vec2 Frame::to_local(const Vec2& world) const { return rotation().transpose() * (world - origin); }
Vec2 Frame::to_world(const Vec2& local) const { return rotation() * local + origin; }
Mat2 Frame::cov_to_local(const Mat2& world) const {
  const Mat2 r = rotation();
  return r.transpose() * world * r;
}
Mat2 Frame::cov_to_world(const Mat2& local) const {
  const Mat2 r = rotation();
  return r * local * r.transpose();
}

namespace {

void require_tracked(const AgentTrack& a) {
  if (a.tracked.size() != a.gt.size()) {
    throw Error(ErrorCode::InvalidArgument,
                "agent " + std::to_string(a.agent_id) + " has no tracked states; run tracking first");
  }
  if (!a.tracked.empty() && a.tracked.front().state.size() != kTrackedDim) {
    throw Error(ErrorCode::DimensionMismatch, "tracked states must have " + std::to_string(kTrackedDim) + " entries");
  }
}

/// Tracked state and covariance in the local frame.
std::pair<VecX, MatX> local_tracked(const TrackedState& s, const Frame& f) {
  MatX t = MatX::Identity(kTrackedDim, kTrackedDim);
  const Mat2 rt = f.rotation().transpose();
  t.topLeftCorner<2, 2>() = rt;
  VecX x = s.state;
  x.head<2>() = f.to_local(s.state.head<2>());
  if (s.agent_type == AgentType::Vehicle) {
    x(2) = wrap_angle(s.state(2) - f.heading);
  } else {
    t.block<2, 2>(2, 2) = rt;
    x.segment<2>(2) = rt * s.state.segment<2>(2);
  }
  return {x, symmetrize(MatX(t * s.cov * t.transpose()))};
}

}  // namespace

Window make_window(const Scene& scene, std::size_t agent_index, int step, const ModelConfig& config) {
  const AgentTrack& agent = scene.agents.at(agent_index);
  require_tracked(agent);
  if (!agent.covers(step)) {
    throw Error(ErrorCode::InvalidArgument, "agent " + std::to_string(agent.agent_id) + " absent at step " +
                                                std::to_string(step));
  }
  const TrackedState& now = agent.tracked_at(step);
  Window w;
  w.agent_index = agent_index;
  w.agent_id = agent.agent_id;
  w.step = step;
  w.frame.origin = now.state.head<2>();
  w.frame.heading = agent.type == AgentType::Vehicle ? now.state(2) : 0.0;

  const int h = config.history_len;
  w.history.assign(static_cast<std::size_t>((h + 1) * kHistoryFeatures), 0.0);
  w.edges.assign(static_cast<std::size_t>((h + 1) * kEdgeFeatures), 0.0);
  for (int k = 0; k <= h; ++k) {
    const int tau = step - h + k;
    if (!agent.covers(tau)) continue;
    double* row = &w.history[static_cast<std::size_t>(k * kHistoryFeatures)];
    const auto [x, c] = local_tracked(agent.tracked_at(tau), w.frame);
    int col = 0;
    for (int i = 0; i < kTrackedDim; ++i) row[col++] = x(i);
    for (int i = 0; i < kTrackedDim; ++i) {
      for (int j = i; j < kTrackedDim; ++j) row[col++] = c(i, j);
    }
    row[col] = 1.0;

    double* e = &w.edges[static_cast<std::size_t>(k * kEdgeFeatures)];
    const Vec2 p_self = position_at(agent, tau);
    const Vec2 v_self = velocity_at(agent, tau);
    const Mat2 rt = w.frame.rotation().transpose();
    for (const Edge& edge : build_graph(scene, tau, config.edge_radius)) {
      if (edge.from != agent_index) continue;
      const AgentTrack& other = scene.agents[edge.to];
      const Vec2 dp = rt * (position_at(other, tau) - p_self);
      const Vec2 dv = rt * (velocity_at(other, tau) - v_self);
      const Mat2 pc = w.frame.cov_to_local(position_cov_at(other, tau));
      e[0] += dp(0);
      e[1] += dp(1);
      e[2] += dv(0);
      e[3] += dv(1);
      e[4] += pc(0, 0);
      e[5] += pc(0, 1);
      e[6] += pc(1, 1);
    }
  }

  const auto model = config.dynamics();
  const auto [x_now, c_now] = local_tracked(now, w.frame);
  (void)c_now;
  switch (model.kind) {
    case dynamics::DynamicsKind::SingleIntegrator:
      w.initial_state = x_now.head<2>();
      break;
    case dynamics::DynamicsKind::DoubleIntegrator:
    case dynamics::DynamicsKind::Bicycle:
      w.initial_state = x_now;
      break;
  }

  if (step + config.horizon <= agent.last_step()) {
    for (int k = 1; k <= config.horizon; ++k) {
      w.future.push_back(w.frame.to_local(agent.gt_at(step + k).position));
      w.future_cov.push_back(symmetrize(w.frame.cov_to_local(position_cov_at(agent, step + k))));
    }
  }
  return w;
}

std::vector<Window> extract_windows(const Scene& scene, const ModelConfig& config, int stride) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  std::vector<Window> out;
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    const AgentTrack& a = scene.agents[i];
    if (a.type != config.agent_type || a.gt.empty()) continue;
    for (int t = a.first_step() + 1; t + config.horizon <= a.last_step(); t += stride) {
      out.push_back(make_window(scene, i, t, config));
    }
  }
  return out;
}

Scene scale_tracked_covariances(const Scene& scene, double factor) {
  Scene out = scene;
  for (auto& a : out.agents) {
    for (auto& s : a.tracked) s.cov *= factor;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

struct Dims {
  std::size_t h, t, k, hh, eh, dh, qh, d, ex;
};

Dims dims_of(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.dynamics().state_dim());
  return {static_cast<std::size_t>(c.history_len), static_cast<std::size_t>(c.horizon),
          static_cast<std::size_t>(c.latent_size), static_cast<std::size_t>(c.hist_hidden),
          static_cast<std::size_t>(c.edge_hidden), static_cast<std::size_t>(c.dec_hidden),
          static_cast<std::size_t>(c.q_hidden), d,
          static_cast<std::size_t>(c.hist_hidden + c.edge_hidden)};
}

}  // namespace

Forecaster::Forecaster(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  init_parameters(seed);
}

void Forecaster::init_parameters(std::uint64_t seed) {
  const Dims n = dims_of(config_);
  std::mt19937_64 rng(seed);
  auto uniform = [&](const std::string& name, std::size_t rows, std::size_t cols, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.data()) v = u(rng);
    params_.add(name, std::move(t));
  };
  auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    uniform(name, rows, cols, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  };
  auto bias = [&](const std::string& name, std::size_t size, double value = 0.0) {
    params_.add(name, Tensor(ad::Shape{size}, value));
  };
  auto lstm = [&](const std::string& p, std::size_t in, std::size_t hidden) {
    weight(p + ".w_input", in, 4 * hidden, hidden);
    weight(p + ".w_hidden", hidden, 4 * hidden, hidden);
    Tensor b(ad::Shape{4 * hidden});
    for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;  // forget gate
    params_.add(p + ".bias", std::move(b));
  };

  lstm("hist", kHistoryFeatures, n.hh);
  lstm("edge", kEdgeFeatures, n.eh);
  weight("p.w", n.ex, n.k, n.ex);
  bias("p.b", n.k);
  lstm("q.fwd", 2, n.qh);
  lstm("q.bwd", 2, n.qh);
  weight("q.w", n.ex + 2 * n.qh, n.k, n.ex + 2 * n.qh);
  bias("q.b", n.k);
  const std::size_t dec_in = n.ex + n.k + n.d;
  weight("dec.init.w_ex", n.ex, n.dh, n.ex + n.k);
  weight("dec.init.w_z", n.k, n.dh, n.ex + n.k);
  bias("dec.init.b", n.dh);
  weight("dec.gru.w_ex", n.ex, 3 * n.dh, dec_in);
  weight("dec.gru.w_z", n.k, 3 * n.dh, dec_in);
  weight("dec.gru.w_state", n.d, 3 * n.dh, dec_in);
  bias("dec.gru.b_input", 3 * n.dh);
  weight("dec.gru.w_hidden", n.dh, 3 * n.dh, n.dh);
  bias("dec.gru.b_hidden", 3 * n.dh);
  uniform("dec.out.w", n.dh, 5, 0.1 / std::sqrt(static_cast<double>(n.dh)));
  bias("dec.out.b", 5);
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

class Binder {
 public:
  Binder(ad::Tape& tape, const ad::ParameterStore& params, ad::ParameterStore* trainable)
      : tape_(tape), params_(params), trainable_(trainable) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = trainable_ != nullptr ? tape_.parameter(trainable_->at(name)) : tape_.constant(params_.at(name).value);
    bound_.emplace(name, v);
    return v;
  }

  ad::LstmWeights lstm(const std::string& p) { return {(*this)(p + ".w_input"), (*this)(p + ".w_hidden"), (*this)(p + ".bias")}; }

 private:
  ad::Tape& tape_;
  const ad::ParameterStore& params_;
  ad::ParameterStore* trainable_;
  std::map<std::string, Var> bound_;
};

Var run_lstm(ad::Tape& tape, const std::vector<Tensor>& inputs, std::size_t batch, std::size_t hidden,
             const ad::LstmWeights& w) {
  ad::LstmState s{tape.constant(Tensor::matrix(batch, hidden)), tape.constant(Tensor::matrix(batch, hidden))};
  for (const Tensor& x : inputs) s = ad::lstm_cell(tape.constant(x), s, w);
  return s.h;
}

/// GRU step with the input-side gate pre-activations already computed.
Var gru_from_gates(const Var& gx, const Var& h, const Var& w_hidden, const Var& b_hidden, std::size_t hidden) {
  const Var gh = ad::affine(h, w_hidden, b_hidden);
  const Var r = ad::sigmoid(ad::slice(gx, 1, 0, hidden) + ad::slice(gh, 1, 0, hidden));
  const Var z = ad::sigmoid(ad::slice(gx, 1, hidden, 2 * hidden) + ad::slice(gh, 1, hidden, 2 * hidden));
  const Var n = ad::tanh(ad::slice(gx, 1, 2 * hidden, 3 * hidden) + r * ad::slice(gh, 1, 2 * hidden, 3 * hidden));
  return n + z * (h - n);
}

}  // namespace

ForwardResult Forecaster::forward(ad::Tape& tape, std::span<const Window* const> batch, bool with_loss,
                                  bool trainable) {
  return run(tape, batch, with_loss, trainable ? &params_ : nullptr);
}

ForwardResult Forecaster::run(ad::Tape& tape, std::span<const Window* const> batch, bool with_loss,
                              ad::ParameterStore* trainable) const {
  if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "empty batch");
  const Dims n = dims_of(config_);
  const std::size_t b = batch.size();
  const std::size_t rows = b * n.k;
  const double inv_b = 1.0 / static_cast<double>(b);
  Binder P(tape, params_, trainable);

  // Encoder.
  std::vector<Tensor> hist_in(n.h + 1, Tensor::matrix(b, kHistoryFeatures));
  std::vector<Tensor> edge_in(n.h + 1, Tensor::matrix(b, kEdgeFeatures));
  for (std::size_t i = 0; i < b; ++i) {
    const Window& w = *batch[i];
    if (w.history.size() != (n.h + 1) * kHistoryFeatures || w.edges.size() != (n.h + 1) * kEdgeFeatures ||
        static_cast<std::size_t>(w.initial_state.size()) != n.d) {
      throw Error(ErrorCode::ShapeMismatch, "window does not match the model configuration");
    }
    for (std::size_t k = 0; k <= n.h; ++k) {
      std::copy_n(&w.history[k * kHistoryFeatures], kHistoryFeatures, &hist_in[k][i * kHistoryFeatures]);
      std::copy_n(&w.edges[k * kEdgeFeatures], kEdgeFeatures, &edge_in[k][i * kEdgeFeatures]);
    }
  }
  const Var h_hist = run_lstm(tape, hist_in, b, n.hh, P.lstm("hist"));
  const Var h_edge = run_lstm(tape, edge_in, b, n.eh, P.lstm("edge"));
  const Var ex = ad::concat({h_hist, h_edge}, 1);

  ForwardResult out;
  out.log_p = ad::log_softmax(ad::affine(ex, P("p.w"), P("p.b")));

  if (with_loss) {
    std::vector<Tensor> fut(n.t, Tensor::matrix(b, 2));
    for (std::size_t i = 0; i < b; ++i) {
      if (batch[i]->future.size() != n.t) throw Error(ErrorCode::HorizonMismatch, "window lacks a full future");
      for (std::size_t t = 0; t < n.t; ++t) {
        fut[t][2 * i] = batch[i]->future[t](0);
        fut[t][2 * i + 1] = batch[i]->future[t](1);
      }
    }
    const Var hf = run_lstm(tape, fut, b, n.qh, P.lstm("q.fwd"));
    std::vector<Tensor> rev(fut.rbegin(), fut.rend());
    const Var hb = run_lstm(tape, rev, b, n.qh, P.lstm("q.bwd"));
    out.log_q = ad::log_softmax(ad::affine(ad::concat({ex, hf, hb}, 1), P("q.w"), P("q.b")));
  }

  // Decoder over all B*K (window, mode) rows.
  Tensor onehot = Tensor::matrix(rows, n.k);
  Tensor s0 = Tensor::matrix(rows, n.d);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < n.k; ++k) {
      onehot.at(i * n.k + k, k) = 1.0;
      for (std::size_t j = 0; j < n.d; ++j) s0.at(i * n.k + k, j) = batch[i]->initial_state(static_cast<Eigen::Index>(j));
    }
  }
  const Var z = tape.constant(std::move(onehot));
  Var h = ad::tanh(ad::repeat_rows(ad::affine(ex, P("dec.init.w_ex"), P("dec.init.b")), n.k) +
                   ad::matmul(z, P("dec.init.w_z")));
  const Var gx_const = ad::repeat_rows(ad::affine(ex, P("dec.gru.w_ex"), P("dec.gru.b_input")), n.k) +
                       ad::matmul(z, P("dec.gru.w_z"));
  const Var w_state = P("dec.gru.w_state");
  const Var w_hidden = P("dec.gru.w_hidden");
  const Var b_hidden = P("dec.gru.b_hidden");
  const Var w_out = P("dec.out.w");
  const Var b_out = P("dec.out.b");

  const auto model = config_.dynamics();
  Var state = tape.constant(std::move(s0));
  Var cov = tape.constant(Tensor::matrix(rows, n.d * n.d));
  const std::size_t pos_cols[4] = {0, 1, n.d, n.d + 1};
  for (std::size_t t = 0; t < n.t; ++t) {
    h = gru_from_gates(gx_const + ad::matmul(state, w_state), h, w_hidden, b_hidden, n.dh);
    const Var params = ad::affine(h, w_out, b_out);
    const Var next = ad::propagate(model, state, cov, ad::slice(params, 1, 0, 2),
                                   ad::cov2_from_params(ad::slice(params, 1, 2, 5)));
    state = ad::slice(next, 1, 0, n.d);
    cov = ad::slice(next, 1, n.d, n.d + n.d * n.d);
    out.ctrl_params.push_back(params);
    out.pos_means.push_back(ad::slice(state, 1, 0, 2));
    out.pos_covs.push_back(ad::select_cols(cov, pos_cols));
  }

  if (!with_loss) return out;

  // Loss: exact expectation over the K modes under q.
  Var nll_sum, sd_sum;
  for (std::size_t t = 0; t < n.t; ++t) {
    Tensor target = Tensor::matrix(rows, 2);
    Tensor target_cov = Tensor::matrix(rows, 4);
    for (std::size_t i = 0; i < b; ++i) {
      const Vec2& y = batch[i]->future[t];
      const Mat2& c = batch[i]->future_cov[t];
      for (std::size_t k = 0; k < n.k; ++k) {
        const std::size_t r = i * n.k + k;
        target[2 * r] = y(0);
        target[2 * r + 1] = y(1);
        target_cov[4 * r] = c(0, 0);
        target_cov[4 * r + 1] = c(0, 1);
        target_cov[4 * r + 2] = c(1, 0);
        target_cov[4 * r + 3] = c(1, 1);
      }
    }
    const Var nll_t = ad::gaussian2_nll_rows(out.pos_means[t], out.pos_covs[t], target);
    const Var sd_t = ad::bhattacharyya_rows(out.pos_means[t], out.pos_covs[t], target, target_cov);
    nll_sum = t == 0 ? nll_t : nll_sum + nll_t;
    sd_sum = t == 0 ? sd_t : sd_sum + sd_t;
  }

  const Var q = ad::exp(out.log_q);  // [B, K]
  const Var q_rows = ad::reshape(q, ad::Shape{rows, 1});
  const Var nll_term = ad::scale(ad::sum(q_rows * nll_sum), inv_b);
  const Var sd_term = ad::scale(ad::sum(q_rows * sd_sum), inv_b);
  const Var kl = ad::scale(ad::sum(q * (out.log_q - out.log_p)), inv_b);
  const Var q_bar = ad::matmul(tape.constant(Tensor::matrix(1, b, inv_b)), q);
  const Var entropy_bar = -ad::sum(q_bar * ad::log(ad::add_scalar(q_bar, 1e-12)));
  const Var entropy_mean = ad::scale(ad::sum(q * out.log_q), -inv_b);
  const Var info = entropy_bar - entropy_mean;

  Var loss = ad::scale(kl, config_.beta) - ad::scale(info, config_.alpha_info);
  switch (config_.loss_mode) {
    case LossMode::NllOnly: loss = nll_term + loss; break;
    case LossMode::SdOnly: loss = ad::scale(sd_term, config_.lambda_sd) + loss; break;
    case LossMode::Composite: loss = nll_term + ad::scale(sd_term, config_.lambda_sd) + loss; break;
  }
  out.loss = loss;
  out.terms = {loss.value().item(), nll_term.value().item(), sd_term.value().item(), kl.value().item(),
               info.value().item()};
  return out;
}

std::vector<double> Forecaster::encode(const Window& window) const {
  const Dims n = dims_of(config_);
  if (window.history.size() != (n.h + 1) * kHistoryFeatures || window.edges.size() != (n.h + 1) * kEdgeFeatures) {
    throw Error(ErrorCode::ShapeMismatch, "window does not match the model configuration");
  }
  ad::Tape t2;
  Binder P(t2, params_, nullptr);
  std::vector<Tensor> hist_in(n.h + 1, Tensor::matrix(1, kHistoryFeatures));
  std::vector<Tensor> edge_in(n.h + 1, Tensor::matrix(1, kEdgeFeatures));
  for (std::size_t k = 0; k <= n.h; ++k) {
    std::copy_n(&window.history[k * kHistoryFeatures], kHistoryFeatures, hist_in[k].data().data());
    std::copy_n(&window.edges[k * kEdgeFeatures], kEdgeFeatures, edge_in[k].data().data());
  }
  const Var hh = run_lstm(t2, hist_in, 1, n.hh, P.lstm("hist"));
  const Var he = run_lstm(t2, edge_in, 1, n.eh, P.lstm("edge"));
  std::vector<double> ex = hh.value().to_vector();
  ex.insert(ex.end(), he.value().data().begin(), he.value().data().end());
  return ex;
}

Forecaster::LatentDists Forecaster::latent_dists(const Window& window) const {
  ad::Tape tape;
  const Window* batch[] = {&window};
  const bool has_future = window.future.size() == static_cast<std::size_t>(config_.horizon);
  ForwardResult r = run(tape, batch, has_future, nullptr);
  LatentDists d;
  for (double v : r.log_p.value().data()) d.p.push_back(std::exp(v));
  if (has_future) {
    for (double v : r.log_q.value().data()) d.q.push_back(std::exp(v));
  }
  return d;
}

LossTerms Forecaster::evaluate_loss(std::span<const Window* const> batch) const {
  ad::Tape tape;
  return run(tape, batch, true, nullptr).terms;
}

namespace {

/// Position covariances with a vanishing eigenvalue are floored by kEpsReg
/// so that the mixture components stay valid densities.
Mat2 component_cov(const Mat2& c) {
  const Mat2 s = symmetrize(c);
  Eigen::SelfAdjointEigenSolver<Mat2> es(s, Eigen::EigenvaluesOnly);
  if (es.eigenvalues()(0) > kEpsPd) return s;
  return s + kEpsReg * Mat2::Identity();
}

}  // namespace

std::vector<Prediction> Forecaster::predict(std::span<const Window> windows) const {
  const Dims n = dims_of(config_);
  std::vector<Prediction> out;
  out.reserve(windows.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < windows.size(); start += kChunk) {
    const std::size_t end = std::min(windows.size(), start + kChunk);
    std::vector<const Window*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&windows[i]);
    ad::Tape tape;
    const ForwardResult r = run(tape, batch, false, nullptr);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Window& w = *batch[i];
      Prediction p;
      p.agent_id = w.agent_id;
      p.step = w.step;
      double total = 0.0;
      for (std::size_t k = 0; k < n.k; ++k) total += (p.weights.emplace_back(std::exp(r.log_p.value().at(i, k))));
      for (double& v : p.weights) v /= total;
      p.modes.resize(n.k);
      for (std::size_t k = 0; k < n.k; ++k) {
        const std::size_t row = i * n.k + k;
        ModePrediction& m = p.modes[k];
        for (std::size_t t = 0; t < n.t; ++t) {
          const Tensor& cp = r.ctrl_params[t].value();
          m.control_means.emplace_back(cp.at(row, 0), cp.at(row, 1));
          const double sx = std::exp(cp.at(row, 2));
          const double sy = std::exp(cp.at(row, 3));
          const double rho = std::tanh(cp.at(row, 4));
          Mat2 cu;
          cu << sx * sx, rho * sx * sy, rho * sx * sy, sy * sy;
          m.control_covs.push_back(cu);
          const Tensor& pm = r.pos_means[t].value();
          const Tensor& pc = r.pos_covs[t].value();
          m.position_means.push_back(w.frame.to_world(Vec2(pm.at(row, 0), pm.at(row, 1))));
          Mat2 c;
          c << pc.at(row, 0), pc.at(row, 1), pc.at(row, 2), pc.at(row, 3);
          m.position_covs.push_back(w.frame.cov_to_world(c));
        }
      }
      for (std::size_t t = 0; t < n.t; ++t) {
        std::vector<Gaussian2> comps;
        comps.reserve(n.k);
        for (std::size_t k = 0; k < n.k; ++k) {
          comps.emplace_back(p.modes[k].position_means[t], component_cov(p.modes[k].position_covs[t]));
        }
        p.steps.emplace_back(p.weights, std::move(comps));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

Prediction Forecaster::predict(const Window& window) const {
  return predict(std::span<const Window>(&window, 1)).front();
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json config_json(const ModelConfig& c) {
  json radius = json::array();
  for (const auto& [key, value] : c.edge_radius) {
    radius.push_back({std::string(to_string(key.first)), std::string(to_string(key.second)), value});
  }
  return {{"agent_type", std::string(to_string(c.agent_type))},
          {"dt", c.dt},
          {"history_len", c.history_len},
          {"horizon", c.horizon},
          {"latent_size", c.latent_size},
          {"hist_hidden", c.hist_hidden},
          {"edge_hidden", c.edge_hidden},
          {"dec_hidden", c.dec_hidden},
          {"q_hidden", c.q_hidden},
          {"edge_radius", radius},
          {"loss_mode", std::string(to_string(c.loss_mode))},
          {"beta", c.beta},
          {"lambda_sd", c.lambda_sd},
          {"alpha_info", c.alpha_info}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.agent_type = agent_type_from_string(j.at("agent_type").get<std::string>());
  c.dt = j.at("dt").get<double>();
  c.history_len = j.at("history_len").get<int>();
  c.horizon = j.at("horizon").get<int>();
  c.latent_size = j.at("latent_size").get<int>();
  c.hist_hidden = j.at("hist_hidden").get<int>();
  c.edge_hidden = j.at("edge_hidden").get<int>();
  c.dec_hidden = j.at("dec_hidden").get<int>();
  c.q_hidden = j.at("q_hidden").get<int>();
  c.edge_radius.clear();
  for (const auto& e : j.at("edge_radius")) {
    c.edge_radius[{agent_type_from_string(e.at(0).get<std::string>()),
                   agent_type_from_string(e.at(1).get<std::string>())}] = e.at(2).get<double>();
  }
  c.loss_mode = loss_mode_from_string(j.at("loss_mode").get<std::string>());
  c.beta = j.at("beta").get<double>();
  c.lambda_sd = j.at("lambda_sd").get<double>();
  c.alpha_info = j.at("alpha_info").get<double>();
  c.validate();
  return c;
}

template <typename F>
auto parse_guard(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig config_from_json(std::string_view text) {
  return parse_guard([&] { return config_from(json::parse(text)); });
}

std::string Forecaster::to_json() const {
  json params = json::object();
  for (const auto& [name, p] : params_) {
    json shape = json::array();
    for (std::size_t i = 0; i < p.value.shape().rank(); ++i) shape.push_back(p.value.shape()[i]);
    params[name] = {{"shape", shape}, {"values", p.value.to_vector()}};
  }
  json doc = {{"config", config_json(config_)}, {"parameters", params}};
  return doc.dump();
}

Forecaster Forecaster::from_json(std::string_view text) {
  return parse_guard([&] {
    const json doc = json::parse(text);
    Forecaster f(config_from(doc.at("config")));
    const json& params = doc.at("parameters");
    if (params.size() != f.params_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter count does not match the configuration");
    }
    for (auto& [name, p] : f.params_) {
      const json& entry = params.at(name);
      std::vector<double> values = entry.at("values").get<std::vector<double>>();
      if (values.size() != p.value.numel()) {
        throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter " + name + " has the wrong size");
      }
      p.value = Tensor(p.value.shape(), std::move(values));
      p.zero_grad();
    }
    return f;
  });
}

void Forecaster::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << to_json() << '\n';
}

Forecaster Forecaster::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

}  // namespace utraj::model
