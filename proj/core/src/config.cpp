#include "utraj/config.hpp"

#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "utraj/io.hpp"

namespace utraj {

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

class Section {
 public:
  Section(const toml::table* table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  void number(const char* key, double& out) {
    if (const auto* n = find(key)) {
      if (auto v = n->value<double>(); v && n->is_number()) {
        out = *v;
      } else {
        bad_type(key, "a number");
      }
    }
  }

  template <typename Int>
  void integer(const char* key, Int& out) {
    if (const auto* n = find(key)) {
      if (!n->is_integer()) bad_type(key, "an integer");
      const std::int64_t v = *n->value<std::int64_t>();
      if constexpr (std::is_unsigned_v<Int>) {
        if (v < 0) config_error("config key '" + full(key) + "' must be non-negative");
      }
      out = static_cast<Int>(v);
    }
  }

  void string(const char* key, std::string& out) {
    if (const auto* n = find(key)) {
      if (!n->is_string()) bad_type(key, "a string");
      out = *n->value<std::string>();
    }
  }

  void int_list(const char* key, std::vector<int>& out) {
    if (const auto* n = find(key)) {
      const auto* arr = n->as_array();
      if (!arr) bad_type(key, "an array of integers");
      out.clear();
      for (const auto& e : *arr) {
        if (!e.is_integer()) bad_type(key, "an array of integers");
        out.push_back(static_cast<int>(*e.value<std::int64_t>()));
      }
    }
  }

  Section sub(const char* key) {
    const auto* n = find(key);
    if (n && !n->is_table()) bad_type(key, "a table");
    return {n ? n->as_table() : nullptr, full(key)};
  }

  void reject_unknown() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!used_.count(std::string(k.str()))) config_error("unknown config key '" + full(k.str()) + "'");
    }
  }

 private:
  const toml::node* find(const char* key) {
    used_.insert(key);
    return table_ ? table_->get(key) : nullptr;
  }
  [[nodiscard]] std::string full(std::string_view key) const {
    return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key);
  }
  [[noreturn]] void bad_type(const char* key, const char* what) const {
    config_error("config key '" + full(key) + "' must be " + what);
  }

  const toml::table* table_;
  std::string prefix_;
  std::set<std::string> used_;
};

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  sim.seed = s;
  train.seed = s;
}

void RunConfig::validate() const {
  sim.validate();
  sim.cov_gen.validate();
  model.validate();
  eval.validate(model.horizon);
  if (!(filter.meas_noise_std > 0.0) || filter.accel_std < 0.0 || filter.yaw_rate_std < 0.0) {
    config_error("filter noise levels must be positive");
  }
  if (train.epochs < 1 || train.batch_size < 1 || train.windows_per_track < 1 || train.val_stride < 1) {
    config_error("train.epochs, batch_size, windows_per_track and val_stride must be >= 1");
  }
  if (!(train.adam.lr > 0.0)) config_error("train.lr must be positive");
  if (train_covariance != "synthetic" && train_covariance != "filter") {
    config_error("train.covariance must be \"synthetic\" or \"filter\"");
  }
  if (!(cov_scale > 0.0)) config_error("train.cov_scale must be positive");
  if (figures < 0) config_error("eval.figures must be >= 0");
  if (std::abs(model.dt - sim.dt) > 1e-12) config_error("model.dt must equal sim.dt");
}

RunConfig parse_config(std::string_view toml_text, std::string_view source) {
  toml::table doc;
  try {
    doc = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    config_error(msg.str());
  }

  RunConfig c;
  Section root(&doc, "");
  std::uint64_t seed = 0;
  root.integer("seed", seed);
  c.set_seed(seed);

  {
    Section s = root.sub("sim");
    s.integer("n_agents", c.sim.n_agents);
    s.number("dt", c.sim.dt);
    s.number("duration_s", c.sim.duration_s);
    s.integer("train_count", c.sim.train_count);
    s.integer("val_count", c.sim.val_count);
    s.integer("test_count", c.sim.test_count);
    s.number("repulsion_strength", c.sim.repulsion_strength);
    s.number("repulsion_range", c.sim.repulsion_range);
    s.number("damping", c.sim.damping);
    s.number("init_position_range", c.sim.init_position_range);
    s.number("init_speed_min", c.sim.init_speed_min);
    s.number("init_speed_max", c.sim.init_speed_max);
    Section g = s.sub("cov_gen");
    g.number("base_var_mean", c.sim.cov_gen.base_var_mean);
    g.number("base_var_std", c.sim.cov_gen.base_var_std);
    g.number("step_noise_std", c.sim.cov_gen.step_noise_std);
    g.number("var_min", c.sim.cov_gen.var_min);
    g.reject_unknown();
    s.reject_unknown();
  }
  {
    Section s = root.sub("filter");
    s.number("meas_noise_std", c.filter.meas_noise_std);
    s.number("accel_std", c.filter.accel_std);
    s.number("yaw_rate_std", c.filter.yaw_rate_std);
    s.reject_unknown();
  }
  {
    Section s = root.sub("model");
    std::string type(to_string(c.model.agent_type));
    s.string("agent_type", type);
    try {
      c.model.agent_type = agent_type_from_string(type);
    } catch (const Error& e) {
      config_error("config key 'model.agent_type': " + std::string(e.what()));
    }
    c.model.dt = c.sim.dt;
    s.number("dt", c.model.dt);
    s.integer("history_len", c.model.history_len);
    s.integer("horizon", c.model.horizon);
    s.integer("latent_size", c.model.latent_size);
    s.integer("hist_hidden", c.model.hist_hidden);
    s.integer("edge_hidden", c.model.edge_hidden);
    s.integer("dec_hidden", c.model.dec_hidden);
    s.integer("q_hidden", c.model.q_hidden);
    s.number("beta", c.model.beta);
    s.number("lambda_sd", c.model.lambda_sd);
    s.number("alpha_info", c.model.alpha_info);
    s.reject_unknown();
  }
  {
    Section s = root.sub("train");
    s.integer("epochs", c.train.epochs);
    s.integer("batch_size", c.train.batch_size);
    s.integer("windows_per_track", c.train.windows_per_track);
    s.integer("val_stride", c.train.val_stride);
    s.number("lr", c.train.adam.lr);
    s.number("clip_norm", c.train.adam.clip_norm);
    s.string("covariance", c.train_covariance);
    s.number("cov_scale", c.cov_scale);
    s.reject_unknown();
  }
  {
    Section s = root.sub("eval");
    s.int_list("horizon_steps", c.eval.horizon_steps);
    s.integer("stride", c.eval.stride);
    std::string fde = c.eval.fde_mode == metrics::FdeMode::MixtureMean ? "mixture_mean" : "top_mode";
    std::string esv = c.eval.esv_mode == metrics::EsvMode::TopMode ? "top_mode" : "any_mode";
    s.string("fde_mode", fde);
    s.string("esv_mode", esv);
    c.eval.fde_mode = metrics::fde_mode_from_string(fde);
    c.eval.esv_mode = metrics::esv_mode_from_string(esv);
    s.integer("figures", c.figures);
    s.reject_unknown();
  }
  {
    Section s = root.sub("paths");
    s.string("out", c.out);
    s.reject_unknown();
  }
  root.reject_unknown();

  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const Error& e) {
    config_error(e.what());
  }
  return parse_config(text, path.string());
}

filters::FilterConfigs filter_configs(const FilterSection& section, double dt) {
  filters::FilterConfigs out;
  for (AgentType type : {AgentType::Particle, AgentType::Pedestrian, AgentType::Vehicle}) {
    filters::FilterConfig f = filters::default_filter_config(type, dt);
    f.meas_noise_std = section.meas_noise_std;
    if (type == AgentType::Vehicle) {
      f.process_noise_std << 0.5 * dt * dt * section.accel_std, 0.5 * dt * dt * section.accel_std,
          dt * section.yaw_rate_std, dt * section.accel_std;
    } else {
      f.process_noise_std = filters::constant_velocity_process_std(dt, section.accel_std);
    }
    out[type] = f;
  }
  return out;
}

}  // namespace utraj
