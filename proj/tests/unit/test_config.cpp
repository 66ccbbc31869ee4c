#include <gtest/gtest.h>

#include "utraj/config.hpp"

using namespace utraj;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "accepted: " << text;
  return {};
}

}  // namespace

TEST(Config, Defaults) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.sim.train_count, 250);
  EXPECT_EQ(c.sim.val_count, 75);
  EXPECT_EQ(c.sim.test_count, 50);
  EXPECT_EQ(c.model.latent_size, 25);
  EXPECT_EQ(c.model.loss_mode, model::LossMode::Composite);
  EXPECT_EQ(c.train.epochs, 30);
  EXPECT_EQ(c.train_covariance, "synthetic");
  EXPECT_EQ(c.eval.horizon_steps, (std::vector<int>{2, 4, 6, 8}));
  EXPECT_EQ(c.out, "out");
}

TEST(Config, OverridesAndSeedPropagation) {
  const RunConfig c = parse_config(R"(
seed = 42
[sim]
n_agents = 4
dt = 0.2
[sim.cov_gen]
base_var_mean = 0.5
[model]
agent_type = "pedestrian"
lambda_sd = 2.5
horizon = 6
[train]
epochs = 3
lr = 0.01
covariance = "filter"
[eval]
horizon_steps = [1, 3, 6]
fde_mode = "top_mode"
esv_mode = "any_mode"
[paths]
out = "results"
)");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.sim.seed, 42u);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.sim.n_agents, 4);
  EXPECT_EQ(c.model.dt, 0.2);  // follows sim.dt
  EXPECT_EQ(c.sim.cov_gen.base_var_mean, 0.5);
  EXPECT_EQ(c.model.agent_type, AgentType::Pedestrian);
  EXPECT_EQ(c.model.lambda_sd, 2.5);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.adam.lr, 0.01);
  EXPECT_EQ(c.train_covariance, "filter");
  EXPECT_EQ(c.eval.fde_mode, metrics::FdeMode::TopMode);
  EXPECT_EQ(c.eval.esv_mode, metrics::EsvMode::AnyMode);
  EXPECT_EQ(c.out, "results");

  RunConfig d = c;
  d.set_seed(7);
  EXPECT_EQ(d.sim.seed, 7u);
  EXPECT_EQ(d.train.seed, 7u);
}

TEST(Config, UnknownKeysNamed) {
  EXPECT_NE(config_error("[sim]\nfoo = 1\n").find("sim.foo"), std::string::npos);
  EXPECT_NE(config_error("bogus = 1\n").find("bogus"), std::string::npos);
  EXPECT_NE(config_error("[sim.cov_gen]\nmean = 1.0\n").find("sim.cov_gen.mean"), std::string::npos);
  EXPECT_NE(config_error("[optimizer]\nlr = 1\n").find("optimizer"), std::string::npos);
}

TEST(Config, TypeAndValueErrors) {
  EXPECT_NE(config_error("[sim]\nn_agents = \"three\"\n").find("sim.n_agents"), std::string::npos);
  EXPECT_NE(config_error("[sim]\ndt = \"x\"\n").find("sim.dt"), std::string::npos);
  EXPECT_NE(config_error("seed = -1\n").find("seed"), std::string::npos);
  EXPECT_NE(config_error("sim = 3\n").find("sim"), std::string::npos);
  config_error("[model]\nagent_type = \"robot\"\n");
  config_error("[sim]\ndt = -0.1\n");
  config_error("[model]\ndt = 0.2\n");
  config_error("[train]\ncovariance = \"gt\"\n");
  config_error("[train]\nepochs = 0\n");
  config_error("[eval]\nfde_mode = \"median\"\n");
  const std::string syntax = config_error("[sim\n");
  EXPECT_NE(syntax.find("<config>:1"), std::string::npos) << syntax;
  EXPECT_THROW(parse_config("[eval]\nhorizon_steps = [9]\n"), Error);
  EXPECT_THROW(load_config("/nonexistent/run.toml"), Error);
}

TEST(Config, FilterSectionCoversEveryType) {
  const auto fc = filter_configs(FilterSection{}, 0.1);
  EXPECT_EQ(fc.size(), 3u);
  EXPECT_EQ(fc.at(AgentType::Vehicle).process_noise_std.size(), 4);
  EXPECT_EQ(fc.at(AgentType::Pedestrian).meas_noise_std, 0.1);
}
