#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "utraj/config.hpp"
#include "utraj/filters.hpp"
#include "utraj/io.hpp"
#include "utraj/metrics.hpp"
#include "utraj/model.hpp"
#include "utraj/parallel.hpp"
#include "utraj/sim.hpp"
#include "utraj/statdist.hpp"

namespace fs = std::filesystem;
using namespace utraj;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

const char* kSplits[] = {"train", "val", "test"};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::NotPositiveDefinite:
    case ErrorCode::SingularInnovationCovariance:
    case ErrorCode::AgentsCoincident:
      return kExitNumeric;
    default:
      return kExitUsage;
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;

  [[nodiscard]] RunConfig run_config() const {
    RunConfig c = config.empty() ? parse_config("") : load_config(config);
    if (seed) c.set_seed(*seed);
    return c;
  }
  [[nodiscard]] int thread_count() const { return resolve_threads(threads); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "TOML run configuration");
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--threads", c.threads, "worker cap (fallback: UNCERTAIN_TRAJ_THREADS, else 1)");
}

/// Scenes under dir/<split> when the split directory exists, else dir itself.
std::vector<Scene> load_split(const fs::path& dir, const char* split) {
  if (fs::is_directory(dir / split)) return io::load_scene_dir(dir / split);
  return io::load_scene_dir(dir);
}

void require_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "input directory not found: " + dir.string());
}

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& rc, const fs::path& out, int threads) {
  sim::SimConfig sc = rc.sim;
  sc.cov_gen = sc.cov_gen.scaled(rc.cov_scale);
  const sim::Dataset d = sim::build_dataset(sc, threads);
  io::save_scene_dir(d.train, out / "train");
  io::save_scene_dir(d.val, out / "val");
  io::save_scene_dir(d.test, out / "test");
  std::printf("train %zu val %zu test %zu scenes -> %s\n", d.train.size(), d.val.size(), d.test.size(),
              out.string().c_str());
  return kExitOk;
}

Scene track_one(const Scene& scene, AgentType type, const filters::FilterConfigs& fc, std::uint64_t seed,
                int threads) {
  Scene tracked = filters::track_scene(scene, fc, seed, threads);
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    if (scene.agents[i].type != type) tracked.agents[i] = scene.agents[i];
  }
  return tracked;
}

int cmd_track(const RunConfig& rc, const fs::path& in, const fs::path& out, AgentType type, double dt,
              int threads) {
  require_dir(in);
  std::vector<std::pair<fs::path, std::vector<Scene>>> groups;
  bool split_layout = false;
  for (const char* s : kSplits) split_layout = split_layout || fs::is_directory(in / s);
  if (split_layout) {
    for (const char* s : kSplits) {
      if (fs::is_directory(in / s)) groups.emplace_back(out / s, io::load_scene_dir(in / s));
    }
  } else {
    std::vector<Scene> scenes = io::load_scene_dir(in);
    std::vector<fs::path> txt;
    for (const auto& e : fs::directory_iterator(in)) {
      if (e.path().extension() == ".txt") txt.push_back(e.path());
    }
    std::sort(txt.begin(), txt.end());
    for (const auto& p : txt) scenes.push_back(io::load_trajectories(p, dt, type));
    groups.emplace_back(out, std::move(scenes));
  }

  double sq = 0.0;
  std::size_t n = 0;
  for (auto& [dir, scenes] : groups) {
    double group_dt = rc.sim.dt;
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      group_dt = scenes[k].dt;
      const auto fc = filter_configs(rc.filter, group_dt);
      scenes[k] = track_one(scenes[k], type, fc, mix_seed(rc.seed, 0x7AC4ull, k), threads);
      for (const auto& a : scenes[k].agents) {
        if (a.type != type) continue;
        for (std::size_t t = 0; t < a.gt.size(); ++t) {
          sq += (a.tracked[t].state.head<2>() - a.gt[t].position).squaredNorm();
          ++n;
        }
      }
    }
    io::save_scene_dir(scenes, dir);
    std::printf("tracked %zu scenes -> %s\n", scenes.size(), dir.string().c_str());
  }
  std::printf("position RMSE %.6f m over %zu samples\n", n ? std::sqrt(sq / static_cast<double>(n)) : 0.0, n);
  return kExitOk;
}

fs::path curves_path(const fs::path& ckpt) {
  fs::path p = ckpt;
  p.replace_extension();
  return p.string() + "_curves.csv";
}

int cmd_train(const RunConfig& rc, const fs::path& data, const fs::path& out) {
  require_dir(data);
  const auto train_set = load_split(data, "train");
  std::vector<Scene> val_set;
  if (fs::is_directory(data / "val")) val_set = io::load_scene_dir(data / "val");
  const model::TrainResult r = model::train(train_set, val_set, rc.model, rc.train, [](const model::EpochStats& e) {
    std::printf("epoch %3d %-5s loss %.6f nll %.6f sd %.6f kl %.6f\n", e.epoch, e.split.c_str(), e.terms.loss,
                e.terms.nll, e.terms.sd, e.terms.kl);
    std::fflush(stdout);
  });
  r.model.save(out);
  io::write_text(curves_path(out), model::curves_csv(r.curves));
  std::printf("checkpoint -> %s\n", out.string().c_str());
  return kExitOk;
}

/// Predictions for every agent of the model's type that has a full horizon
/// after `step`.
std::vector<model::Prediction> scene_predictions(const model::Forecaster& m, const Scene& scene, int step) {
  std::vector<model::Window> windows;
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    const AgentTrack& a = scene.agents[i];
    if (a.type != m.config().agent_type || !a.covers(step) || step + m.config().horizon > a.last_step()) continue;
    windows.push_back(model::make_window(scene, i, step, m.config()));
  }
  return m.predict(windows);
}

int figure_step(const model::Forecaster& m, const Scene& scene) {
  return std::max(1, std::min(m.config().history_len, scene.duration - 1 - m.config().horizon));
}

int cmd_evaluate(const RunConfig& rc, const std::vector<std::string>& ckpts, const fs::path& data,
                 const fs::path& out, int figures, int threads) {
  require_dir(data);
  const auto test = load_split(data, "test");
  std::vector<std::pair<std::string, metrics::EvalReport>> reports;
  std::vector<std::pair<std::string, model::Forecaster>> models;
  for (const auto& path : ckpts) {
    const std::string name = fs::path(path).stem().string();
    models.emplace_back(name, model::Forecaster::load(path));
  }
  for (const auto& [name, m] : models) {
    metrics::EvalReport r = metrics::evaluate(m, test, rc.eval, threads);
    io::write_text(out / ("report_" + name + ".csv"), metrics::eval_report_csv(r));
    reports.emplace_back(name, std::move(r));
  }
  const auto rows = io::emit_tables(reports);
  io::write_text(out / "table.csv", io::table_csv(rows));
  for (const auto& [name, r] : reports) {
    for (const auto& h : r.horizons) {
      std::printf("%-12s %.2fs  NLL %8.4f  FDE %.4f  dESV %+.3f %+.3f %+.3f\n", name.c_str(), h.horizon_s,
                  h.nll_mean, h.fde, h.desv[0], h.desv[1], h.desv[2]);
    }
  }
  const auto n_fig = std::min<std::size_t>(static_cast<std::size_t>(std::max(figures, 0)), test.size());
  for (const auto& [name, m] : models) {
    for (std::size_t s = 0; s < n_fig; ++s) {
      const auto preds = scene_predictions(m, test[s], figure_step(m, test[s]));
      char file[48];
      std::snprintf(file, sizeof file, "scene_%04zu.svg", s);
      io::write_text(out / "figures" / name / file, io::plot_scene_svg(test[s], preds));
    }
  }
  std::printf("table -> %s\n", (out / "table.csv").string().c_str());
  return kExitOk;
}

int cmd_figure(const fs::path& ckpt, const fs::path& scene_path, const fs::path& out, std::optional<int> step) {
  const auto m = model::Forecaster::load(ckpt);
  const Scene scene = io::load_scene(scene_path);
  const auto preds = scene_predictions(m, scene, step.value_or(figure_step(m, scene)));
  io::write_text(out, io::plot_scene_svg(scene, preds));
  std::printf("%zu predictions -> %s\n", preds.size(), out.string().c_str());
  return kExitOk;
}

int cmd_distances(const fs::path& out) {
  io::write_text(out, statdist::distance_study_csv(statdist::distance_study()));
  std::printf("distance study -> %s\n", out.string().c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pipeline

std::uint64_t fingerprint(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

class Stamps {
 public:
  Stamps(fs::path dir, std::uint64_t key) : dir_(std::move(dir)), key_(std::to_string(key)) {}

  template <typename Fn>
  int run(const std::string& stage, Fn&& fn) {
    const fs::path stamp = dir_ / (stage + ".stamp");
    if (fs::exists(stamp) && io::read_text(stamp) == key_) {
      std::printf("[%s] up to date\n", stage.c_str());
      return kExitOk;
    }
    std::printf("[%s] running\n", stage.c_str());
    std::fflush(stdout);
    const int rc = fn();
    if (rc == kExitOk) io::write_text(stamp, key_);
    return rc;
  }

 private:
  fs::path dir_;
  std::string key_;
};

int cmd_pipeline(const Common& common, const fs::path& out, int threads) {
  const RunConfig rc = common.run_config();
  const std::string text = common.config.empty() ? std::string() : io::read_text(common.config);
  Stamps stamps(out / "stamps", fingerprint(text + "#seed=" + std::to_string(rc.seed)));
  const fs::path sim_dir = out / "data";
  const fs::path tracked_dir = out / "tracked";
  const fs::path model_dir = out / "models";

  int code = stamps.run("simulate", [&] { return cmd_simulate(rc, sim_dir, threads); });
  if (code != kExitOk) return code;
  code = stamps.run("track", [&] { return cmd_track(rc, sim_dir, tracked_dir, rc.model.agent_type, rc.sim.dt, threads); });
  if (code != kExitOk) return code;
  const fs::path data = rc.train_covariance == "filter" ? tracked_dir : sim_dir;

  std::vector<std::string> ckpts;
  for (auto mode : {model::LossMode::NllOnly, model::LossMode::SdOnly, model::LossMode::Composite}) {
    const std::string name(model::to_string(mode));
    const fs::path ckpt = model_dir / (name + ".json");
    RunConfig mc = rc;
    mc.model.loss_mode = mode;
    code = stamps.run("train_" + name, [&] { return cmd_train(mc, data, ckpt); });
    if (code != kExitOk) return code;
    ckpts.push_back(ckpt.string());
  }
  code = stamps.run("evaluate", [&] { return cmd_evaluate(rc, ckpts, data, out / "eval", rc.figures, threads); });
  if (code != kExitOk) return code;
  return stamps.run("distances", [&] { return cmd_distances(out / "distance_study.csv"); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware multi-agent trajectory forecasting toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  std::string out, in, data, agent_type = "particle", loss, scene_path;
  std::vector<std::string> ckpts;
  std::optional<int> epochs, figures, step;
  std::optional<double> meas_noise, accel_std, yaw_std, cov_scale;
  double dt = 0.4;

  auto* simulate = app.add_subcommand("simulate", "generate train/val/test scenes");
  add_common(simulate, common);
  simulate->add_option("--out", out, "output directory")->required();
  simulate->add_option("--cov-scale", cov_scale, "multiplies the synthetic covariance generator");

  auto* track = app.add_subcommand("track", "run the KF/EKF over scenes");
  add_common(track, common);
  track->add_option("--in", in, "scene directory (JSON, or ETH/UCY .txt files)")->required();
  track->add_option("--out", out, "output directory")->required();
  track->add_option("--agent-type", agent_type, "particle, pedestrian or vehicle");
  track->add_option("--dt", dt, "time step for .txt trajectory files");
  track->add_option("--meas-noise", meas_noise, "measurement noise std [m]");
  track->add_option("--accel-std", accel_std, "process acceleration std");
  track->add_option("--yaw-rate-std", yaw_std, "process yaw-rate std (vehicles)");

  auto* train = app.add_subcommand("train", "train one forecaster");
  add_common(train, common);
  train->add_option("--data", data, "directory with train/ and val/ scenes")->required();
  train->add_option("--loss", loss, "nll, sd or composite");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--agent-type", agent_type, "particle, pedestrian or vehicle");
  train->add_option("--out", out, "checkpoint path (curves CSV is written beside it)")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score checkpoints on the test split");
  add_common(evaluate, common);
  evaluate->add_option("--ckpt", ckpts, "checkpoint(s)")->required();
  evaluate->add_option("--data", data, "directory with test/ scenes")->required();
  evaluate->add_option("--out", out, "output directory")->required();
  evaluate->add_option("--figures", figures, "number of test scenes to plot");

  auto* distances = app.add_subcommand("distances", "statistical distance study CSV");
  distances->add_option("--out", out, "output CSV")->required();

  auto* figure = app.add_subcommand("figure", "plot predictions for one scene");
  figure->add_option("--ckpt", ckpts, "checkpoint")->required()->expected(1);
  figure->add_option("--scene", scene_path, "scene JSON")->required();
  figure->add_option("--step", step, "prediction step");
  figure->add_option("--out", out, "output SVG")->required();

  auto* pipeline = app.add_subcommand("pipeline", "simulate, track, train x3, evaluate (resumable)");
  add_common(pipeline, common);
  pipeline->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    const int threads = common.thread_count();
    if (simulate->parsed()) {
      RunConfig rc = common.run_config();
      if (cov_scale) rc.cov_scale = *cov_scale;
      rc.validate();
      return cmd_simulate(rc, out, threads);
    }
    if (track->parsed()) {
      RunConfig rc = common.run_config();
      if (meas_noise) rc.filter.meas_noise_std = *meas_noise;
      if (accel_std) rc.filter.accel_std = *accel_std;
      if (yaw_std) rc.filter.yaw_rate_std = *yaw_std;
      rc.validate();
      if (!(dt > 0.0)) throw Error(ErrorCode::ConfigError, "--dt must be positive");
      return cmd_track(rc, in, out, agent_type_from_string(agent_type), dt, threads);
    }
    if (train->parsed()) {
      RunConfig rc = common.run_config();
      if (!loss.empty()) rc.model.loss_mode = model::loss_mode_from_string(loss);
      if (epochs) rc.train.epochs = *epochs;
      if (train->count("--agent-type")) rc.model.agent_type = agent_type_from_string(agent_type);
      rc.validate();
      return cmd_train(rc, data, out);
    }
    if (evaluate->parsed()) {
      const RunConfig rc = common.run_config();
      return cmd_evaluate(rc, ckpts, data, out, figures.value_or(rc.figures), threads);
    }
    if (distances->parsed()) return cmd_distances(out);
    if (figure->parsed()) return cmd_figure(ckpts.front(), scene_path, out, step);
    if (pipeline->parsed()) {
      const RunConfig rc = common.run_config();
      return cmd_pipeline(common, out.empty() ? fs::path(rc.out) : fs::path(out), threads);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
