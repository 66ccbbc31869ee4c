#pragma once

// Trajectory-file ingestion, scene JSON, SVG plots and comparison tables.

#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "utraj/core.hpp"
#include "utraj/metrics.hpp"
#include "utraj/model.hpp"

namespace utraj::io {

// ---------------------------------------------------------------------------
// Trajectory files: whitespace-delimited "frame_id agent_id x y", '#' comments.

/// Rows are sorted by (agent, frame) so the result does not depend on line
/// order. Frame ids map to steps on a regular grid whose spacing is the
/// smallest positive difference between distinct frame ids. A gap of more
/// than one grid step splits an agent into separate tracks; later pieces get
/// fresh ids above the largest id in the file. Velocities are backward
/// differences; the first sample copies the second.
///
/// Errors: ParseError (with line number), DuplicateObservation,
/// NonMonotoneFrames (a frame id off the regular grid), EmptyScene.
Scene parse_trajectories(std::istream& in, double dt, AgentType type = AgentType::Pedestrian);
Scene load_trajectories(const std::filesystem::path& path, double dt, AgentType type = AgentType::Pedestrian);

/// GT positions as "frame_id agent_id x y" lines (frame = step * frame_stride),
/// ordered by frame then agent, with round-trip precision.
std::string format_trajectories(const Scene& scene, int frame_stride = 1);
void save_trajectories(const Scene& scene, const std::filesystem::path& path, int frame_stride = 1);

// ---------------------------------------------------------------------------
// Scene JSON: {dt, duration, agents: [{id, type, gt: [[t,x,y,vx,vy]...],
// cov: [[t,var_x,var_y]...] (synthetic), tracked: [[t, state..., cov...]] (filter)}]}

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(std::string_view text);
void save_scene(const Scene& scene, const std::filesystem::path& path);
Scene load_scene(const std::filesystem::path& path);

/// Scenes of a directory written by save_scenes, in file-name order.
std::vector<Scene> load_scene_dir(const std::filesystem::path& dir);
/// Writes scene_0000.json, scene_0001.json, ...
void save_scene_dir(std::span<const Scene> scenes, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// SVG

struct Ellipse {
  Vec2 center = Vec2::Zero();
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double angle = 0.0;  // radians, major axis from +x
};

/// i-sigma level set of N(mean, cov): semi-axes i * sqrt(eigenvalues).
Ellipse sigma_ellipse(const Vec2& mean, const Mat2& cov, double level);

struct PlotOptions {
  std::vector<int> sigma_levels{1, 2, 3};
  double pixels_per_meter = 40.0;
  double min_mode_weight = 1e-3;  // modes below this are omitted
};

/// GT polylines of every agent plus, for each prediction, per-mode mean
/// polylines and covariance ellipses with opacity proportional to weight.
std::string plot_scene_svg(const Scene& scene, std::span<const model::Prediction> predictions,
                           const PlotOptions& options = {});

// ---------------------------------------------------------------------------
// Comparison tables

struct TableRow {
  std::string method;
  std::string metric;  // nll, fde, desv1, desv2, desv3
  double horizon_s = 0.0;
  double value = 0.0;
  int rank = 1;
};

/// One row per (method, metric, horizon). Ranks are computed per (metric,
/// horizon): NLL and FDE ascending, Delta-ESV by absolute value ascending.
/// Ties share the smaller rank. Throws GridMismatch when horizon grids differ.
std::vector<TableRow> emit_tables(std::span<const std::pair<std::string, metrics::EvalReport>> reports);

/// `method,metric,horizon_s,value,rank`
std::string table_csv(std::span<const TableRow> rows);

/// Writes text to a file, creating parent directories.
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace utraj::io
