#include "utraj/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

namespace utraj::io {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Trajectory files

namespace {

struct Observation {
  long long frame = 0;
  long long agent = 0;
  Vec2 position = Vec2::Zero();
  std::size_t line = 0;
};

[[noreturn]] void parse_error(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + what);
}

double parse_number(std::string_view token, std::size_t line) {
  double v = 0.0;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    parse_error(line, "malformed number '" + std::string(token) + "'");
  }
  return v;
}

long long parse_integral(std::string_view token, std::size_t line) {
  const double v = parse_number(token, line);
  const double r = std::round(v);
  if (std::abs(v - r) > 1e-9 || std::abs(r) > 9e15) parse_error(line, "expected an integer id, got '" + std::string(token) + "'");
  return static_cast<long long>(r);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace

Scene parse_trajectories(std::istream& in, double dt, AgentType type) {
  if (!(dt > 0.0)) throw Error(ErrorCode::ConfigError, "trajectory dt must be positive");
  std::vector<Observation> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    const auto tokens = split_ws(view);
    if (tokens.empty()) continue;
    if (tokens.size() != 4) {
      parse_error(line_no, "expected 4 fields (frame_id agent_id x y), got " + std::to_string(tokens.size()));
    }
    Observation o;
    o.frame = parse_integral(tokens[0], line_no);
    o.agent = parse_integral(tokens[1], line_no);
    o.position = Vec2(parse_number(tokens[2], line_no), parse_number(tokens[3], line_no));
    o.line = line_no;
    rows.push_back(o);
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyScene, "trajectory file contains no observations");

  std::sort(rows.begin(), rows.end(), [](const Observation& a, const Observation& b) {
    return a.agent != b.agent ? a.agent < b.agent : a.frame < b.frame;
  });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].agent == rows[i - 1].agent && rows[i].frame == rows[i - 1].frame) {
      throw Error(ErrorCode::DuplicateObservation,
                  "agent " + std::to_string(rows[i].agent) + " observed twice at frame " +
                      std::to_string(rows[i].frame) + " (lines " + std::to_string(rows[i - 1].line) + " and " +
                      std::to_string(rows[i].line) + ")");
    }
  }

  std::set<long long> frames;
  for (const auto& o : rows) frames.insert(o.frame);
  const long long first_frame = *frames.begin();
  long long spacing = 0;
  for (auto it = std::next(frames.begin()); it != frames.end(); ++it) {
    const long long diff = *it - *std::prev(it);
    spacing = spacing == 0 ? diff : std::min(spacing, diff);
  }
  if (spacing == 0) spacing = 1;
  for (const auto& o : rows) {
    if ((o.frame - first_frame) % spacing != 0) {
      throw Error(ErrorCode::NonMonotoneFrames, "line " + std::to_string(o.line) + ": frame " +
                                                    std::to_string(o.frame) + " is off the frame grid (spacing " +
                                                    std::to_string(spacing) + ")");
    }
  }

  long long next_id = rows.back().agent;
  for (const auto& o : rows) next_id = std::max(next_id, o.agent);
  ++next_id;

  Scene scene;
  scene.dt = dt;
  int last = 0;
  std::size_t i = 0;
  while (i < rows.size()) {
    const long long agent = rows[i].agent;
    bool first_piece = true;
    while (i < rows.size() && rows[i].agent == agent) {
      AgentTrack track;
      track.type = type;
      track.agent_id = static_cast<int>(first_piece ? agent : next_id++);
      first_piece = false;
      int prev_step = -1;
      while (i < rows.size() && rows[i].agent == agent) {
        const int step = static_cast<int>((rows[i].frame - first_frame) / spacing);
        if (prev_step >= 0 && step != prev_step + 1) break;
        track.gt.push_back({step, rows[i].position, Vec2::Zero()});
        prev_step = step;
        ++i;
      }
      for (std::size_t k = 1; k < track.gt.size(); ++k) {
        track.gt[k].velocity = (track.gt[k].position - track.gt[k - 1].position) / dt;
      }
      if (track.gt.size() > 1) track.gt[0].velocity = track.gt[1].velocity;
      last = std::max(last, track.last_step());
      scene.agents.push_back(std::move(track));
    }
  }
  scene.duration = last + 1;
  return scene;
}

Scene load_trajectories(const std::filesystem::path& path, double dt, AgentType type) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return parse_trajectories(f, dt, type);
}

std::string format_trajectories(const Scene& scene, int frame_stride) {
  if (frame_stride < 1) throw Error(ErrorCode::InvalidArgument, "frame stride must be >= 1");
  struct Row {
    int step;
    int agent;
    Vec2 p;
  };
  std::vector<Row> rows;
  for (const auto& a : scene.agents) {
    for (const auto& g : a.gt) rows.push_back({g.step, a.agent_id, g.position});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.step != b.step ? a.step < b.step : a.agent < b.agent;
  });
  std::string out;
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld %d %.17g %.17g\n", static_cast<long long>(r.step) * frame_stride, r.agent,
                  r.p.x(), r.p.y());
    out += buf;
  }
  return out;
}

void save_trajectories(const Scene& scene, const std::filesystem::path& path, int frame_stride) {
  write_text(path, format_trajectories(scene, frame_stride));
}

// ---------------------------------------------------------------------------
// Scene JSON

std::string scene_to_json(const Scene& scene) {
  json agents = json::array();
  for (const auto& a : scene.agents) {
    json gt = json::array();
    for (const auto& s : a.gt) {
      gt.push_back({s.step, s.position.x(), s.position.y(), s.velocity.x(), s.velocity.y()});
    }
    json entry = {{"id", a.agent_id}, {"type", std::string(to_string(a.type))}, {"gt", gt}};
    if (a.source == TrackSource::Synthetic) {
      json cov = json::array();
      for (const auto& t : a.tracked) cov.push_back({t.step, t.cov(0, 0), t.cov(1, 1)});
      entry["cov"] = cov;
    } else if (a.source == TrackSource::Filter) {
      json tracked = json::array();
      for (const auto& t : a.tracked) {
        json row = json::array({t.step});
        for (Eigen::Index k = 0; k < t.state.size(); ++k) row.push_back(t.state(k));
        for (Eigen::Index r = 0; r < t.cov.rows(); ++r) {
          for (Eigen::Index c = 0; c < t.cov.cols(); ++c) row.push_back(t.cov(r, c));
        }
        tracked.push_back(row);
      }
      entry["state_dim"] = a.tracked.empty() ? 0 : a.tracked.front().state.size();
      entry["tracked"] = tracked;
    }
    agents.push_back(entry);
  }
  json doc = {{"dt", scene.dt}, {"duration", scene.duration}, {"agents", agents}};
  return doc.dump();
}

Scene scene_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    Scene scene;
    scene.dt = doc.at("dt").get<double>();
    scene.duration = doc.value("duration", 0);
    int last = -1;
    for (const auto& entry : doc.at("agents")) {
      AgentTrack a;
      a.agent_id = entry.at("id").get<int>();
      a.type = agent_type_from_string(entry.at("type").get<std::string>());
      for (const auto& row : entry.at("gt")) {
        a.gt.push_back({row.at(0).get<int>(), Vec2(row.at(1).get<double>(), row.at(2).get<double>()),
                        Vec2(row.at(3).get<double>(), row.at(4).get<double>())});
      }
      if (entry.contains("cov")) {
        a.source = TrackSource::Synthetic;
        const auto& cov = entry.at("cov");
        if (cov.size() != a.gt.size()) throw Error(ErrorCode::ParseError, "cov rows must match gt rows");
        for (std::size_t k = 0; k < cov.size(); ++k) {
          TrackedState ts;
          ts.step = cov[k].at(0).get<int>();
          ts.state.resize(4);
          ts.state << a.gt[k].position, a.gt[k].velocity;
          ts.cov = MatX::Zero(4, 4);
          ts.cov(0, 0) = cov[k].at(1).get<double>();
          ts.cov(1, 1) = cov[k].at(2).get<double>();
          ts.agent_id = a.agent_id;
          ts.agent_type = a.type;
          a.tracked.push_back(std::move(ts));
        }
      } else if (entry.contains("tracked")) {
        a.source = TrackSource::Filter;
        const int d = entry.at("state_dim").get<int>();
        for (const auto& row : entry.at("tracked")) {
          if (row.size() != static_cast<std::size_t>(1 + d + d * d)) {
            throw Error(ErrorCode::ParseError, "tracked row has the wrong length");
          }
          TrackedState ts;
          ts.step = row.at(0).get<int>();
          ts.state.resize(d);
          ts.cov.resize(d, d);
          for (int k = 0; k < d; ++k) ts.state(k) = row.at(1 + k).get<double>();
          for (int r = 0; r < d; ++r) {
            for (int c = 0; c < d; ++c) ts.cov(r, c) = row.at(1 + d + r * d + c).get<double>();
          }
          ts.agent_id = a.agent_id;
          ts.agent_type = a.type;
          a.tracked.push_back(std::move(ts));
        }
      }
      last = std::max(last, a.last_step());
      scene.agents.push_back(std::move(a));
    }
    if (scene.duration == 0) scene.duration = last + 1;
    validate(scene);
    return scene;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("scene JSON: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ParseError) throw;
    throw Error(ErrorCode::ParseError, std::string("scene JSON: ") + e.what());
  }
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void save_scene(const Scene& scene, const std::filesystem::path& path) { write_text(path, scene_to_json(scene) + "\n"); }

Scene load_scene(const std::filesystem::path& path) { return scene_from_json(read_text(path)); }

std::vector<Scene> load_scene_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Scene> scenes;
  scenes.reserve(files.size());
  for (const auto& f : files) scenes.push_back(load_scene(f));
  return scenes;
}

void save_scene_dir(std::span<const Scene> scenes, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::snprintf(name, sizeof name, "scene_%04zu.json", i);
    save_scene(scenes[i], dir / name);
  }
}

// ---------------------------------------------------------------------------
// SVG

Ellipse sigma_ellipse(const Vec2& mean, const Mat2& cov, double level) {
  Eigen::SelfAdjointEigenSolver<Mat2> es(symmetrize(cov));
  const Vec2 ev = es.eigenvalues().cwiseMax(0.0);
  const Vec2 major = es.eigenvectors().col(1);
  return {mean, level * std::sqrt(ev(1)), level * std::sqrt(ev(0)), std::atan2(major(1), major(0))};
}

namespace {

struct Canvas {
  double x0, y1, scale, margin;
  [[nodiscard]] double px(double x) const { return margin + (x - x0) * scale; }
  [[nodiscard]] double py(double y) const { return margin + (y1 - y) * scale; }
};

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::string plot_scene_svg(const Scene& scene, std::span<const model::Prediction> predictions,
                           const PlotOptions& options) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  auto extend = [&](const Vec2& p) {
    xmin = std::min(xmin, p.x());
    xmax = std::max(xmax, p.x());
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  };
  for (const auto& a : scene.agents) {
    for (const auto& s : a.gt) extend(s.position);
  }
  for (const auto& p : predictions) {
    for (const auto& m : p.modes) {
      for (const auto& x : m.position_means) extend(x);
    }
  }
  if (xmin > xmax) xmin = ymin = -1.0, xmax = ymax = 1.0;
  const double margin = 20.0;
  const Canvas cv{xmin - 1.0, ymax + 1.0, options.pixels_per_meter, margin};
  const double width = (xmax - xmin + 2.0) * cv.scale + 2 * margin;
  const double height = (ymax - ymin + 2.0) * cv.scale + 2 * margin;

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" viewBox=\"0 0 " << fmt(width) << ' ' << fmt(height) << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << fmt(width) << "\" height=\"" << fmt(height) << "\" fill=\"white\"/>\n";

  svg << "<g id=\"ground-truth\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\">\n";
  for (const auto& a : scene.agents) {
    svg << "<polyline data-agent=\"" << a.agent_id << "\" points=\"";
    for (const auto& s : a.gt) svg << fmt(cv.px(s.position.x())) << ',' << fmt(cv.py(s.position.y())) << ' ';
    svg << "\"/>\n";
  }
  svg << "</g>\n";

  for (std::size_t pi = 0; pi < predictions.size(); ++pi) {
    const auto& p = predictions[pi];
    const char* color = kPalette[pi % std::size(kPalette)];
    svg << "<g id=\"prediction-" << p.agent_id << '-' << p.step << "\" stroke=\"" << color << "\">\n";
    for (std::size_t k = 0; k < p.modes.size(); ++k) {
      const double w = p.weights[k];
      if (!(w >= options.min_mode_weight)) continue;
      const auto& m = p.modes[k];
      svg << "<g data-mode=\"" << k << "\" opacity=\"" << fmt(std::min(1.0, w)) << "\">\n";
      for (std::size_t t = 0; t < m.position_means.size(); ++t) {
        for (int level : options.sigma_levels) {
          const Ellipse e = sigma_ellipse(m.position_means[t], m.position_covs[t], level);
          svg << "<ellipse cx=\"" << fmt(cv.px(e.center.x())) << "\" cy=\"" << fmt(cv.py(e.center.y()))
              << "\" rx=\"" << fmt(e.semi_major * cv.scale) << "\" ry=\"" << fmt(e.semi_minor * cv.scale)
              << "\" transform=\"rotate(" << fmt(-e.angle * 180.0 / 3.141592653589793) << ' '
              << fmt(cv.px(e.center.x())) << ' ' << fmt(cv.py(e.center.y())) << ")\" fill=\"" << color
              << "\" fill-opacity=\"0.05\" stroke-width=\"0.5\"/>\n";
        }
      }
      svg << "<polyline fill=\"none\" stroke-width=\"1\" points=\"";
      for (const auto& x : m.position_means) svg << fmt(cv.px(x.x())) << ',' << fmt(cv.py(x.y())) << ' ';
      svg << "\"/>\n</g>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// Tables

std::vector<TableRow> emit_tables(std::span<const std::pair<std::string, metrics::EvalReport>> reports) {
  std::vector<TableRow> rows;
  if (reports.empty()) return rows;
  const auto& grid = reports.front().second.horizons;
  for (const auto& [name, report] : reports) {
    bool same = report.horizons.size() == grid.size();
    for (std::size_t h = 0; same && h < grid.size(); ++h) {
      same = std::abs(report.horizons[h].horizon_s - grid[h].horizon_s) < 1e-9;
    }
    if (!same) throw Error(ErrorCode::GridMismatch, "method '" + name + "' uses a different horizon grid");
  }
  const char* metrics_names[] = {"nll", "fde", "desv1", "desv2", "desv3"};
  for (const char* metric : metrics_names) {
    const std::string m = metric;
    for (std::size_t h = 0; h < grid.size(); ++h) {
      std::vector<double> values;
      for (const auto& [name, report] : reports) {
        const auto& r = report.horizons[h];
        double v = 0.0;
        if (m == "nll") v = r.nll_mean;
        else if (m == "fde") v = r.fde;
        else v = r.desv[static_cast<std::size_t>(m.back() - '1')];
        values.push_back(v);
      }
      auto key = [&](double v) { return m.rfind("desv", 0) == 0 ? std::abs(v) : v; };
      for (std::size_t i = 0; i < reports.size(); ++i) {
        int rank = 1;
        for (std::size_t j = 0; j < reports.size(); ++j) rank += key(values[j]) < key(values[i]) ? 1 : 0;
        rows.push_back({reports[i].first, m, grid[h].horizon_s, values[i], rank});
      }
    }
  }
  return rows;
}

std::string table_csv(std::span<const TableRow> rows) {
  std::string out = "method,metric,horizon_s,value,rank\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.6g,%.17g,%d\n", r.method.c_str(), r.metric.c_str(), r.horizon_s, r.value,
                  r.rank);
    out += buf;
  }
  return out;
}

}  // namespace utraj::io
