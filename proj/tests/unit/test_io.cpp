#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <filesystem>
#include <sstream>

#include "generators.hpp"
#include "utraj/filters.hpp"
#include "utraj/io.hpp"
#include "utraj/sim.hpp"

using namespace utraj;
using namespace utraj::io;
using utraj::testing::Gen;

namespace {

Scene parse(const std::string& text, double dt = 0.4) {
  std::istringstream in(text);
  return parse_trajectories(in, dt);
}

ErrorCode code_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for: " << text;
  return ErrorCode::InvalidArgument;
}

void expect_same(const Scene& a, const Scene& b, double tol) {
  ASSERT_EQ(a.agents.size(), b.agents.size());
  EXPECT_EQ(a.duration, b.duration);
  EXPECT_NEAR(a.dt, b.dt, tol);
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    const auto& x = a.agents[i];
    const auto& y = b.agents[i];
    EXPECT_EQ(x.agent_id, y.agent_id);
    EXPECT_EQ(x.type, y.type);
    EXPECT_EQ(x.source, y.source);
    ASSERT_EQ(x.gt.size(), y.gt.size());
    for (std::size_t k = 0; k < x.gt.size(); ++k) {
      EXPECT_EQ(x.gt[k].step, y.gt[k].step);
      EXPECT_LE((x.gt[k].position - y.gt[k].position).cwiseAbs().maxCoeff(), tol);
      EXPECT_LE((x.gt[k].velocity - y.gt[k].velocity).cwiseAbs().maxCoeff(), tol);
    }
    ASSERT_EQ(x.tracked.size(), y.tracked.size());
    for (std::size_t k = 0; k < x.tracked.size(); ++k) {
      EXPECT_EQ(x.tracked[k].step, y.tracked[k].step);
      ASSERT_EQ(x.tracked[k].state.size(), y.tracked[k].state.size());
      EXPECT_LE((x.tracked[k].state - y.tracked[k].state).cwiseAbs().maxCoeff(), tol);
      EXPECT_LE((x.tracked[k].cov - y.tracked[k].cov).cwiseAbs().maxCoeff(), tol);
    }
  }
}

}  // namespace

TEST(Loader, VelocityExample) {
  const Scene s = parse("0 1 0 0\n1 1 1 0\n");
  ASSERT_EQ(s.agents.size(), 1u);
  const auto& a = s.agents[0];
  ASSERT_EQ(a.gt.size(), 2u);
  EXPECT_EQ(a.gt[1].velocity, Vec2(2.5, 0.0));
  EXPECT_EQ(a.gt[0].velocity, Vec2(2.5, 0.0));
  EXPECT_EQ(a.agent_id, 1);
  EXPECT_EQ(a.type, AgentType::Pedestrian);
  EXPECT_EQ(s.duration, 2);
  EXPECT_EQ(s.dt, 0.4);
}

TEST(Loader, ErrorSuite) {
  EXPECT_EQ(code_of(""), ErrorCode::EmptyScene);
  EXPECT_EQ(code_of("# only a comment\n\n"), ErrorCode::EmptyScene);
  try {
    parse("0 1 0 0\na b c\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_EQ(code_of("0 1 0 0 5\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("0 1 x 0\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("0 1 nan 0\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("0 1 1,5 0\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("0.5 1 0 0\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("0 1 0 0\n0 1 1 1\n"), ErrorCode::DuplicateObservation);
  EXPECT_EQ(code_of("0 1 0 0\n10 1 1 0\n25 2 0 0\n"), ErrorCode::NonMonotoneFrames);
  EXPECT_THROW(load_trajectories("/nonexistent/file.txt", 0.4), Error);
}

TEST(Loader, CommentsAndFrameGrid) {
  const Scene s = parse("# header\n0 7 0 0  # trailing\n\n10 7 1.5 -2\n20 7 3 -4\n10 3 5 5\n");
  ASSERT_EQ(s.agents.size(), 2u);
  EXPECT_EQ(s.agents[0].agent_id, 3);
  EXPECT_EQ(s.agents[0].first_step(), 1);
  EXPECT_EQ(s.agents[0].gt[0].velocity, Vec2::Zero());  // single sample
  EXPECT_EQ(s.agents[1].agent_id, 7);
  EXPECT_EQ(s.agents[1].gt.size(), 3u);
  EXPECT_EQ(s.agents[1].gt[2].velocity, Vec2(3.75, -5.0));
  EXPECT_EQ(s.duration, 3);
}

TEST(Loader, GapsSplitTracks) {
  const Scene s = parse("0 4 0 0\n1 4 1 0\n4 4 2 0\n5 4 3 0\n7 4 9 9\n0 9 0 0\n");
  ASSERT_EQ(s.agents.size(), 4u);
  EXPECT_EQ(s.agents[0].agent_id, 4);
  EXPECT_EQ(s.agents[0].gt.size(), 2u);
  EXPECT_EQ(s.agents[1].agent_id, 10);
  EXPECT_EQ(s.agents[1].first_step(), 4);
  EXPECT_EQ(s.agents[1].gt[0].velocity, Vec2(2.5, 0));
  EXPECT_EQ(s.agents[2].agent_id, 11);
  EXPECT_EQ(s.agents[2].gt.size(), 1u);
  EXPECT_EQ(s.agents[3].agent_id, 9);
  EXPECT_NO_THROW(validate(s));
}

TEST(Loader, RowOrderIndependent) {
  Gen gen(5);
  std::vector<std::string> lines;
  for (int agent = 0; agent < 6; ++agent) {
    const int start = gen.integer(0, 5);
    const int len = gen.integer(1, 12);
    for (int t = start; t < start + len; ++t) {
      if (gen.uniform(0, 1) < 0.1) continue;
      std::ostringstream l;
      l.precision(17);
      l << t * 6 << ' ' << agent << ' ' << gen.uniform(-10, 10) << ' ' << gen.uniform(-10, 10);
      lines.push_back(l.str());
    }
  }
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& l : v) s += l + "\n";
    return s;
  };
  const Scene ref = parse(join(lines));
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(lines.begin(), lines.end(), gen.engine());
    expect_same(ref, parse(join(lines)), 0.0);
  }
}

TEST(Loader, TextRoundTrip) {
  sim::SimConfig c;
  c.duration_s = 2.0;
  Scene s = sim::simulate_scenario(c, 11);
  for (auto& a : s.agents) a.type = AgentType::Pedestrian;
  // first step drops out of the backward-difference convention; compare positions everywhere
  const Scene back = parse(format_trajectories(s, 10), c.dt);
  ASSERT_EQ(back.agents.size(), s.agents.size());
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    ASSERT_EQ(back.agents[i].gt.size(), s.agents[i].gt.size());
    for (std::size_t k = 0; k < s.agents[i].gt.size(); ++k) {
      EXPECT_EQ(back.agents[i].gt[k].position, s.agents[i].gt[k].position);
      EXPECT_EQ(back.agents[i].gt[k].step, s.agents[i].gt[k].step);
    }
  }
  // loader output is a fixed point
  const Scene again = parse(format_trajectories(back, 10), c.dt);
  expect_same(back, again, 0.0);
}

TEST(SceneJson, RoundTripSyntheticAndFilter) {
  sim::SimConfig c;
  c.duration_s = 2.0;
  const Scene gt = sim::simulate_scenario(c, 3);
  const Scene syn = sim::generate_covariances(gt, c.cov_gen, 4);
  expect_same(syn, scene_from_json(scene_to_json(syn)), 1e-12);

  filters::FilterConfigs fc;
  fc[AgentType::Particle] = filters::default_filter_config(AgentType::Particle, c.dt);
  const Scene tracked = filters::track_scene(gt, fc, 5, 1);
  const Scene back = scene_from_json(scene_to_json(tracked));
  expect_same(tracked, back, 1e-12);
  EXPECT_EQ(scene_to_json(tracked), scene_to_json(back));

  const Scene bare = parse("0 1 0.1 0.2\n1 1 0.3 0.4\n");
  expect_same(bare, scene_from_json(scene_to_json(bare)), 1e-12);
}

TEST(SceneJson, FilesAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "utraj_io_test";
  std::filesystem::remove_all(dir);
  sim::SimConfig c;
  c.duration_s = 1.0;
  std::vector<Scene> scenes{sim::simulate_scenario(c, 1), sim::simulate_scenario(c, 2)};
  save_scene_dir(scenes, dir / "nested");
  EXPECT_TRUE(std::filesystem::exists(dir / "nested" / "scene_0001.json"));
  const auto back = load_scene_dir(dir / "nested");
  ASSERT_EQ(back.size(), 2u);
  expect_same(scenes[1], back[1], 1e-12);
  std::filesystem::remove_all(dir);

  for (const char* bad : {"{", "{\"dt\": 0.1}", "{\"dt\":0.1,\"agents\":[{\"id\":1,\"type\":\"robot\",\"gt\":[]}]}"}) {
    try {
      scene_from_json(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ParseError) << bad;
    }
  }
  EXPECT_THROW(load_scene_dir(dir / "missing"), Error);
}

TEST(Svg, SigmaEllipse) {
  const Ellipse e = sigma_ellipse(Vec2(1, 2), Vec2(4, 1).asDiagonal().toDenseMatrix(), 1);
  EXPECT_NEAR(e.semi_major, 2.0, 1e-12);
  EXPECT_NEAR(e.semi_minor, 1.0, 1e-12);
  EXPECT_NEAR(std::abs(std::sin(e.angle)), 0.0, 1e-12);
  const Ellipse f = sigma_ellipse(Vec2::Zero(), Vec2(1, 9).asDiagonal().toDenseMatrix(), 2);
  EXPECT_NEAR(f.semi_major, 6.0, 1e-12);
  EXPECT_NEAR(f.semi_minor, 2.0, 1e-12);
  EXPECT_NEAR(std::abs(std::cos(f.angle)), 0.0, 1e-12);

  Gen gen(2);
  for (int i = 0; i < 100; ++i) {
    const Mat2 cov = gen.spd(0.1, 3.0);
    const Ellipse g = sigma_ellipse(Vec2::Zero(), cov, 1);
    const Vec2 axis(std::cos(g.angle), std::sin(g.angle));
    EXPECT_NEAR(axis.dot(cov * axis), g.semi_major * g.semi_major, 1e-9);
  }
}

TEST(Svg, WellFormedAndSkipsZeroWeightModes) {
  sim::SimConfig c;
  c.duration_s = 1.0;
  const Scene s = sim::simulate_scenario(c, 8);
  model::Prediction p;
  p.agent_id = 0;
  p.step = 3;
  p.weights = {1.0, 0.0};
  for (int k = 0; k < 2; ++k) {
    model::ModePrediction m;
    for (int t = 0; t < 3; ++t) {
      m.position_means.emplace_back(t, k);
      m.position_covs.push_back(Mat2::Identity() * 0.1 * (t + 1));
    }
    p.modes.push_back(m);
  }
  const std::vector<model::Prediction> preds{p};
  const std::string svg = plot_scene_svg(s, preds);
  std::istringstream in(svg);
  boost::property_tree::ptree tree;
  ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree));
  EXPECT_EQ(tree.count("svg"), 1u);
  EXPECT_NE(svg.find("data-mode=\"0\""), std::string::npos);
  EXPECT_EQ(svg.find("data-mode=\"1\""), std::string::npos);
  std::size_t ellipses = 0;
  for (std::size_t pos = 0; (pos = svg.find("<ellipse", pos)) != std::string::npos; ++pos) ++ellipses;
  EXPECT_EQ(ellipses, 9u);  // 3 steps x 3 sigma levels, one visible mode

  const std::string empty = plot_scene_svg(Scene{}, {});
  std::istringstream in2(empty);
  EXPECT_NO_THROW(boost::property_tree::read_xml(in2, tree));
}

namespace {

metrics::EvalReport report(std::vector<double> horizons, double nll, double fde, double desv1) {
  metrics::EvalReport r;
  for (double h : horizons) {
    metrics::HorizonReport x;
    x.horizon_s = h;
    x.nll_mean = nll;
    x.fde = fde;
    x.desv = {desv1, desv1, desv1};
    r.horizons.push_back(x);
  }
  return r;
}

int rank_of(const std::vector<TableRow>& rows, const std::string& method, const std::string& metric) {
  for (const auto& r : rows) {
    if (r.method == method && r.metric == metric) return r.rank;
  }
  return -1;
}

}  // namespace

TEST(Tables, TiesAndRanking) {
  using Entry = std::pair<std::string, metrics::EvalReport>;
  const std::vector<Entry> same{{"a", report({0.8}, 1, 1, 0.1)}, {"b", report({0.8}, 1, 1, 0.1)},
                                {"c", report({0.8}, 1, 1, 0.1)}};
  for (const auto& r : emit_tables(same)) EXPECT_EQ(r.rank, 1);

  const std::vector<Entry> mixed{{"nll", report({0.8, 1.6}, -1.0, 0.5, -0.3)},
                                 {"sd", report({0.8, 1.6}, 2.0, 0.4, 0.05)},
                                 {"comp", report({0.8, 1.6}, 0.5, 0.4, -0.1)}};
  const auto rows = emit_tables(mixed);
  EXPECT_EQ(rows.size(), 3u * 5u * 2u);
  EXPECT_EQ(rank_of(rows, "nll", "nll"), 1);
  EXPECT_EQ(rank_of(rows, "comp", "nll"), 2);
  EXPECT_EQ(rank_of(rows, "sd", "nll"), 3);
  EXPECT_EQ(rank_of(rows, "sd", "fde"), 1);
  EXPECT_EQ(rank_of(rows, "comp", "fde"), 1);
  EXPECT_EQ(rank_of(rows, "nll", "fde"), 3);
  EXPECT_EQ(rank_of(rows, "sd", "desv1"), 1);
  EXPECT_EQ(rank_of(rows, "comp", "desv1"), 2);
  EXPECT_EQ(rank_of(rows, "nll", "desv1"), 3);

  const std::vector<Entry> single{{"only", report({0.4, 0.8}, 3, 2, -0.5)}};
  for (const auto& r : emit_tables(single)) EXPECT_EQ(r.rank, 1);

  const std::string csv = table_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,metric,horizon_s,value,rank");
  EXPECT_EQ(csv.find('\r'), std::string::npos);

  const std::vector<Entry> bad{{"a", report({0.8}, 1, 1, 0)}, {"b", report({1.2}, 1, 1, 0)}};
  try {
    emit_tables(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GridMismatch);
  }
}
