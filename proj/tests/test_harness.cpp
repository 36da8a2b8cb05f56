#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "apfn/harness.hpp"
#include "apfn/taskgen.hpp"

using namespace apfn::harness;
namespace fs = std::filesystem;

namespace {

std::vector<apfn::taskgen::TaskBundle> eval_corpus() {
  std::vector<apfn::taskgen::TaskBundle> bundles;
  for (std::uint64_t s = 0; s < 3; ++s) {
    bundles.push_back(
        apfn::taskgen::generate_bundle({"quadratic", 100 + s}, 10, 12));
  }
  return bundles;
}

apfn::taskgen::TaskBundle flat_bundle(double lo, double hi) {
  apfn::taskgen::TaskBundle b;
  b.task_id = "flat-0";
  b.family = "synthetic";
  b.seed = 0;
  b.epochs = 4;
  std::mt19937_64 rng(3);
  b.configs = apfn::hpspace::sample_configs(rng, 2);
  b.curves = {{lo, lo, lo, lo}, {hi, hi, hi, hi}};
  return b;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("uniform predictor log-likelihood anchor") {
  const UniformPredictor uni(1000);
  const auto bundles = eval_corpus();
  std::mt19937_64 rng(0);
  const auto row = eval_extrapolation(uni, "uniform", bundles, 20, rng);
  CHECK(row.median_ll == doctest::Approx(-std::log(1000.0)).epsilon(1e-4));
  CHECK(std::abs(row.median_ll + 6.908) < 1e-3);
  CHECK(row.context_size == 20);
  // Uniform mean is 0.5, so the MSE is E[(y - 0.5)^2] <= 0.25.
  CHECK(row.median_mse <= 0.25);
  CHECK(row.median_mse >= 0.0);
}

TEST_CASE("uniform predictor summaries") {
  const UniformPredictor uni(100);
  const auto out =
      uni({}, std::vector<apfn::surrogate::CurvePoint>(3));
  REQUIRE(out.size() == 3);
  for (const auto& d : out) {
    for (double p : d.probs) {
      CHECK(p == doctest::Approx(0.01).epsilon(1e-12));
    }
    CHECK(apfn::surrogate::mean_of(d) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(apfn::surrogate::mass_above(d, 0.5) ==
          doctest::Approx(0.5).epsilon(1e-9));
  }
}

TEST_CASE("eval_extrapolation rejects oversized contexts") {
  const UniformPredictor uni(100);
  const auto bundles = eval_corpus();  // 3 tasks x 10 configs x 12 epochs
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(
      eval_extrapolation(uni, "uniform", bundles, 10 * 12 + 1, rng),
      std::invalid_argument);
}

TEST_CASE("normalized_regret formula and invariants") {
  const auto bundle = flat_bundle(0.1, 0.9);
  const apfn::ftbo::TaskTable table(bundle);

  std::vector<apfn::ftbo::TrajectoryPoint> traj;
  traj.push_back({1, 0, 1, 0.1, 0.1});  // incumbent = worst -> regret 1
  traj.push_back({2, 1, 1, 0.7, 0.7});  // 0.25 by the formula
  traj.push_back({3, 1, 2, 0.9, 0.9});  // incumbent = best -> regret 0

  const auto r = normalized_regret(traj, table);
  REQUIRE(r.size() == 3);
  CHECK(r[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(r[2] == doctest::Approx(0.0).epsilon(1e-12));
  for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i] <= r[i - 1]);

  // Degenerate table: all scores equal -> regret identically 0.
  const apfn::ftbo::TaskTable flat(flat_bundle(0.5, 0.5));
  const auto rz = normalized_regret(traj, flat);
  for (double v : rz) CHECK(v == 0.0);
}

TEST_CASE("average_rank examples") {
  using Key = std::pair<std::string, std::uint64_t>;
  const Key cell{"t", 0};

  SUBCASE("identical regrets tie at 1.5") {
    RegretGrid grid;
    grid["a"][cell] = {0.5, 0.4};
    grid["b"][cell] = {0.5, 0.4};
    const auto ranks = average_rank(grid);
    CHECK(ranks.at("a") == std::vector<double>{1.5, 1.5});
    CHECK(ranks.at("b") == std::vector<double>{1.5, 1.5});
  }
  SUBCASE("dominating policy ranks exactly 1") {
    RegretGrid grid;
    grid["good"][cell] = {0.1, 0.05};
    grid["bad"][cell] = {0.9, 0.8};
    grid["worse"][cell] = {0.95, 0.9};
    const auto ranks = average_rank(grid);
    CHECK(ranks.at("good") == std::vector<double>{1.0, 1.0});
    CHECK(ranks.at("bad") == std::vector<double>{2.0, 2.0});
    CHECK(ranks.at("worse") == std::vector<double>{3.0, 3.0});
  }
  SUBCASE("ranks sum to k(k+1)/2 per budget step") {
    RegretGrid grid;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const char* p : {"a", "b", "c", "d"}) {
      for (std::uint64_t s = 0; s < 3; ++s) {
        std::vector<double> r(5);
        for (auto& v : r) v = u(rng);
        grid[p][{"t", s}] = r;
      }
    }
    const auto ranks = average_rank(grid);
    for (std::size_t b = 0; b < 5; ++b) {
      double sum = 0.0;
      for (const auto& [p, v] : ranks) {
        sum += v[b];
        CHECK(v[b] >= 1.0);
        CHECK(v[b] <= 4.0);
      }
      CHECK(sum == doctest::Approx(10.0).epsilon(1e-9));
    }
  }
  SUBCASE("mismatched grids are rejected") {
    RegretGrid grid;
    grid["a"][cell] = {0.5, 0.4};
    grid["b"][cell] = {0.5};
    CHECK_THROWS_AS(average_rank(grid), std::invalid_argument);
  }
}

TEST_CASE("leave_out_eval splits and reports") {
  std::vector<apfn::taskgen::TaskBundle> bundles;
  bundles.push_back(apfn::taskgen::generate_bundle({"quadratic", 7}, 10, 8));

  LeaveOutConfig cfg;
  cfg.holdout_fraction = 0.4;
  cfg.context_size = 8;
  cfg.model.layers = 1;
  cfg.model.heads = 2;
  cfg.model.embed_dim = 16;
  cfg.model.hidden_dim = 32;
  cfg.model.buckets = 10;
  cfg.model.max_context = 32;
  cfg.train = apfn::train::TrainConfig::desk_preset();
  cfg.train.batch_size = 2;
  cfg.train.steps_per_epoch = 2;
  cfg.train.warmup_epochs = 1;
  cfg.train.total_epochs = 2;

  const auto res = leave_out_eval(bundles, cfg);
  CHECK(res.held_out_configs_per_task == 4);  // 0.4 of 10
  CHECK(std::isfinite(res.kept.median_ll));
  CHECK(std::isfinite(res.held_out.median_ll));
  CHECK(res.kept.model != res.held_out.model);

  SUBCASE("too-small splits are rejected") {
    cfg.holdout_fraction = 0.05;  // 0.5 -> rounds to < 2 held out
    CHECK_THROWS_AS(leave_out_eval(bundles, cfg), std::invalid_argument);
  }
}

TEST_CASE("suite config presets and parsing") {
  const auto dir = fs::temp_directory_path() / "apfn_test_suite_cfg";
  fs::create_directories(dir);

  {
    std::ofstream f(dir / "desk.json");
    f << R"({"preset":"desk","tasks":["x"],"policies":["random"]})";
  }
  const auto desk = SuiteConfig::from_json_file(dir / "desk.json");
  CHECK(desk.budget == 300);
  CHECK(desk.contexts == std::vector<std::size_t>{50, 100, 200});
  CHECK(desk.seeds.size() == 5);

  {
    // Paper-shape config: 12 tasks, 5 seeds.
    std::ofstream f(dir / "paper.json");
    f << R"({"preset":"paper","tasks":[)";
    for (int i = 0; i < 12; ++i) f << "\"t" << i << (i == 11 ? "\"" : "\",");
    f << R"(],"policies":["random","asha"]})";
  }
  const auto paper = SuiteConfig::from_json_file(dir / "paper.json");
  CHECK(paper.budget == 1000);
  CHECK(paper.contexts == std::vector<std::size_t>{400, 1000, 1600});
  CHECK(paper.task_dirs.size() == 12);
  CHECK(paper.seeds.size() == 5);

  {
    std::ofstream f(dir / "bad.json");
    f << R"({"preset":"nope"})";
  }
  CHECK_THROWS_AS(SuiteConfig::from_json_file(dir / "bad.json"),
                  std::invalid_argument);
  CHECK_THROWS_AS(SuiteConfig::from_json_file(dir / "missing.json"),
                  std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("run_suite writes trajectories and byte-identical reruns") {
  const auto root = fs::temp_directory_path() / "apfn_test_suite";
  fs::remove_all(root);
  fs::create_directories(root / "tasks");

  std::vector<std::string> task_dirs;
  for (std::uint64_t s = 0; s < 2; ++s) {
    const auto b = apfn::taskgen::generate_bundle({"quadratic", s}, 6, 8);
    apfn::taskgen::save_bundle(b, root / "tasks" / b.task_id);
    task_dirs.push_back((root / "tasks" / b.task_id).string());
  }

  SuiteConfig cfg;
  cfg.preset = "desk";
  for (const auto& d : task_dirs) cfg.task_dirs.emplace_back(d);
  cfg.policies = {"random", "asha", "sh"};
  cfg.seeds = {0, 1};
  cfg.budget = 40;
  cfg.contexts = {10};

  REQUIRE(run_suite(cfg, root / "out1"));
  REQUIRE(run_suite(cfg, root / "out2"));

  // 2 tasks x 3 policies x 2 seeds trajectory files.
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(root / "out1" / "trajectories"))
    if (e.path().extension() == ".csv") ++count;
  CHECK(count == 12);

  CHECK(slurp(root / "out1" / "regret.csv") ==
        slurp(root / "out2" / "regret.csv"));
  CHECK(slurp(root / "out1" / "rank.csv") ==
        slurp(root / "out2" / "rank.csv"));
  CHECK(fs::exists(root / "out1" / "regret_vs_budget.svg"));
  CHECK(fs::exists(root / "out1" / "rank_vs_budget.svg"));

  for (const auto& e : fs::directory_iterator(root / "out1" / "trajectories")) {
    const auto rel = e.path().filename();
    CHECK(slurp(e.path()) == slurp(root / "out2" / "trajectories" / rel));
  }
  fs::remove_all(root);
}

TEST_CASE("write_svg_lines produces a well-formed plot") {
  const auto path = fs::temp_directory_path() / "apfn_test_plot.svg";
  std::map<std::string, std::vector<double>> series;
  series["a"] = {0.9, 0.5, 0.3};
  series["b"] = {0.8, 0.7, 0.6};
  write_svg_lines(path, "title", "x", "y", {1.0, 2.0, 3.0}, series);
  const auto svg = slurp(path);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("title") != std::string::npos);
  fs::remove(path);
}

}  // TEST_SUITE
