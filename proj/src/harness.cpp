#include "apfn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace apfn::harness {

using json = nlohmann::json;

std::vector<surrogate::PredictiveDistribution> UniformPredictor::operator()(
    const std::vector<surrogate::CurvePoint>& /*context*/,
    const std::vector<surrogate::CurvePoint>& queries) const {
  std::vector<surrogate::PredictiveDistribution> out(
      queries.size(), surrogate::uniform_distribution(buckets_));
  return out;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty vector");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ExtrapolationRow eval_extrapolation(
    const surrogate::Predictor& predictor, const std::string& model_name,
    const std::vector<taskgen::TaskBundle>& eval_bundles,
    std::size_t context_size, std::mt19937_64& rng,
    std::size_t queries_per_task) {
  if (eval_bundles.empty()) {
    throw std::invalid_argument("eval_extrapolation: no evaluation tasks");
  }
  if (static_cast<int>(context_size) > predictor.max_context()) {
    throw std::invalid_argument("eval_extrapolation: context size exceeds "
                                "predictor max_context");
  }
  std::vector<double> lls, mses;
  double wall = 0.0;
  for (const auto& bundle : eval_bundles) {
    const std::size_t r = bundle.configs.size();
    const std::size_t t_epochs = bundle.epochs;
    if (r * (t_epochs - 1) < context_size) {
      throw std::invalid_argument("eval_extrapolation: task '" +
                                  bundle.task_id +
                                  "' too small for requested context size");
    }
    std::vector<hpspace::NormalizedConfig> xs;
    xs.reserve(r);
    for (const auto& c : bundle.configs) xs.push_back(hpspace::normalize(c));

    // Context: random configs with random epoch prefixes until the budget
    // of observations is filled.
    std::vector<std::size_t> prefix(r, 0);
    std::vector<std::size_t> order(r);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<surrogate::CurvePoint> context;
    std::size_t oi = 0;
    while (context.size() < context_size) {
      const std::size_t row = order[oi % r];
      oi++;
      if (prefix[row] >= t_epochs - 1) continue;
      std::uniform_int_distribution<std::size_t> len_dist(1, t_epochs - 1);
      const std::size_t target =
          std::max(prefix[row], std::min(t_epochs - 1, len_dist(rng)));
      for (std::size_t e = prefix[row] + 1;
           e <= target && context.size() < context_size; ++e) {
        surrogate::CurvePoint p;
        p.x = xs[row];
        p.t = static_cast<double>(e) / static_cast<double>(t_epochs);
        p.y = bundle.curves[row][e - 1];
        p.has_y = true;
        context.push_back(p);
        prefix[row] = e;
      }
    }

    // Queries strictly after each curve's context prefix.
    std::vector<surrogate::CurvePoint> queries;
    std::vector<double> targets;
    std::uniform_int_distribution<std::size_t> row_dist(0, r - 1);
    while (queries.size() < queries_per_task) {
      const std::size_t row = row_dist(rng);
      if (prefix[row] >= t_epochs) continue;
      std::uniform_int_distribution<std::size_t> e_dist(prefix[row] + 1,
                                                        t_epochs);
      const std::size_t e = e_dist(rng);
      surrogate::CurvePoint p;
      p.x = xs[row];
      p.t = static_cast<double>(e) / static_cast<double>(t_epochs);
      queries.push_back(p);
      targets.push_back(bundle.curves[row][e - 1]);
    }

    const auto t0 = std::chrono::steady_clock::now();
    const auto dists = predictor(context, queries);
    const auto t1 = std::chrono::steady_clock::now();
    wall += std::chrono::duration<double>(t1 - t0).count();

    double ll = 0.0, mse = 0.0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      ll += -surrogate::nll_loss(dists[i], targets[i]);
      const double d = surrogate::mean_of(dists[i]) - targets[i];
      mse += d * d;
    }
    lls.push_back(ll / static_cast<double>(queries.size()));
    mses.push_back(mse / static_cast<double>(queries.size()));
  }
  ExtrapolationRow row;
  row.model = model_name;
  row.context_size = context_size;
  row.median_ll = median(lls);
  row.median_mse = median(mses);
  row.wall_seconds = wall;
  return row;
}

std::vector<double> normalized_regret(
    const std::vector<ftbo::TrajectoryPoint>& trajectory,
    const ftbo::TaskTable& table) {
  if (table.num_configs() == 0) {
    throw std::invalid_argument("normalized_regret: empty table");
  }
  const double y_star = table.best_score();
  const double y_min = table.worst_score();
  std::vector<double> out;
  out.reserve(trajectory.size());
  for (const auto& p : trajectory) {
    if (y_star == y_min) {
      out.push_back(0.0);
    } else {
      out.push_back((y_star - p.incumbent_score) / (y_star - y_min));
    }
  }
  return out;
}

std::map<std::string, std::vector<double>> average_rank(
    const RegretGrid& grid) {
  if (grid.empty()) throw std::invalid_argument("average_rank: empty grid");
  // all policies must share cells and budget length
  const auto& first = grid.begin()->second;
  const std::size_t n_cells = first.size();
  std::size_t budget = 0;
  for (const auto& [cell, traj] : first) budget = traj.size();
  for (const auto& [policy, cells] : grid) {
    if (cells.size() != n_cells) {
      throw std::invalid_argument("average_rank: mismatched (task,seed) grids");
    }
    for (const auto& [cell, traj] : cells) {
      if (!first.count(cell) || traj.size() != budget) {
        throw std::invalid_argument("average_rank: mismatched grids");
      }
    }
  }

  std::vector<std::string> policies;
  for (const auto& [policy, _] : grid) policies.push_back(policy);
  std::map<std::string, std::vector<double>> ranks;
  for (const auto& p : policies) ranks[p].assign(budget, 0.0);

  for (const auto& [cell, _] : first) {
    for (std::size_t b = 0; b < budget; ++b) {
      // rank policies by regret, ties get the mean of tied ranks
      std::vector<std::pair<double, std::size_t>> vals;
      for (std::size_t pi = 0; pi < policies.size(); ++pi) {
        vals.push_back({grid.at(policies[pi]).at(cell)[b], pi});
      }
      std::stable_sort(vals.begin(), vals.end(),
                       [](const auto& a, const auto& b2) {
                         return a.first < b2.first;
                       });
      std::size_t i = 0;
      while (i < vals.size()) {
        std::size_t j = i;
        while (j + 1 < vals.size() && vals[j + 1].first == vals[i].first) ++j;
        const double mean_rank =
            0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t k = i; k <= j; ++k) {
          ranks[policies[vals[k].second]][b] += mean_rank;
        }
        i = j + 1;
      }
    }
  }
  for (auto& [p, v] : ranks) {
    for (auto& x : v) x /= static_cast<double>(n_cells);
  }
  return ranks;
}

LeaveOutResult leave_out_eval(
    const std::vector<taskgen::TaskBundle>& train_bundles,
    const LeaveOutConfig& config) {
  if (config.holdout_fraction <= 0.0 || config.holdout_fraction >= 1.0) {
    throw std::invalid_argument("leave_out_eval: fraction must be in (0,1)");
  }
  std::vector<taskgen::TaskBundle> kept, held;
  std::size_t held_count = 0;
  std::mt19937_64 split_rng(config.split_seed);
  for (const auto& bundle : train_bundles) {
    const std::size_t r = bundle.configs.size();
    const std::size_t n_hold = static_cast<std::size_t>(
        std::llround(config.holdout_fraction * static_cast<double>(r)));
    if (n_hold < 2 || r - n_hold < 2) {
      throw std::invalid_argument("leave_out_eval: split leaves < 2 configs "
                                  "on one side for task '" + bundle.task_id +
                                  "'");
    }
    held_count = n_hold;
    std::vector<std::size_t> order(r);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), split_rng);

    taskgen::TaskBundle kb = bundle, hb = bundle;
    kb.configs.clear();
    kb.curves.clear();
    hb.configs.clear();
    hb.curves.clear();
    for (std::size_t i = 0; i < r; ++i) {
      auto& dst = (i < n_hold) ? hb : kb;
      dst.configs.push_back(bundle.configs[order[i]]);
      dst.curves.push_back(bundle.curves[order[i]]);
    }
    kept.push_back(std::move(kb));
    held.push_back(std::move(hb));
  }

  const auto trained =
      train::train_surrogate(kept, config.model, config.train);
  surrogate::ModelPredictor predictor(trained.weights);
  std::mt19937_64 eval_rng(config.split_seed ^ 0x517CC1B727220A95ull);
  LeaveOutResult res;
  res.kept = eval_extrapolation(predictor, "kept", kept, config.context_size,
                                eval_rng);
  res.held_out = eval_extrapolation(predictor, "held_out", held,
                                    config.context_size, eval_rng);
  res.held_out_configs_per_task = held_count;
  return res;
}

SuiteConfig SuiteConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open suite config: " +
                                   path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("suite config parse error: " +
                             std::string(e.what()));
  }
  SuiteConfig c;
  c.preset = j.value("preset", std::string("desk"));
  if (c.preset == "paper") {
    c.contexts = {400, 1000, 1600};
    c.budget = 1000;
    c.seeds = {0, 1, 2, 3, 4};
  } else if (c.preset == "desk") {
    c.contexts = {50, 100, 200};
    c.budget = 300;
    c.seeds = {0, 1, 2, 3, 4};
  } else {
    throw std::invalid_argument("unknown suite preset '" + c.preset + "'");
  }
  for (const auto& t : j.at("tasks")) {
    c.task_dirs.emplace_back(t.get<std::string>());
  }
  for (const auto& p : j.at("policies")) {
    c.policies.push_back(p.get<std::string>());
  }
  if (j.contains("seeds")) {
    c.seeds.clear();
    for (const auto& s : j["seeds"]) c.seeds.push_back(s.get<std::uint64_t>());
  }
  if (j.contains("budget")) c.budget = j["budget"].get<std::size_t>();
  if (j.contains("contexts")) {
    c.contexts.clear();
    for (const auto& s : j["contexts"]) {
      c.contexts.push_back(s.get<std::size_t>());
    }
  }
  if (j.contains("checkpoint")) {
    c.checkpoint = std::filesystem::path(j["checkpoint"].get<std::string>());
  }
  if (j.contains("loss_csv")) {
    c.loss_csv = std::filesystem::path(j["loss_csv"].get<std::string>());
  }
  if (j.contains("pool_size")) c.pool_size = j["pool_size"].get<std::size_t>();
  return c;
}

bool run_suite(const SuiteConfig& config,
               const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "trajectories");

  std::optional<surrogate::ModelWeights> weights;
  if (config.checkpoint) {
    weights = surrogate::load_checkpoint(*config.checkpoint);
  }
  for (const auto& p : config.policies) {
    if (ftbo::policy_from_string(p) == ftbo::Policy::kFtbo && !weights) {
      throw std::invalid_argument("suite: ftbo policy requires a checkpoint");
    }
  }

  struct Cell {
    std::string task;
    std::string policy;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  std::vector<ftbo::TaskTable> tables;
  std::vector<std::string> task_ids;
  for (const auto& dir : config.task_dirs) {
    tables.emplace_back(taskgen::load_bundle(dir));
    task_ids.push_back(tables.back().task_id());
  }
  for (std::size_t ti = 0; ti < tables.size(); ++ti) {
    for (const auto& p : config.policies) {
      for (auto s : config.seeds) cells.push_back({task_ids[ti], p, s});
    }
  }

  std::optional<surrogate::ModelPredictor> mp;
  if (weights) mp.emplace(*weights);

  RegretGrid grid;
  std::vector<std::string> failures;
  for (const auto& cell : cells) {
    const auto ti = static_cast<std::size_t>(
        std::find(task_ids.begin(), task_ids.end(), cell.task) -
        task_ids.begin());
    try {
      const surrogate::Predictor* pred = mp ? &*mp : nullptr;
      ftbo::FtboOptions opt;
      opt.pool_size = config.pool_size;
      const auto traj = ftbo::run_policy(
          tables[ti], ftbo::policy_from_string(cell.policy), config.budget,
          cell.seed, pred, opt);
      const auto file = out_dir / "trajectories" /
                        (cell.task + "__" + cell.policy + "__seed" +
                         std::to_string(cell.seed) + ".csv");
      ftbo::write_trajectory(traj, file);
      grid[cell.policy][{cell.task, cell.seed}] =
          normalized_regret(traj, tables[ti]);
    } catch (const std::exception& e) {
      failures.push_back(cell.task + "/" + cell.policy + "/seed" +
                         std::to_string(cell.seed) + ": " + e.what());
    }
  }

  // aggregate mean normalized regret per policy per budget step
  {
    std::ofstream f(out_dir / "regret.csv");
    f << "budget";
    for (const auto& [policy, _] : grid) f << "," << policy;
    f << "\n";
    std::map<std::string, std::vector<double>> mean_regret;
    for (const auto& [policy, cellmap] : grid) {
      std::vector<double> acc(config.budget, 0.0);
      for (const auto& [cellkey, traj] : cellmap) {
        for (std::size_t b = 0; b < traj.size(); ++b) acc[b] += traj[b];
      }
      for (auto& v : acc) v /= static_cast<double>(cellmap.size());
      mean_regret[policy] = std::move(acc);
    }
    for (std::size_t b = 0; b < config.budget; ++b) {
      f << (b + 1);
      for (const auto& [policy, v] : mean_regret) f << "," << fmt(v[b]);
      f << "\n";
    }
    if (!grid.empty()) {
      std::vector<double> xs(config.budget);
      std::iota(xs.begin(), xs.end(), 1.0);
      write_svg_lines(out_dir / "regret_vs_budget.svg",
                      "mean normalized regret", "budget (epochs)", "regret",
                      xs, mean_regret);
    }
  }
  {
    std::ofstream f(out_dir / "rank.csv");
    if (!grid.empty()) {
      const auto ranks = average_rank(grid);
      f << "budget";
      for (const auto& [policy, _] : ranks) f << "," << policy;
      f << "\n";
      for (std::size_t b = 0; b < config.budget; ++b) {
        f << (b + 1);
        for (const auto& [policy, v] : ranks) f << "," << fmt(v[b]);
        f << "\n";
      }
      std::vector<double> xs(config.budget);
      std::iota(xs.begin(), xs.end(), 1.0);
      write_svg_lines(out_dir / "rank_vs_budget.svg", "average rank",
                      "budget (epochs)", "rank", xs, ranks);
    }
  }
  if (config.loss_csv) {
    std::ifstream f(*config.loss_csv);
    std::string line;
    std::vector<double> xs, nll;
    std::getline(f, line);
    while (std::getline(f, line)) {
      std::stringstream ss(line);
      std::string a, b;
      std::getline(ss, a, ',');
      std::getline(ss, b, ',');
      xs.push_back(std::stod(a));
      nll.push_back(std::stod(b));
    }
    if (!xs.empty()) {
      write_svg_lines(out_dir / "loss_vs_epoch.svg", "training loss", "epoch",
                      "mean NLL", xs, {{"train", nll}});
    }
  }
  if (!failures.empty()) {
    std::ofstream f(out_dir / "failures.txt");
    for (const auto& s : failures) f << s << "\n";
  }
  return failures.empty();
}

void write_svg_lines(const std::filesystem::path& path,
                     const std::string& title, const std::string& x_label,
                     const std::string& y_label,
                     const std::vector<double>& xs,
                     const std::map<std::string, std::vector<double>>& series) {
  constexpr int kW = 720, kH = 480, kPad = 60;
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  double xmin = xs.front(), xmax = xs.back();
  double ymin = 1e300, ymax = -1e300;
  for (const auto& [name, ys] : series) {
    for (double y : ys) {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (ymax == ymin) {
    ymax += 1.0;
    ymin -= 1.0;
  }
  auto px = [&](double x) {
    return kPad + (x - xmin) / (xmax - xmin) * (kW - 2 * kPad);
  };
  auto py = [&](double y) {
    return kH - kPad - (y - ymin) / (ymax - ymin) * (kH - 2 * kPad);
  };
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  char buf[256];
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
    << "\" height=\"" << kH << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" "
       "font-size=\"16\">" << title << "</text>\n";
  f << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12
    << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label
    << "</text>\n";
  f << "<text x=\"16\" y=\"" << kH / 2
    << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
    << kH / 2 << ")\">" << y_label << "</text>\n";
  // axes with min/max tick labels
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" "
                "stroke=\"black\"/>\n",
                kPad, kH - kPad, kW - kPad, kH - kPad);
  f << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" "
                "stroke=\"black\"/>\n",
                kPad, kPad, kPad, kH - kPad);
  f << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.6g</text>\n", 8,
                kH - kPad, ymin);
  f << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.6g</text>\n", 8,
                kPad, ymax);
  f << buf;
  int ci = 0;
  int ly = kPad;
  for (const auto& [name, ys] : series) {
    const char* color = kColors[ci % 8];
    f << "<polyline fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(xs[i]), py(ys[i]));
      f << buf;
    }
    f << "\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-size=\"11\" "
                  "fill=\"%s\">%s</text>\n",
                  kW - kPad - 120, ly += 16, color, name.c_str());
    f << buf;
    ++ci;
  }
  f << "</svg>\n";
}

}  // namespace apfn::harness
