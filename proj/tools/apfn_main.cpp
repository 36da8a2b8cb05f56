// Command-line front end: task generation, surrogate training, extrapolation
// evaluation, single HPO runs, suite execution and report regeneration.
//
// Exit codes: 0 success, 1 runtime failure (e.g. failed suite cell),
// 2 configuration / usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "apfn/ftbo.hpp"
#include "apfn/harness.hpp"
#include "apfn/hpspace.hpp"
#include "apfn/surrogate.hpp"
#include "apfn/taskgen.hpp"
#include "apfn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// "a..b" -> [a, b] inclusive.
std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& s) {
  const auto pos = s.find("..");
  if (pos == std::string::npos) {
    const std::uint64_t v = std::stoull(s);
    return {v, v};
  }
  const std::uint64_t a = std::stoull(s.substr(0, pos));
  const std::uint64_t b = std::stoull(s.substr(pos + 2));
  if (b < a) throw std::invalid_argument("seed range end before start: " + s);
  return {a, b};
}

int cmd_gen_tasks(const std::string& family, const std::string& seeds,
                  std::size_t configs, std::size_t epochs, const fs::path& out,
                  bool serial) {
  const auto [lo, hi] = parse_seed_range(seeds);
  fs::create_directories(out);
  for (std::uint64_t seed = lo; seed <= hi; ++seed) {
    apfn::taskgen::TaskSpec spec{family, seed};
    const auto bundle =
        apfn::taskgen::generate_bundle(spec, configs, epochs, !serial);
    const fs::path dir = out / bundle.task_id;
    apfn::taskgen::save_bundle(bundle, dir);
    std::cout << "wrote " << dir.string() << " (" << configs << " configs x "
              << epochs << " epochs)\n";
  }
  return 0;
}

apfn::surrogate::ModelConfig model_from_json(const json& j) {
  apfn::surrogate::ModelConfig m;
  const std::string preset = j.value("preset", "desk");
  if (preset == "paper") {
    m = apfn::surrogate::ModelConfig::paper_preset();
  } else if (preset == "desk") {
    m = apfn::surrogate::ModelConfig::desk_preset();
  } else {
    throw std::invalid_argument("unknown model preset: " + preset);
  }
  if (j.contains("layers")) m.layers = j["layers"].get<int>();
  if (j.contains("heads")) m.heads = j["heads"].get<int>();
  if (j.contains("embed_dim")) m.embed_dim = j["embed_dim"].get<int>();
  if (j.contains("hidden_dim")) m.hidden_dim = j["hidden_dim"].get<int>();
  if (j.contains("buckets")) m.buckets = j["buckets"].get<int>();
  if (j.contains("max_context")) m.max_context = j["max_context"].get<int>();
  m.validate();
  return m;
}

apfn::train::TrainConfig train_from_json(const json& j) {
  apfn::train::TrainConfig t;
  const std::string preset = j.value("preset", "desk");
  if (preset == "paper") {
    t = apfn::train::TrainConfig::paper_preset();
  } else if (preset == "desk") {
    t = apfn::train::TrainConfig::desk_preset();
  } else {
    throw std::invalid_argument("unknown train preset: " + preset);
  }
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
  if (j.contains("peak_lr")) t.peak_lr = j["peak_lr"].get<double>();
  if (j.contains("warmup_epochs"))
    t.warmup_epochs = j["warmup_epochs"].get<int>();
  if (j.contains("total_epochs")) t.total_epochs = j["total_epochs"].get<int>();
  if (j.contains("steps_per_epoch"))
    t.steps_per_epoch = j["steps_per_epoch"].get<int>();
  if (j.contains("curves_per_element"))
    t.curves_per_element = j["curves_per_element"].get<int>();
  if (j.contains("max_queries_per_curve"))
    t.max_queries_per_curve = j["max_queries_per_curve"].get<int>();
  if (j.contains("augmentation"))
    t.augmentation = apfn::train::augmentation_from_string(
        j["augmentation"].get<std::string>());
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  t.validate();
  return t;
}

std::vector<apfn::taskgen::TaskBundle> load_bundles(
    const std::vector<fs::path>& dirs) {
  std::vector<apfn::taskgen::TaskBundle> bundles;
  bundles.reserve(dirs.size());
  for (const auto& d : dirs) bundles.push_back(apfn::taskgen::load_bundle(d));
  return bundles;
}

// A task directory either is a bundle (has task.json) or holds bundles.
std::vector<fs::path> expand_task_dirs(const fs::path& root) {
  if (fs::exists(root / "task.json")) return {root};
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "task.json"))
      dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty())
    throw std::runtime_error("no task bundles under " + root.string());
  return dirs;
}

int cmd_train(const fs::path& config_path, const fs::path& out) {
  std::ifstream f(config_path);
  if (!f) throw std::invalid_argument("cannot open " + config_path.string());
  json j;
  f >> j;
  if (!j.contains("tasks"))
    throw std::invalid_argument("train config needs a \"tasks\" array");
  std::vector<fs::path> dirs;
  for (const auto& t : j["tasks"])
    for (const auto& d : expand_task_dirs(t.get<std::string>()))
      dirs.push_back(d);
  const auto model = model_from_json(j.value("model", json::object()));
  const auto tc = train_from_json(j.value("train", json::object()));
  const auto bundles = load_bundles(dirs);
  std::cout << "training on " << bundles.size() << " task bundles, "
            << tc.total_steps() << " steps\n";
  apfn::train::train_surrogate(bundles, model, tc, out, /*verbose=*/true);
  std::cout << "wrote " << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval_extrapolation(const std::string& model_arg, const fs::path& tasks,
                           std::size_t context, const fs::path& out_csv,
                           std::uint64_t seed) {
  const auto bundles = load_bundles(expand_task_dirs(tasks));
  std::optional<apfn::surrogate::ModelWeights> weights;
  std::unique_ptr<apfn::surrogate::Predictor> predictor;
  std::string name;
  if (model_arg == "uniform") {
    predictor = std::make_unique<apfn::harness::UniformPredictor>(1000);
    name = "uniform";
  } else {
    weights = apfn::surrogate::load_checkpoint(model_arg);
    predictor = std::make_unique<apfn::surrogate::ModelPredictor>(*weights);
    name = fs::path(model_arg).stem().string();
  }
  std::mt19937_64 rng(seed);
  const auto row = apfn::harness::eval_extrapolation(*predictor, name, bundles,
                                                     context, rng);
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  std::ofstream f(out_csv);
  f << "model,context_size,median_ll,median_mse,wall_seconds\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g,%.17g,%.17g\n",
                row.model.c_str(), row.context_size, row.median_ll,
                row.median_mse, row.wall_seconds);
  f << buf;
  std::cout << name << " context " << context << ": median LL "
            << row.median_ll << ", median MSE " << row.median_mse << "\n";
  return 0;
}

int cmd_hpo_run(const std::string& policy, const fs::path& task,
                std::size_t budget, std::uint64_t seed, const fs::path& out,
                const std::string& model_arg, std::size_t pool_size) {
  const auto bundle = apfn::taskgen::load_bundle(task);
  const apfn::ftbo::TaskTable table(bundle);
  const auto pol = apfn::ftbo::policy_from_string(policy);

  std::optional<apfn::surrogate::ModelWeights> weights;
  std::unique_ptr<apfn::surrogate::Predictor> predictor;
  if (pol == apfn::ftbo::Policy::kFtbo) {
    if (model_arg.empty())
      throw std::invalid_argument("--model is required for the ftbo policy");
    if (model_arg == "uniform") {
      predictor = std::make_unique<apfn::harness::UniformPredictor>(1000);
    } else {
      weights = apfn::surrogate::load_checkpoint(model_arg);
      predictor = std::make_unique<apfn::surrogate::ModelPredictor>(*weights);
    }
  }
  apfn::ftbo::FtboOptions opt;
  opt.pool_size = pool_size;
  const auto traj = apfn::ftbo::run_policy(table, pol, budget, seed,
                                           predictor.get(), opt);
  fs::create_directories(out);
  apfn::ftbo::write_trajectory(traj, out / "trajectory.csv");
  const auto regret = apfn::harness::normalized_regret(traj, table);
  {
    std::ofstream f(out / "regret.csv");
    f << "budget,normalized_regret\n";
    char buf[64];
    for (std::size_t i = 0; i < regret.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, regret[i]);
      f << buf;
    }
  }
  std::cout << policy << " on " << table.task_id() << ": final incumbent "
            << traj.back().incumbent_score << ", final regret "
            << regret.back() << "\n";
  return 0;
}

std::pair<std::vector<double>, std::map<std::string, std::vector<double>>>
read_wide_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("empty csv: " + path.string());
  std::vector<std::string> names;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) names.push_back(cell);
  }
  if (names.size() < 2)
    throw std::runtime_error("expected at least two columns in " +
                             path.string());
  std::vector<double> xs;
  std::map<std::string, std::vector<double>> series;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    xs.push_back(std::stod(cell));
    for (std::size_t i = 1; i < names.size(); ++i) {
      std::getline(ss, cell, ',');
      series[names[i]].push_back(std::stod(cell));
    }
  }
  return {xs, series};
}

int cmd_report(const fs::path& in, const fs::path& out) {
  fs::create_directories(out);
  bool wrote = false;
  if (fs::exists(in / "regret.csv")) {
    auto [xs, series] = read_wide_csv(in / "regret.csv");
    apfn::harness::write_svg_lines(out / "regret_vs_budget.svg",
                                   "mean normalized regret", "budget (epochs)",
                                   "regret", xs, series);
    wrote = true;
  }
  if (fs::exists(in / "rank.csv")) {
    auto [xs, series] = read_wide_csv(in / "rank.csv");
    apfn::harness::write_svg_lines(out / "rank_vs_budget.svg", "average rank",
                                   "budget (epochs)", "rank", xs, series);
    wrote = true;
  }
  if (fs::exists(in / "loss.csv")) {
    auto [xs, series] = read_wide_csv(in / "loss.csv");
    apfn::harness::write_svg_lines(out / "loss_vs_epoch.svg", "training loss",
                                   "epoch", "mean NLL", xs, series);
    wrote = true;
  }
  if (!wrote)
    throw std::invalid_argument("no regret.csv, rank.csv or loss.csv in " +
                                in.string());
  std::cout << "wrote plots to " << out.string() << "\n";
  return 0;
}

int cmd_suite(const fs::path& config_path, const fs::path& out) {
  const auto config = apfn::harness::SuiteConfig::from_json_file(config_path);
  const bool ok = apfn::harness::run_suite(config, out);
  if (!ok) {
    std::cerr << "suite finished with failed cells; see "
              << (out / "failures.txt").string() << "\n";
    return 1;
  }
  std::cout << "suite complete: " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adam-pfn: freeze-thaw HPO with a learning-curve surrogate"};
  app.require_subcommand(1);

  // gen-tasks
  std::string family = "quadratic", seeds = "0";
  std::size_t configs = 50, epochs = 50;
  fs::path out_dir;
  bool serial = false;
  auto* gen = app.add_subcommand("gen-tasks", "Generate task bundles");
  gen->add_option("--family", family,
                  "quadratic | noisy-quadratic | mlp-synth");
  gen->add_option("--seeds", seeds, "Seed or inclusive range a..b");
  gen->add_option("--configs", configs, "HP configurations per task");
  gen->add_option("--epochs", epochs, "Epochs per curve");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_flag("--serial", serial, "Use the serial reference path");

  // train
  fs::path train_config, train_out;
  auto* tr = app.add_subcommand("train", "Train a surrogate");
  tr->add_option("--config", train_config, "JSON training config")->required();
  tr->add_option("--out", train_out, "Output directory")->required();

  // eval-extrapolation
  std::string model_arg = "uniform";
  fs::path tasks_dir, eval_csv;
  std::size_t context = 100;
  std::uint64_t eval_seed = 0;
  auto* ev = app.add_subcommand("eval-extrapolation",
                                "Extrapolation LL/MSE benchmark");
  ev->add_option("--model", model_arg, "Checkpoint path or \"uniform\"")
      ->required();
  ev->add_option("--tasks", tasks_dir, "Bundle directory")->required();
  ev->add_option("--context", context, "Context size");
  ev->add_option("--out", eval_csv, "Output CSV")->required();
  ev->add_option("--seed", eval_seed, "Evaluation RNG seed");

  // hpo-run
  std::string policy = "random", hpo_model;
  fs::path hpo_task, hpo_out;
  std::size_t budget = 300, pool_size = 200;
  std::uint64_t hpo_seed = 0;
  auto* hr = app.add_subcommand("hpo-run", "Run one HPO policy on one task");
  hr->add_option("--policy", policy, "ftbo | random | sh | hyperband | asha")
      ->required();
  hr->add_option("--task", hpo_task, "Task bundle directory")->required();
  hr->add_option("--budget", budget, "Total epoch budget")->required();
  hr->add_option("--seed", hpo_seed, "Run seed");
  hr->add_option("--out", hpo_out, "Output directory")->required();
  hr->add_option("--model", hpo_model, "Surrogate checkpoint (ftbo only)");
  hr->add_option("--pool-size", pool_size, "ftbo candidate pool size");

  // report
  fs::path report_in, report_out;
  auto* rp = app.add_subcommand("report", "Regenerate SVG plots from CSVs");
  rp->add_option("--in", report_in, "Directory with aggregate CSVs")
      ->required();
  rp->add_option("--out", report_out, "Output directory")->required();

  // suite
  fs::path suite_config, suite_out;
  auto* su = app.add_subcommand("suite", "Run a full benchmark suite");
  su->add_option("--config", suite_config, "Suite JSON config")->required();
  su->add_option("--out", suite_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_tasks(family, seeds, configs, epochs, out_dir, serial);
    if (tr->parsed()) return cmd_train(train_config, train_out);
    if (ev->parsed())
      return cmd_eval_extrapolation(model_arg, tasks_dir, context, eval_csv,
                                    eval_seed);
    if (hr->parsed())
      return cmd_hpo_run(policy, hpo_task, budget, hpo_seed, hpo_out,
                         hpo_model, pool_size);
    if (rp->parsed()) return cmd_report(report_in, report_out);
    if (su->parsed()) return cmd_suite(suite_config, suite_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
