#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "apfn/ftbo.hpp"
#include "apfn/surrogate.hpp"
#include "apfn/taskgen.hpp"
#include "apfn/train.hpp"

namespace apfn::harness {

class UniformPredictor final : public surrogate::Predictor {
 public:
  explicit UniformPredictor(int buckets) : buckets_(buckets) {}
  int buckets() const override { return buckets_; }
  int max_context() const override { return 1 << 30; }
  std::vector<surrogate::PredictiveDistribution> operator()(
      const std::vector<surrogate::CurvePoint>& context,
      const std::vector<surrogate::CurvePoint>& queries) const override;

 private:
  int buckets_;
};

struct ExtrapolationRow {
  std::string model;
  std::size_t context_size = 0;
  double median_ll = 0.0;
  double median_mse = 0.0;
  double wall_seconds = 0.0;  // time spent inside predict calls
};

/// Median LL / MSE across tasks for one predictor at one context size.
ExtrapolationRow eval_extrapolation(
    const surrogate::Predictor& predictor, const std::string& model_name,
    const std::vector<taskgen::TaskBundle>& eval_bundles,
    std::size_t context_size, std::mt19937_64& rng,
    std::size_t queries_per_task = 500);

std::vector<double> normalized_regret(
    const std::vector<ftbo::TrajectoryPoint>& trajectory,
    const ftbo::TaskTable& table);

/// policy -> (task,seed) -> regret trajectory; all trajectories share one
/// budget grid. Returns policy -> mean rank per budget step.
using RegretGrid =
    std::map<std::string, std::map<std::pair<std::string, std::uint64_t>,
                                   std::vector<double>>>;
std::map<std::string, std::vector<double>> average_rank(const RegretGrid& grid);

struct LeaveOutConfig {
  double holdout_fraction = 0.4;
  std::size_t context_size = 100;
  surrogate::ModelConfig model;
  train::TrainConfig train;
  std::uint64_t split_seed = 0;
};

struct LeaveOutResult {
  ExtrapolationRow kept;
  ExtrapolationRow held_out;
  std::size_t held_out_configs_per_task = 0;
};

/// Splits configs per task, trains on the kept split, evaluates
/// extrapolation on both splits.
LeaveOutResult leave_out_eval(
    const std::vector<taskgen::TaskBundle>& train_bundles,
    const LeaveOutConfig& config);

struct SuiteConfig {
  std::string preset = "desk";
  std::vector<std::filesystem::path> task_dirs;
  std::vector<std::string> policies;
  std::vector<std::uint64_t> seeds;
  std::size_t budget = 300;
  std::vector<std::size_t> contexts;       // extrapolation context sizes
  std::optional<std::filesystem::path> checkpoint;  // required for ftbo
  std::optional<std::filesystem::path> loss_csv;    // plotted when present
  std::size_t pool_size = 200;

  static SuiteConfig from_json_file(const std::filesystem::path& path);
};

/// Runs the policy x task x seed grid, writes trajectory CSVs, aggregate
/// CSVs and SVG plots. Returns false when any cell failed.
bool run_suite(const SuiteConfig& config, const std::filesystem::path& out_dir);

/// Minimal self-contained SVG line plot; series drawn in map order.
void write_svg_lines(const std::filesystem::path& path,
                     const std::string& title, const std::string& x_label,
                     const std::string& y_label,
                     const std::vector<double>& xs,
                     const std::map<std::string, std::vector<double>>& series);

}  // namespace apfn::harness
