#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "apfn/surrogate.hpp"
#include "apfn/taskgen.hpp"

namespace apfn::ftbo {

/// Tabular evaluation oracle: advancing a config one epoch reads the next
/// value of its precomputed curve.
class TaskTable {
 public:
  explicit TaskTable(const taskgen::TaskBundle& bundle);

  std::size_t num_configs() const { return configs_.size(); }
  std::size_t max_epochs() const { return epochs_; }
  /// Score at 1-based epoch.
  double score(std::size_t config_id, std::size_t epoch) const;
  const hpspace::NormalizedConfig& config(std::size_t config_id) const {
    return configs_[config_id];
  }
  double best_score() const { return best_; }
  double worst_score() const { return worst_; }
  const std::string& task_id() const { return task_id_; }

 private:
  std::string task_id_;
  std::size_t epochs_ = 0;
  std::vector<hpspace::NormalizedConfig> configs_;
  std::vector<std::vector<double>> curves_;
  double best_ = 0.0, worst_ = 0.0;
};

/// One randomized improvement draw: lookahead horizon and threshold over
/// the incumbent.
struct AcquisitionSample {
  std::size_t horizon = 1;  // epochs
  double threshold = 1e-2;  // > 0
};

struct ConfigRecord {
  std::size_t config_id = 0;
  std::vector<double> observed;  // scores for epochs 1..len
};

struct FreezeThawState {
  std::vector<ConfigRecord> records;
  std::size_t budget_used = 0;
  std::size_t budget_limit = 0;
  double incumbent_score = 0.0;
  std::size_t incumbent_config = 0;
  bool has_incumbent = false;
};

struct TrajectoryPoint {
  std::size_t epochs_spent = 0;    // cumulative
  std::size_t config_id = 0;
  std::size_t epoch_of_config = 0; // 1-based epoch just evaluated
  double observed_score = 0.0;
  double incumbent_score = 0.0;
};

enum class Policy { kFtbo, kRandom, kHyperband, kAsha, kSh };
Policy policy_from_string(const std::string& s);
std::string to_string(Policy p);

struct FtboOptions {
  std::size_t pool_size = 200;  // frozen partials + fresh candidates
};

/// Tail-mass improvement score for one candidate at its lookahead epoch.
double mfpi_score(const FreezeThawState& state,
                  const surrogate::Predictor& predictor,
                  const TaskTable& table, std::size_t candidate_id,
                  const AcquisitionSample& sample, std::mt19937_64& rng);

/// Advance the chosen candidate one epoch; returns its config id.
std::size_t ftbo_step(FreezeThawState& state,
                      const surrogate::Predictor& predictor,
                      const TaskTable& table, std::mt19937_64& rng,
                      const FtboOptions& options,
                      std::vector<TrajectoryPoint>* trajectory);

/// Full run of one policy on one tabular task; trajectory has exactly
/// budget_epochs points. predictor is required for kFtbo only.
std::vector<TrajectoryPoint> run_policy(
    const TaskTable& table, Policy policy, std::size_t budget_epochs,
    std::uint64_t seed, const surrogate::Predictor* predictor = nullptr,
    const FtboOptions& options = {});

/// Rung cutoffs of the first successive-halving bracket.
std::vector<std::size_t> hyperband_rungs(std::size_t min_b, std::size_t max_b,
                                         std::size_t eta);

/// Indices of the top ceil(n/eta) scores, ties by insertion order.
std::vector<std::size_t> sh_promote(const std::vector<double>& scores,
                                    std::size_t eta);

struct AshaEntry {
  std::size_t config_id = 0;
  double score = 0.0;
  bool promoted = false;
};

struct AshaAction {
  bool promote = false;
  std::size_t rung = 0;   // valid when promote
  std::size_t index = 0;  // entry index within that rung
};

/// Scan rungs top-down; promote the best unpromoted entry that sits in the
/// top 1/eta of its rung, otherwise grow a new config at the lowest rung.
AshaAction asha_decide(const std::vector<std::vector<AshaEntry>>& rungs,
                       std::size_t eta);

void write_trajectory(const std::vector<TrajectoryPoint>& trajectory,
                      const std::filesystem::path& path);
std::vector<TrajectoryPoint> load_trajectory(const std::filesystem::path& path);

}  // namespace apfn::ftbo
