#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "apfn/hpspace.hpp"

namespace apfn::taskgen {

using Matrix = std::vector<std::vector<double>>;

/// Per-epoch scores in [0,1], higher is better.
struct LearningCurve {
  std::vector<double> values;
};

/// One generated task: R configs, R curves of T epochs each.
struct TaskBundle {
  std::string task_id;
  std::string family;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;              // T
  std::vector<hpspace::HpConfig> configs;  // R rows
  Matrix curves;                       // R x T normalized scores
};

struct Adam8pState {
  std::vector<double> params;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  explicit Adam8pState(std::vector<double> p)
      : params(std::move(p)), m(params.size(), 0.0), v(params.size(), 0.0) {}
  Adam8pState() = default;
};

double lr_at(double lr0, double linear_decay, double expon_decay,
             std::uint64_t t);

/// One Adam8p update in place. l1/l2 act on the gradient; the decay
/// schedule scales the step via lr_at.
void adam8p_step(Adam8pState& state, const std::vector<double>& grad,
                 const hpspace::HpConfig& hp);

struct TaskSpec {
  std::string family;  // quadratic | noisy-quadratic | mlp-synth
  std::uint64_t seed = 0;
};

/// Raw per-epoch mean losses (lower better); diverged epochs are NaN.
std::vector<double> run_task(const TaskSpec& spec, const hpspace::HpConfig& hp,
                             std::size_t epochs);

/// Quantile-clipped min-max flip to scores in [0,1], higher better.
Matrix normalize_curves(const Matrix& raw_losses);

/// Full pipeline: sample R configs, run them, normalize. Parallel across
/// configs when parallel is true; the serial path is the reference.
TaskBundle generate_bundle(const TaskSpec& spec, std::size_t num_configs,
                           std::size_t epochs, bool parallel = true);

void save_bundle(const TaskBundle& bundle, const std::filesystem::path& dir);
TaskBundle load_bundle(const std::filesystem::path& dir);

}  // namespace apfn::taskgen
