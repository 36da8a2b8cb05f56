#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "apfn/surrogate.hpp"
#include "apfn/taskgen.hpp"

namespace apfn::train {

enum class Augmentation { kNone, kCdf, kMixup, kMixupNoHp, kCdfWithHp };

Augmentation augmentation_from_string(const std::string& s);
std::string to_string(Augmentation a);

struct TrainConfig {
  int batch_size = 6;
  double peak_lr = 1e-4;
  int warmup_epochs = 1;
  int total_epochs = 20;
  long curves_total = 0;  // recorded curve-draw budget; derived when 0
  Augmentation augmentation = Augmentation::kCdf;
  double context_fraction_min = 0.0;
  double context_fraction_max = 1.0;
  std::uint64_t seed = 0;

  // One "epoch" of the schedule is a fixed number of optimizer steps.
  int steps_per_epoch = 1000;
  int curves_per_element = 3;
  int max_queries_per_curve = 4;

  static TrainConfig paper_preset();  // batch 25, peak 1e-4, warmup 200
  static TrainConfig desk_preset();
  void validate() const;
  long total_steps() const {
    return static_cast<long>(total_epochs) * steps_per_epoch;
  }
};

double lr_schedule(long step, const TrainConfig& config);

struct TrainBatch {
  std::vector<surrogate::BatchElement> elements;
};

/// Curve/epoch selection draws from select_rng, augmentation parameters
/// from aug_rng; identical seeds give identical (curve, epoch) choices
/// across augmentation modes.
TrainBatch build_batch(const std::vector<taskgen::TaskBundle>& bundles,
                       const TrainConfig& config,
                       const surrogate::ModelConfig& model_config,
                       std::mt19937_64& select_rng, std::mt19937_64& aug_rng);

struct TrainResult {
  surrogate::ModelWeights weights;
  std::vector<double> loss_trace;  // mean NLL per epoch
};

/// Full training loop. When out_dir is set, writes config.json, loss.csv
/// and model.ckpt there.
TrainResult train_surrogate(
    const std::vector<taskgen::TaskBundle>& bundles,
    const surrogate::ModelConfig& model_config, const TrainConfig& config,
    const std::optional<std::filesystem::path>& out_dir = std::nullopt,
    bool verbose = false);

}  // namespace apfn::train
