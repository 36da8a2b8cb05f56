#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <random>
#include <vector>

#include "apfn/hpspace.hpp"

namespace apfn::surrogate {

/// One observation of a learning curve: config, relative epoch, and the
/// score when observed (context points carry y, query points do not).
struct CurvePoint {
  hpspace::NormalizedConfig x;
  double t = 0.0;  // epoch / T_max, in (0,1]
  double y = 0.0;
  bool has_y = false;
};

struct PredictiveDistribution {
  std::vector<double> probs;  // B nonnegative entries summing to 1
};

int discretize(double y, int buckets);
double nll_loss(const PredictiveDistribution& dist, double y);
double mean_of(const PredictiveDistribution& dist);
double quantile_of(const PredictiveDistribution& dist, double q);
double mass_above(const PredictiveDistribution& dist, double threshold);
PredictiveDistribution uniform_distribution(int buckets);

struct ModelConfig {
  int layers = 3;
  int heads = 2;
  int embed_dim = 128;
  int hidden_dim = 256;
  int buckets = 100;
  int max_context = 512;

  static ModelConfig paper_preset();  // 6 / 4 / 512 / 1024 / 1000 / 2000
  static ModelConfig desk_preset();   // 3 / 2 / 128 / 256 / 100 / 512
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Flat parameter offsets; tensor order here is also the checkpoint order.
struct Layout {
  static constexpr int kInDim = hpspace::kNumHps + 3;  // x, t, y, flag

  struct LayerOffsets {
    long ln1_g, ln1_b;
    long wq, bq, wk, bk, wv, bv, wo, bo;
    long ln2_g, ln2_b;
    long w1, b1, w2, b2;
  };

  long embed_w = 0, embed_b = 0;
  std::vector<LayerOffsets> layers;
  long lnf_g = 0, lnf_b = 0;
  long head_w = 0, head_b = 0;
  long total = 0;

  explicit Layout(const ModelConfig& cfg);
};

struct ModelWeights {
  ModelConfig config;
  Eigen::VectorXd params;
};

ModelWeights init_model(const ModelConfig& config, std::mt19937_64& rng);

std::vector<PredictiveDistribution> predict(
    const ModelWeights& weights, const std::vector<CurvePoint>& context,
    const std::vector<CurvePoint>& queries);

/// One training example: context observations plus queries with targets.
struct BatchElement {
  std::vector<CurvePoint> context;
  std::vector<CurvePoint> queries;
  std::vector<double> targets;  // one per query, in [0,1]
};

struct ForwardBackwardResult {
  double loss = 0.0;  // mean NLL over all queries in the batch
  Eigen::VectorXd grad;
};

/// Loss + full gradient. Elements run in parallel when parallel is true;
/// per-element gradients are reduced in index order, so the result is
/// identical to the serial reference path.
ForwardBackwardResult forward_backward(const ModelWeights& weights,
                                       const std::vector<BatchElement>& batch,
                                       bool parallel = true);

double batch_loss(const ModelWeights& weights,
                  const std::vector<BatchElement>& batch);

std::vector<std::vector<PredictiveDistribution>> predict_batch(
    const ModelWeights& weights,
    const std::vector<BatchElement>& batch, bool parallel = true);

void save_checkpoint(const ModelWeights& weights,
                     const std::filesystem::path& path);
ModelWeights load_checkpoint(const std::filesystem::path& path);

/// Anything that maps (context, queries) to bucketized distributions.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual int buckets() const = 0;
  virtual int max_context() const = 0;
  virtual std::vector<PredictiveDistribution> operator()(
      const std::vector<CurvePoint>& context,
      const std::vector<CurvePoint>& queries) const = 0;
};

class ModelPredictor final : public Predictor {
 public:
  explicit ModelPredictor(const ModelWeights& weights) : weights_(&weights) {}
  int buckets() const override { return weights_->config.buckets; }
  int max_context() const override { return weights_->config.max_context; }
  std::vector<PredictiveDistribution> operator()(
      const std::vector<CurvePoint>& context,
      const std::vector<CurvePoint>& queries) const override {
    return predict(*weights_, context, queries);
  }

 private:
  const ModelWeights* weights_;
};

}  // namespace apfn::surrogate
