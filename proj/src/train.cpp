#include "apfn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "apfn/augment.hpp"

namespace apfn::train {

using json = nlohmann::json;

Augmentation augmentation_from_string(const std::string& s) {
  if (s == "none") return Augmentation::kNone;
  if (s == "cdf") return Augmentation::kCdf;
  if (s == "mixup") return Augmentation::kMixup;
  if (s == "mixup_no_hp") return Augmentation::kMixupNoHp;
  if (s == "cdf_with_hp") return Augmentation::kCdfWithHp;
  throw std::invalid_argument("unknown augmentation '" + s + "'");
}

std::string to_string(Augmentation a) {
  switch (a) {
    case Augmentation::kNone: return "none";
    case Augmentation::kCdf: return "cdf";
    case Augmentation::kMixup: return "mixup";
    case Augmentation::kMixupNoHp: return "mixup_no_hp";
    case Augmentation::kCdfWithHp: return "cdf_with_hp";
  }
  return "?";
}

TrainConfig TrainConfig::paper_preset() {
  TrainConfig c;
  c.batch_size = 25;
  c.peak_lr = 1e-4;
  c.warmup_epochs = 200;
  c.total_epochs = 2000;
  c.curves_total = 2000000;
  return c;
}

TrainConfig TrainConfig::desk_preset() {
  TrainConfig c;
  c.batch_size = 6;
  c.peak_lr = 1e-4;
  c.warmup_epochs = 1;
  c.total_epochs = 20;
  c.curves_total = 0;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  // total_epochs == 0 is the degenerate "return initial weights" run.
  if (total_epochs < 0 || warmup_epochs < 0 ||
      (total_epochs > 0 && warmup_epochs >= total_epochs) ||
      (total_epochs == 0 && warmup_epochs != 0)) {
    throw std::invalid_argument("warmup_epochs must be < total_epochs");
  }
  if (context_fraction_min < 0.0 || context_fraction_max > 1.0 ||
      context_fraction_min > context_fraction_max) {
    throw std::invalid_argument("bad context_fraction_range");
  }
  if (curves_per_element < 1 || max_queries_per_curve < 1 ||
      steps_per_epoch < 1) {
    throw std::invalid_argument("bad batch shape parameters");
  }
}

double lr_schedule(long step, const TrainConfig& config) {
  const long warm = static_cast<long>(config.warmup_epochs) *
                    config.steps_per_epoch;
  const long total = config.total_steps();
  if (step < 0 || step > total) {
    throw std::out_of_range("lr_schedule: step outside [0, total]");
  }
  if (step < warm) {
    return config.peak_lr * static_cast<double>(step) /
           static_cast<double>(warm);
  }
  const double frac = static_cast<double>(step - warm) /
                      static_cast<double>(total - warm);
  return config.peak_lr * 0.5 * (1.0 + std::cos(M_PI * frac));
}

namespace {

// Augmented view of one task: normalized configs plus curve matrix.
struct TaskView {
  std::vector<hpspace::NormalizedConfig> configs;
  augment::Matrix curves;
};

TaskView make_view(const taskgen::TaskBundle& b) {
  TaskView v;
  v.configs.reserve(b.configs.size());
  for (const auto& c : b.configs) v.configs.push_back(hpspace::normalize(c));
  v.curves = b.curves;
  return v;
}

std::size_t pick_partner(std::size_t self, const taskgen::TaskBundle& b,
                         const std::vector<taskgen::TaskBundle>& bundles,
                         std::mt19937_64& rng) {
  // Partner drawn uniformly from the same family pool (any other task if
  // the family has no sibling of matching shape).
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    if (i == self) continue;
    if (bundles[i].curves.size() != b.curves.size() ||
        bundles[i].epochs != b.epochs) {
      continue;
    }
    if (bundles[i].family == b.family) pool.push_back(i);
  }
  if (pool.empty()) {
    for (std::size_t i = 0; i < bundles.size(); ++i) {
      if (i != self && bundles[i].curves.size() == b.curves.size() &&
          bundles[i].epochs == b.epochs) {
        pool.push_back(i);
      }
    }
  }
  if (pool.empty()) return self;
  std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
  return pool[d(rng)];
}

}  // namespace

TrainBatch build_batch(const std::vector<taskgen::TaskBundle>& bundles,
                       const TrainConfig& config,
                       const surrogate::ModelConfig& model_config,
                       std::mt19937_64& select_rng, std::mt19937_64& aug_rng) {
  if (bundles.empty()) {
    throw std::invalid_argument("build_batch: empty bundle set");
  }
  config.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  TrainBatch batch;
  batch.elements.reserve(config.batch_size);
  for (int el = 0; el < config.batch_size; ++el) {
    surrogate::BatchElement element;
    for (int attempt = 0; attempt < 100; ++attempt) {
      element = surrogate::BatchElement{};
      std::uniform_int_distribution<std::size_t> task_dist(0,
                                                           bundles.size() - 1);
      const std::size_t ti = task_dist(select_rng);
      const auto& bundle = bundles[ti];
      const std::size_t r = bundle.curves.size();
      const std::size_t t_epochs = bundle.epochs;
      if (r == 0 || t_epochs == 0) continue;

      TaskView view = make_view(bundle);
      switch (config.augmentation) {
        case Augmentation::kNone:
          break;
        case Augmentation::kCdf: {
          const auto warp = augment::sample_warp(aug_rng);
          view.curves = augment::cdf_augment_task(view.curves, warp);
          break;
        }
        case Augmentation::kCdfWithHp: {
          const auto warp = augment::sample_warp(aug_rng);
          view.curves = augment::cdf_augment_task(view.curves, warp);
          augment::BetaWarp hp_warp;
          hp_warp.mu = std::uniform_real_distribution<double>(0.0, 1.0)(aug_rng);
          hp_warp.kappa =
              std::uniform_real_distribution<double>(2.0, 3.0)(aug_rng);
          for (auto& x : view.configs) {
            x = augment::cdf_augment_hp(x, hp_warp);
          }
          break;
        }
        case Augmentation::kMixup:
        case Augmentation::kMixupNoHp: {
          const std::size_t pj = pick_partner(ti, bundle, bundles, aug_rng);
          const double lambda1 =
              std::uniform_real_distribution<double>(0.0, 1.0)(aug_rng);
          if (pj != ti) {
            view.curves =
                augment::mixup_task(view.curves, bundles[pj].curves, lambda1);
          }
          if (config.augmentation == Augmentation::kMixup) {
            // HP mixup: each row mixed with a random partner row.
            std::uniform_int_distribution<std::size_t> row_dist(0, r - 1);
            const double lambda2 =
                std::uniform_real_distribution<double>(0.0, 1.0)(aug_rng);
            TaskView mixed = view;
            for (std::size_t i = 0; i < r; ++i) {
              const std::size_t j = row_dist(aug_rng);
              auto pr = augment::mixup_hp({view.configs[i], view.curves[i]},
                                          {view.configs[j], view.curves[j]},
                                          lambda2);
              mixed.configs[i] = pr.first;
              mixed.curves[i] = std::move(pr.second);
            }
            view = std::move(mixed);
          }
          break;
        }
      }

      // Curve + epoch selection; all draws here come from select_rng so
      // the choices are identical across augmentation modes.
      const std::size_t n_curves =
          std::min<std::size_t>(config.curves_per_element, r);
      std::vector<std::size_t> order(r);
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = 0; i < n_curves; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, r - 1);
        std::swap(order[i], order[d(select_rng)]);
      }

      std::uniform_real_distribution<double> frac(config.context_fraction_min,
                                                  config.context_fraction_max);
      for (std::size_t ci = 0; ci < n_curves; ++ci) {
        const std::size_t row = order[ci];
        const auto& x = view.configs[row];
        const auto& curve = view.curves[row];
        const std::size_t cutoff = std::min<std::size_t>(
            t_epochs,
            static_cast<std::size_t>(frac(select_rng) *
                                     static_cast<double>(t_epochs + 1)));
        for (std::size_t e = 1; e <= cutoff; ++e) {
          surrogate::CurvePoint p;
          p.x = x;
          p.t = static_cast<double>(e) / static_cast<double>(t_epochs);
          p.y = curve[e - 1];
          p.has_y = true;
          element.context.push_back(p);
        }
        // queries drawn from the strictly-later epochs
        std::vector<std::size_t> later;
        for (std::size_t e = cutoff + 1; e <= t_epochs; ++e) later.push_back(e);
        const std::size_t n_q = std::min<std::size_t>(
            config.max_queries_per_curve, later.size());
        for (std::size_t i = 0; i < n_q; ++i) {
          std::uniform_int_distribution<std::size_t> d(i, later.size() - 1);
          std::swap(later[i], later[d(select_rng)]);
        }
        for (std::size_t i = 0; i < n_q; ++i) {
          surrogate::CurvePoint p;
          p.x = x;
          p.t = static_cast<double>(later[i]) / static_cast<double>(t_epochs);
          p.has_y = false;
          element.queries.push_back(p);
          element.targets.push_back(curve[later[i] - 1]);
        }
      }

      if (element.queries.empty()) continue;  // degenerate cutoffs, resample

      if (static_cast<int>(element.context.size()) >
          model_config.max_context) {
        std::vector<std::size_t> keep(element.context.size());
        std::iota(keep.begin(), keep.end(), 0);
        for (int i = 0; i < model_config.max_context; ++i) {
          std::uniform_int_distribution<std::size_t> d(i, keep.size() - 1);
          std::swap(keep[i], keep[d(select_rng)]);
        }
        keep.resize(model_config.max_context);
        std::sort(keep.begin(), keep.end());
        std::vector<surrogate::CurvePoint> sub;
        sub.reserve(keep.size());
        for (std::size_t i : keep) sub.push_back(element.context[i]);
        element.context = std::move(sub);
      }
      break;
    }
    if (element.queries.empty()) {
      throw std::runtime_error("build_batch: could not build a non-degenerate "
                               "element after 100 attempts");
    }
    batch.elements.push_back(std::move(element));
  }
  return batch;
}

TrainResult train_surrogate(
    const std::vector<taskgen::TaskBundle>& bundles,
    const surrogate::ModelConfig& model_config, const TrainConfig& config,
    const std::optional<std::filesystem::path>& out_dir, bool verbose) {
  config.validate();
  model_config.validate();
  if (bundles.empty()) {
    throw std::invalid_argument("train_surrogate: empty bundle set");
  }

  std::mt19937_64 init_rng(config.seed ^ 0xA5F152EEDB91C3ull);
  std::mt19937_64 select_rng(config.seed * 2 + 1);
  std::mt19937_64 aug_rng(config.seed * 2 + 2);

  TrainResult res;
  res.weights = surrogate::init_model(model_config, init_rng);

  const long total = config.total_steps();
  taskgen::Adam8pState opt(std::vector<double>(
      res.weights.params.data(),
      res.weights.params.data() + res.weights.params.size()));
  hpspace::HpConfig adam_hp;
  adam_hp.beta1 = 0.9;
  adam_hp.beta2 = 0.999;
  adam_hp.epsilon = 1e-8;
  adam_hp.l1 = adam_hp.l2 = 0.0;
  adam_hp.linear_decay = adam_hp.expon_decay = 0.0;

  std::vector<double> grad_vec(opt.params.size());
  double epoch_loss = 0.0;
  double last_lr = 0.0;
  for (long step = 0; step < total; ++step) {
    const auto batch =
        build_batch(bundles, config, model_config, select_rng, aug_rng);
    surrogate::ForwardBackwardResult fb;
    try {
      fb = surrogate::forward_backward(res.weights, batch.elements);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("training aborted at step " +
                               std::to_string(step) + ": " + e.what());
    }
    adam_hp.learning_rate = lr_schedule(step, config);
    last_lr = adam_hp.learning_rate;
    std::copy(fb.grad.data(), fb.grad.data() + fb.grad.size(),
              grad_vec.begin());
    taskgen::adam8p_step(opt, grad_vec, adam_hp);
    std::copy(opt.params.begin(), opt.params.end(),
              res.weights.params.data());

    epoch_loss += fb.loss;
    if ((step + 1) % config.steps_per_epoch == 0) {
      res.loss_trace.push_back(epoch_loss /
                               static_cast<double>(config.steps_per_epoch));
      epoch_loss = 0.0;
      if (verbose) {
        std::fprintf(stderr, "epoch %zu/%d mean_nll=%.4f lr=%.2e\n",
                     res.loss_trace.size(), config.total_epochs,
                     res.loss_trace.back(), last_lr);
      }
    }
  }

  if (out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(*out_dir);
    json j;
    j["train"] = {{"batch_size", config.batch_size},
                  {"peak_lr", config.peak_lr},
                  {"warmup_epochs", config.warmup_epochs},
                  {"total_epochs", config.total_epochs},
                  {"curves_total",
                   config.curves_total > 0
                       ? config.curves_total
                       : total * config.batch_size * config.curves_per_element},
                  {"augmentation", to_string(config.augmentation)},
                  {"context_fraction_range",
                   {config.context_fraction_min, config.context_fraction_max}},
                  {"seed", config.seed},
                  {"steps_per_epoch", config.steps_per_epoch},
                  {"curves_per_element", config.curves_per_element},
                  {"max_queries_per_curve", config.max_queries_per_curve}};
    j["model"] = {{"layers", model_config.layers},
                  {"heads", model_config.heads},
                  {"embed_dim", model_config.embed_dim},
                  {"hidden_dim", model_config.hidden_dim},
                  {"buckets", model_config.buckets},
                  {"max_context", model_config.max_context}};
    {
      std::ofstream f(*out_dir / "config.json");
      f << j.dump(2) << "\n";
    }
    {
      std::ofstream f(*out_dir / "loss.csv");
      f << "epoch,mean_nll,lr\n";
      for (std::size_t e = 0; e < res.loss_trace.size(); ++e) {
        char buf[80];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", e + 1,
                      res.loss_trace[e],
                      lr_schedule(static_cast<long>((e + 1)) *
                                      config.steps_per_epoch -
                                  1,
                                  config));
        f << buf;
      }
    }
    surrogate::save_checkpoint(res.weights, *out_dir / "model.ckpt");
  }
  return res;
}

}  // namespace apfn::train
