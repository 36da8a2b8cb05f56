#include "apfn/taskgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace apfn::taskgen {

namespace {

using json = nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t mix_seed(std::uint64_t seed, const hpspace::HpConfig& hp) {
  std::uint64_t h = seed * 0x9e3779b97f4a7c15ull + 0x5851f42d4c957f2dull;
  for (double v : hp.as_array()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    h ^= bits + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
  return h;
}

}  // namespace

double lr_at(double lr0, double linear_decay, double expon_decay,
             std::uint64_t t) {
  const double td = static_cast<double>(t);
  return lr0 * std::max(0.0, 1.0 - linear_decay * td) *
         std::exp(-expon_decay * td);
}

void adam8p_step(Adam8pState& state, const std::vector<double>& grad,
                 const hpspace::HpConfig& hp) {
  if (grad.size() != state.params.size()) {
    throw std::invalid_argument("adam8p_step: gradient length mismatch");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) {
      throw std::runtime_error("adam8p_step: non-finite gradient at step " +
                               std::to_string(state.t));
    }
  }
  const double lr = lr_at(hp.learning_rate, hp.linear_decay, hp.expon_decay,
                          state.t);
  const std::uint64_t t_new = state.t + 1;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t_new));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t_new));
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    const double p = state.params[i];
    const double sign_p = (p > 0.0) - (p < 0.0);
    const double g = grad[i] + hp.l1 * sign_p + hp.l2 * p;
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    state.params[i] -= lr * m_hat / (std::sqrt(v_hat) + hp.epsilon);
  }
  state.t = t_new;
}

namespace {

struct Objective {
  std::function<double(const std::vector<double>&)> loss;
  std::function<std::vector<double>(const std::vector<double>&)> grad;
  std::vector<double> init;
  std::size_t steps_per_epoch = 30;
};

Objective make_quadratic(std::uint64_t seed, const hpspace::HpConfig& hp,
                         bool noisy) {
  constexpr int dim = 10;
  std::mt19937_64 rng(seed * 2654435761ull + 17);
  std::normal_distribution<double> normal(0.0, 1.0);

  // A = Q diag(lambda) Q^T with a log-spaced spectrum (1e-3 .. 10) under a
  // random rotation. The ill conditioning keeps epoch-50 residuals
  // configuration-dependent instead of letting every stable run collapse to
  // machine zero.
  Eigen::MatrixXd g(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) g(i, j) = normal(rng);
  const Eigen::MatrixXd q =
      Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Eigen::VectorXd lambda(dim);
  for (int i = 0; i < dim; ++i) {
    lambda[i] = 1e-3 * std::pow(1e4, i / (dim - 1.0));
  }
  const Eigen::MatrixXd am = q * lambda.asDiagonal() * q.transpose();
  auto a = std::vector<std::vector<double>>(dim, std::vector<double>(dim, 0.0));
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a[i][j] = am(i, j);
  std::vector<double> center(dim), init(dim);
  for (auto& v : center) v = normal(rng);
  for (auto& v : init) v = 2.0 * normal(rng);

  const double sigma = noisy ? 0.05 * (1.0 + static_cast<double>(seed % 8)) : 0.0;
  auto noise_rng =
      std::make_shared<std::mt19937_64>(mix_seed(seed, hp) | 1ull);

  Objective obj;
  obj.init = init;
  // One step per epoch: 50 epochs only partially solve the bowl, so final
  // residuals stay well separated between configurations instead of
  // collapsing onto a common floor.
  obj.steps_per_epoch = 1;
  obj.loss = [a, center](const std::vector<double>& p) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
      double ai = 0.0;
      for (int j = 0; j < dim; ++j) ai += a[i][j] * (p[j] - center[j]);
      s += (p[i] - center[i]) * ai;
    }
    return 0.5 * s;
  };
  obj.grad = [a, center, sigma, noise_rng](const std::vector<double>& p) {
    std::vector<double> g(dim, 0.0);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) g[i] += a[i][j] * (p[j] - center[j]);
    }
    if (sigma > 0.0) {
      std::normal_distribution<double> n(0.0, sigma);
      for (auto& v : g) v += n(*noise_rng);
    }
    return g;
  };
  return obj;
}

Objective make_mlp_synth(std::uint64_t seed) {
  constexpr int n = 128, in_dim = 8, hidden = 4, classes = 2;
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + 3);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Two gaussian clusters with a random separation direction.
  auto data = std::make_shared<std::vector<std::array<double, in_dim>>>(n);
  auto labels = std::make_shared<std::vector<int>>(n);
  std::array<double, in_dim> dir{};
  double dn = 0.0;
  for (auto& v : dir) {
    v = normal(rng);
    dn += v * v;
  }
  dn = std::sqrt(dn);
  for (auto& v : dir) v = 1.5 * v / dn;
  // 10% flipped labels + a 4-unit hidden layer: the network cannot
  // interpolate the noise, so the training-loss floor stays positive and
  // hyperparameter-dependent.
  std::bernoulli_distribution flip(0.1);
  for (int i = 0; i < n; ++i) {
    const int lab = i % classes;
    for (int d = 0; d < in_dim; ++d) {
      (*data)[i][d] = normal(rng) + (lab == 0 ? dir[d] : -dir[d]);
    }
    (*labels)[i] = flip(rng) ? 1 - lab : lab;
  }

  const int n_params = in_dim * hidden + hidden + hidden * classes + classes;
  std::vector<double> init(n_params);
  for (int i = 0; i < in_dim * hidden; ++i)
    init[i] = normal(rng) / std::sqrt(static_cast<double>(in_dim));
  for (int i = 0; i < hidden; ++i) init[in_dim * hidden + i] = 0.0;
  for (int i = 0; i < hidden * classes; ++i)
    init[in_dim * hidden + hidden + i] =
        normal(rng) / std::sqrt(static_cast<double>(hidden));
  init[n_params - 2] = init[n_params - 1] = 0.0;

  // Forward + backward of the 1-hidden-layer tanh net, full batch.
  auto eval = [data, labels](const std::vector<double>& p, bool want_grad,
                             std::vector<double>* grad_out) {
    const double* w1 = p.data();
    const double* b1 = p.data() + in_dim * hidden;
    const double* w2 = b1 + hidden;
    const double* b2 = w2 + hidden * classes;
    if (want_grad) grad_out->assign(p.size(), 0.0);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      double h[hidden], hp_[hidden];
      for (int j = 0; j < hidden; ++j) {
        double s = b1[j];
        for (int d = 0; d < in_dim; ++d) s += w1[d * hidden + j] * (*data)[i][d];
        h[j] = std::tanh(s);
        hp_[j] = 1.0 - h[j] * h[j];
      }
      double logits[classes];
      for (int c = 0; c < classes; ++c) {
        double s = b2[c];
        for (int j = 0; j < hidden; ++j) s += w2[j * classes + c] * h[j];
        logits[c] = s;
      }
      const double mx = std::max(logits[0], logits[1]);
      const double z = std::exp(logits[0] - mx) + std::exp(logits[1] - mx);
      const int y = (*labels)[i];
      loss += -(logits[y] - mx - std::log(z));
      if (want_grad) {
        double dlogit[classes];
        for (int c = 0; c < classes; ++c) {
          dlogit[c] = std::exp(logits[c] - mx) / z - (c == y ? 1.0 : 0.0);
        }
        double dh[hidden] = {0.0};
        double* g = grad_out->data();
        for (int c = 0; c < classes; ++c) {
          g[in_dim * hidden + hidden + hidden * classes + c] += dlogit[c];
          for (int j = 0; j < hidden; ++j) {
            g[in_dim * hidden + hidden + j * classes + c] += dlogit[c] * h[j];
            dh[j] += dlogit[c] * w2[j * classes + c];
          }
        }
        for (int j = 0; j < hidden; ++j) {
          const double ds = dh[j] * hp_[j];
          g[in_dim * hidden + j] += ds;
          for (int d = 0; d < in_dim; ++d) {
            g[d * hidden + j] += ds * (*data)[i][d];
          }
        }
      }
    }
    if (want_grad) {
      for (auto& v : *grad_out) v /= n;
    }
    return loss / n;
  };

  Objective obj;
  obj.init = init;
  obj.steps_per_epoch = 10;
  obj.loss = [eval](const std::vector<double>& p) {
    return eval(p, false, nullptr);
  };
  obj.grad = [eval](const std::vector<double>& p) {
    std::vector<double> g;
    eval(p, true, &g);
    return g;
  };
  return obj;
}

}  // namespace

std::vector<double> run_task(const TaskSpec& spec, const hpspace::HpConfig& hp,
                             std::size_t epochs) {
  if (epochs < 1) throw std::invalid_argument("run_task: epochs must be >= 1");
  Objective obj;
  if (spec.family == "quadratic") {
    obj = make_quadratic(spec.seed, hp, false);
  } else if (spec.family == "noisy-quadratic") {
    obj = make_quadratic(spec.seed, hp, true);
  } else if (spec.family == "mlp-synth") {
    obj = make_mlp_synth(spec.seed);
  } else {
    throw std::invalid_argument("run_task: unknown family '" + spec.family +
                                "'");
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> losses(epochs, nan);
  Adam8pState state(obj.init);
  // Divergence spikes are clipped at 10x the initial loss so that they do
  // not blow up the task-level normalization range and squash the
  // distinctions between well-behaved runs.
  const double clip = 10.0 * std::max(obj.loss(obj.init), 1e-12);
  bool diverged = false;
  for (std::size_t e = 0; e < epochs && !diverged; ++e) {
    double acc = 0.0;
    for (std::size_t s = 0; s < obj.steps_per_epoch; ++s) {
      const double l = obj.loss(state.params);
      if (!std::isfinite(l)) {
        diverged = true;
        break;
      }
      acc += std::min(l, clip);
      const auto g = obj.grad(state.params);
      bool finite = true;
      for (double v : g) finite = finite && std::isfinite(v);
      if (!finite) {
        diverged = true;
        break;
      }
      adam8p_step(state, g, hp);
      for (double v : state.params) {
        if (!std::isfinite(v)) {
          diverged = true;
          break;
        }
      }
      if (diverged) break;
      if (s + 1 == obj.steps_per_epoch) {
        losses[e] = acc / static_cast<double>(obj.steps_per_epoch);
      }
    }
  }
  return losses;
}

Matrix normalize_curves(const Matrix& raw_losses) {
  if (raw_losses.empty()) {
    throw std::invalid_argument("normalize_curves: empty matrix");
  }
  std::vector<double> finite;
  for (const auto& row : raw_losses) {
    for (double v : row) {
      if (std::isfinite(v)) finite.push_back(v);
    }
  }
  Matrix out(raw_losses.size());
  if (finite.empty()) {
    for (std::size_t r = 0; r < raw_losses.size(); ++r) {
      out[r].assign(raw_losses[r].size(), 0.0);
    }
    return out;
  }
  std::sort(finite.begin(), finite.end());
  // Winsorize only the bad tail (divergence spikes). The good side must
  // keep the exact minimum, otherwise every near-optimal loss clamps to the
  // same normalized score and the table loses its unique argmax.
  const double clip_min = finite.front();
  // Ceiling-index empirical quantile: exact max for tiny tables, 99th
  // percentile winsorization for realistically sized ones.
  const std::size_t hi_idx = static_cast<std::size_t>(
      std::ceil(0.99 * static_cast<double>(finite.size() - 1)));
  const double clip_max = finite[hi_idx];
  for (std::size_t r = 0; r < raw_losses.size(); ++r) {
    out[r].resize(raw_losses[r].size());
    for (std::size_t t = 0; t < raw_losses[r].size(); ++t) {
      const double v = raw_losses[r][t];
      if (!std::isfinite(v)) {
        out[r][t] = 0.0;
      } else if (clip_max == clip_min) {
        out[r][t] = 0.5;
      } else {
        const double c = std::clamp(v, clip_min, clip_max);
        out[r][t] = (clip_max - c) / (clip_max - clip_min);
      }
    }
  }
  return out;
}

TaskBundle generate_bundle(const TaskSpec& spec, std::size_t num_configs,
                           std::size_t epochs, bool parallel) {
  std::mt19937_64 rng(spec.seed);
  TaskBundle bundle;
  bundle.task_id = spec.family + "-" + std::to_string(spec.seed);
  bundle.family = spec.family;
  bundle.seed = spec.seed;
  bundle.epochs = epochs;
  bundle.configs = hpspace::sample_configs(rng, num_configs);

  Matrix raw(num_configs);
  const auto run_one = [&](std::size_t i) {
    raw[i] = run_task(spec, bundle.configs[i], epochs);
  };
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(num_configs); ++i) {
      run_one(static_cast<std::size_t>(i));
    }
  } else {
    for (std::size_t i = 0; i < num_configs; ++i) run_one(i);
  }
  bundle.curves = normalize_curves(raw);
  return bundle;
}

void save_bundle(const TaskBundle& bundle, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (bundle.configs.size() != bundle.curves.size()) {
    throw std::invalid_argument("save_bundle: configs/curves row mismatch");
  }
  fs::create_directories(dir);

  json meta;
  meta["task_id"] = bundle.task_id;
  meta["family"] = bundle.family;
  meta["seed"] = bundle.seed;
  meta["T"] = bundle.epochs;
  meta["hp_space"] = json::parse(hpspace::space_to_json());
  {
    std::ofstream f(dir / "task.json");
    f << meta.dump(2) << "\n";
  }

  {
    std::ofstream f(dir / "configs.csv");
    const auto& space = hpspace::default_space();
    for (std::size_t i = 0; i < space.size(); ++i) {
      f << (i ? "," : "") << space[i].name;
    }
    f << "\n";
    for (const auto& c : bundle.configs) {
      const auto a = c.as_array();
      for (int i = 0; i < hpspace::kNumHps; ++i) {
        f << (i ? "," : "") << fmt_double(a[i]);
      }
      f << "\n";
    }
  }
  {
    std::ofstream f(dir / "curves.csv");
    for (const auto& row : bundle.curves) {
      if (row.size() != bundle.epochs) {
        throw std::invalid_argument("save_bundle: curve length != T");
      }
      for (std::size_t t = 0; t < row.size(); ++t) {
        f << (t ? "," : "") << fmt_double(row[t]);
      }
      f << "\n";
    }
  }
}

namespace {

std::vector<std::vector<double>> read_csv_matrix(
    const std::filesystem::path& path, bool skip_header) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && skip_header) {
      first = false;
      continue;
    }
    first = false;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("corrupt cell '" + cell + "' in " +
                                 path.string());
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

TaskBundle load_bundle(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(dir / "task.json");
  if (!mf) throw std::runtime_error("missing task.json in " + dir.string());
  json meta = json::parse(mf, nullptr, /*allow_exceptions=*/true);

  TaskBundle bundle;
  bundle.task_id = meta.at("task_id").get<std::string>();
  bundle.family = meta.at("family").get<std::string>();
  bundle.seed = meta.at("seed").get<std::uint64_t>();
  bundle.epochs = meta.at("T").get<std::size_t>();

  const auto config_rows = read_csv_matrix(dir / "configs.csv", true);
  for (const auto& row : config_rows) {
    if (row.size() != hpspace::kNumHps) {
      throw std::runtime_error("configs.csv: expected 8 columns in " +
                               dir.string());
    }
    std::array<double, hpspace::kNumHps> a{};
    std::copy(row.begin(), row.end(), a.begin());
    bundle.configs.push_back(hpspace::HpConfig::from_array(a));
  }

  bundle.curves = read_csv_matrix(dir / "curves.csv", false);
  if (bundle.curves.size() != bundle.configs.size()) {
    throw std::runtime_error("bundle " + dir.string() +
                             ": configs rows != curves rows");
  }
  for (const auto& row : bundle.curves) {
    if (row.size() != bundle.epochs) {
      throw std::runtime_error("bundle " + dir.string() +
                               ": curve length != T");
    }
    for (double v : row) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw std::runtime_error("bundle " + dir.string() +
                                 ": curve value outside [0,1] or non-finite");
      }
    }
  }
  return bundle;
}

}  // namespace apfn::taskgen
