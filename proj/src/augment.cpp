#include "apfn/augment.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace apfn::augment {

BetaShape beta_params(const BetaWarp& warp) {
  BetaShape s;
  s.alpha = warp.mu * (warp.kappa - 2.0) + 1.0;
  s.beta = (1.0 - warp.mu) * (warp.kappa - 2.0) + 1.0;
  return s;
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double beta_cdf(double x, const BetaShape& shape) {
  const double a = shape.alpha;
  const double b = shape.beta;
  if (x < 0.0 || x > 1.0) {
    throw std::out_of_range("beta_cdf: x outside [0,1]: " + std::to_string(x));
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  // Symmetry switch keeps the continued fraction in its fast-converging range.
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

BetaWarp sample_warp(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mu_dist(0.0, 1.0);
  std::uniform_real_distribution<double> kappa_dist(2.0, 5.0);
  BetaWarp w;
  w.mu = mu_dist(rng);
  w.kappa = kappa_dist(rng);
  return w;
}

Matrix cdf_augment_task(const Matrix& curves, const BetaWarp& warp) {
  const BetaShape shape = beta_params(warp);
  Matrix out(curves.size());
  for (std::size_t r = 0; r < curves.size(); ++r) {
    out[r].resize(curves[r].size());
    for (std::size_t t = 0; t < curves[r].size(); ++t) {
      const double y = curves[r][t];
      if (y < 0.0 || y > 1.0) {
        throw std::out_of_range("cdf_augment_task: curve value outside [0,1]: " +
                                std::to_string(y));
      }
      out[r][t] = beta_cdf(y, shape);
    }
  }
  return out;
}

Matrix mixup_task(const Matrix& lc_a, const Matrix& lc_b, double lambda1) {
  if (lc_a.size() != lc_b.size()) {
    throw std::invalid_argument("mixup_task: row count mismatch");
  }
  Matrix out(lc_a.size());
  for (std::size_t r = 0; r < lc_a.size(); ++r) {
    if (lc_a[r].size() != lc_b[r].size()) {
      throw std::invalid_argument("mixup_task: column count mismatch");
    }
    out[r].resize(lc_a[r].size());
    for (std::size_t t = 0; t < lc_a[r].size(); ++t) {
      out[r][t] = lambda1 * lc_a[r][t] + (1.0 - lambda1) * lc_b[r][t];
    }
  }
  return out;
}

std::pair<hpspace::NormalizedConfig, std::vector<double>> mixup_hp(
    const std::pair<hpspace::NormalizedConfig, std::vector<double>>& pair_a,
    const std::pair<hpspace::NormalizedConfig, std::vector<double>>& pair_b,
    double lambda2) {
  if (pair_a.second.size() != pair_b.second.size()) {
    throw std::invalid_argument("mixup_hp: curve length mismatch");
  }
  std::pair<hpspace::NormalizedConfig, std::vector<double>> out;
  for (int i = 0; i < hpspace::kNumHps; ++i) {
    out.first.x[i] =
        lambda2 * pair_a.first.x[i] + (1.0 - lambda2) * pair_b.first.x[i];
  }
  out.second.resize(pair_a.second.size());
  for (std::size_t t = 0; t < pair_a.second.size(); ++t) {
    out.second[t] =
        lambda2 * pair_a.second[t] + (1.0 - lambda2) * pair_b.second[t];
  }
  return out;
}

hpspace::NormalizedConfig cdf_augment_hp(const hpspace::NormalizedConfig& x,
                                         const BetaWarp& warp) {
  if (warp.kappa < 2.0 || warp.kappa > 3.0) {
    throw std::invalid_argument("cdf_augment_hp: kappa must lie in [2,3], got " +
                                std::to_string(warp.kappa));
  }
  const BetaShape shape = beta_params(warp);
  hpspace::NormalizedConfig out;
  for (int i = 0; i < hpspace::kNumHps; ++i) {
    out.x[i] = beta_cdf(x.x[i], shape);
  }
  return out;
}

}  // namespace apfn::augment
