#pragma once

#include <random>
#include <utility>
#include <vector>

#include "apfn/hpspace.hpp"

namespace apfn::augment {

/// Mode/concentration parametrization of one curve warp.
struct BetaWarp {
  double mu = 0.5;     // mode in [0,1]
  double kappa = 2.0;  // concentration >= 2; kappa == 2 is the identity warp
};

struct BetaShape {
  double alpha = 1.0;
  double beta = 1.0;
};

struct MixupLambda {
  double lambda1 = 1.0;  // task mixup
  double lambda2 = 1.0;  // HP mixup
};

using Matrix = std::vector<std::vector<double>>;  // R x T row-major

BetaShape beta_params(const BetaWarp& warp);

/// Regularized incomplete beta I_x(alpha, beta) by continued fraction.
double beta_cdf(double x, const BetaShape& shape);

BetaWarp sample_warp(std::mt19937_64& rng);

Matrix cdf_augment_task(const Matrix& curves, const BetaWarp& warp);

Matrix mixup_task(const Matrix& lc_a, const Matrix& lc_b, double lambda1);

std::pair<hpspace::NormalizedConfig, std::vector<double>> mixup_hp(
    const std::pair<hpspace::NormalizedConfig, std::vector<double>>& pair_a,
    const std::pair<hpspace::NormalizedConfig, std::vector<double>>& pair_b,
    double lambda2);

/// HP-space warp; milder than the curve warp, kappa restricted to [2, 3].
hpspace::NormalizedConfig cdf_augment_hp(const hpspace::NormalizedConfig& x,
                                         const BetaWarp& warp);

}  // namespace apfn::augment
