#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace apfn::hpspace {

constexpr int kNumHps = 8;

/// One dimension of the search space. Bounds are in raw (sampling) units;
/// for one_minus dimensions the bounds describe u = 1 - value.
struct HpDescriptor {
  std::string name;
  bool log_scale = true;
  double lower = 0.0;
  double upper = 0.0;
  bool one_minus = false;
};

/// Raw Adam8p hyperparameter values, fixed order:
/// lr, beta1, beta2, linear_decay, expon_decay, epsilon, l1, l2.
struct HpConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double linear_decay = 0.0;
  double expon_decay = 0.0;
  double epsilon = 1e-8;
  double l1 = 0.0;
  double l2 = 0.0;

  std::array<double, kNumHps> as_array() const {
    return {learning_rate, beta1, beta2,  linear_decay,
            expon_decay,   epsilon, l1, l2};
  }
  static HpConfig from_array(const std::array<double, kNumHps>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
  }
};

/// HpConfig mapped to the unit cube (log scale, beta dims flipped via 1-x).
struct NormalizedConfig {
  std::array<double, kNumHps> x{};
};

const std::vector<HpDescriptor>& default_space();

NormalizedConfig normalize(const HpConfig& config);
HpConfig denormalize(const NormalizedConfig& x);

std::vector<HpConfig> sample_configs(std::mt19937_64& rng, std::size_t n);

/// JSON array of {name, log, lower, upper, one_minus}.
std::string space_to_json();

}  // namespace apfn::hpspace
