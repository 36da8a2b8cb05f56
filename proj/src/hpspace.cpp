#include "apfn/hpspace.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace apfn::hpspace {

const std::vector<HpDescriptor>& default_space() {
  static const std::vector<HpDescriptor> space = {
      {"learning_rate", true, 1e-8, 10.0, false},
      {"beta1", true, 1e-4, 1.0, true},
      {"beta2", true, 1e-6, 1.0, true},
      {"linear_decay", true, 1e-7, 1e-4, false},
      {"expon_decay", true, 1e-6, 1e-3, false},
      {"epsilon", true, 1e-10, 1e3, false},
      {"l1", true, 1e-8, 1.0, false},
      {"l2", true, 1e-8, 1.0, false},
  };
  return space;
}

namespace {

// Value in sampling units: the raw value itself, or u = 1 - value for the
// beta dimensions.
double sampling_value(const HpDescriptor& d, double raw) {
  return d.one_minus ? 1.0 - raw : raw;
}

double from_sampling_value(const HpDescriptor& d, double u) {
  return d.one_minus ? 1.0 - u : u;
}

}  // namespace

NormalizedConfig normalize(const HpConfig& config) {
  const auto& space = default_space();
  const auto raw = config.as_array();
  NormalizedConfig out;
  for (int i = 0; i < kNumHps; ++i) {
    const auto& d = space[i];
    const double u = sampling_value(d, raw[i]);
    const double tol = 1e-12 * d.upper;
    if (u < d.lower - tol || u > d.upper + tol) {
      throw std::out_of_range("hyperparameter '" + d.name +
                              "' out of range: raw value " +
                              std::to_string(raw[i]));
    }
    out.x[i] = (std::log10(u) - std::log10(d.lower)) /
               (std::log10(d.upper) - std::log10(d.lower));
    if (out.x[i] < 0.0) out.x[i] = 0.0;
    if (out.x[i] > 1.0) out.x[i] = 1.0;
  }
  return out;
}

HpConfig denormalize(const NormalizedConfig& x) {
  const auto& space = default_space();
  std::array<double, kNumHps> raw{};
  for (int i = 0; i < kNumHps; ++i) {
    const auto& d = space[i];
    if (x.x[i] < 0.0 || x.x[i] > 1.0) {
      throw std::out_of_range("normalized coordinate for '" + d.name +
                              "' outside [0,1]: " + std::to_string(x.x[i]));
    }
    const double lg = std::log10(d.lower) +
                      x.x[i] * (std::log10(d.upper) - std::log10(d.lower));
    raw[i] = from_sampling_value(d, std::pow(10.0, lg));
  }
  return HpConfig::from_array(raw);
}

std::vector<HpConfig> sample_configs(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<HpConfig> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    NormalizedConfig x;
    for (int i = 0; i < kNumHps; ++i) x.x[i] = unit(rng);
    out.push_back(denormalize(x));
  }
  return out;
}

std::string space_to_json() {
  std::ostringstream os;
  os << "[";
  const auto& space = default_space();
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& d = space[i];
    if (i) os << ",";
    os << "{\"name\":\"" << d.name << "\",\"log\":" << (d.log_scale ? "true" : "false")
       << ",\"lower\":" << d.lower << ",\"upper\":" << d.upper
       << ",\"one_minus\":" << (d.one_minus ? "true" : "false") << "}";
  }
  os << "]";
  return os.str();
}

}  // namespace apfn::hpspace
