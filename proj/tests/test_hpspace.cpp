#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "apfn/hpspace.hpp"

using namespace apfn::hpspace;

TEST_SUITE("hpspace") {

TEST_CASE("default space matches the published bounds") {
  const auto& space = default_space();
  REQUIRE(space.size() == kNumHps);

  CHECK(space[0].name == "learning_rate");
  CHECK(space[0].lower == doctest::Approx(1e-8).epsilon(1e-12));
  CHECK(space[0].upper == doctest::Approx(10.0).epsilon(1e-12));
  CHECK_FALSE(space[0].one_minus);

  CHECK(space[1].name == "beta1");
  CHECK(space[1].one_minus);
  CHECK(space[1].lower == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(space[1].upper == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(space[2].name == "beta2");
  CHECK(space[2].one_minus);
  CHECK(space[2].lower == doctest::Approx(1e-6).epsilon(1e-12));

  CHECK(space[3].name == "linear_decay");
  CHECK(space[3].lower == doctest::Approx(1e-7).epsilon(1e-12));
  CHECK(space[3].upper == doctest::Approx(1e-4).epsilon(1e-12));

  CHECK(space[4].name == "expon_decay");
  CHECK(space[4].lower == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(space[4].upper == doctest::Approx(1e-3).epsilon(1e-12));

  CHECK(space[5].name == "epsilon");
  CHECK(space[5].lower == doctest::Approx(1e-10).epsilon(1e-12));
  CHECK(space[5].upper == doctest::Approx(1e3).epsilon(1e-12));

  CHECK(space[6].name == "l1");
  CHECK(space[7].name == "l2");
  for (const auto& d : space) CHECK(d.log_scale);
}

TEST_CASE("normalize maps bounds to the unit cube corners") {
  HpConfig lo, hi;
  lo.learning_rate = 1e-8;
  hi.learning_rate = 10.0;
  // one_minus dims: value = 1 - u, so u at its lower bound means the value
  // sits near 1.
  lo.beta1 = 1.0 - 1e-4;
  hi.beta1 = 0.0;
  lo.beta2 = 1.0 - 1e-6;
  hi.beta2 = 0.0;
  lo.linear_decay = 1e-7;
  hi.linear_decay = 1e-4;
  lo.expon_decay = 1e-6;
  hi.expon_decay = 1e-3;
  lo.epsilon = 1e-10;
  hi.epsilon = 1e3;
  lo.l1 = 1e-8;
  hi.l1 = 1.0;
  lo.l2 = 1e-8;
  hi.l2 = 1.0;

  const auto nlo = normalize(lo);
  const auto nhi = normalize(hi);
  for (int i = 0; i < kNumHps; ++i) {
    CHECK(nlo.x[i] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(nhi.x[i] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("round trip over 1000 sampled configs") {
  std::mt19937_64 rng(42);
  const auto configs = sample_configs(rng, 1000);
  REQUIRE(configs.size() == 1000);
  for (const auto& c : configs) {
    const auto back = denormalize(normalize(c)).as_array();
    const auto orig = c.as_array();
    for (int i = 0; i < kNumHps; ++i) {
      const double scale = std::max(std::abs(orig[i]), 1e-300);
      CHECK(std::abs(back[i] - orig[i]) / scale <= 1e-9);
    }
  }
}

TEST_CASE("normalization is monotone per dimension") {
  // Baseline config inside every Table bound (the struct defaults are not:
  // the decay dimensions exclude zero).
  HpConfig base;
  base.linear_decay = 1e-5;
  base.expon_decay = 1e-4;
  base.l1 = base.l2 = 1e-4;

  // For plain log dims larger raw values give larger coordinates; for
  // one_minus dims larger beta means smaller u hence smaller coordinate.
  HpConfig a = base, b = base;
  a.learning_rate = 1e-4;
  b.learning_rate = 1e-2;
  CHECK(normalize(a).x[0] < normalize(b).x[0]);

  a = b = base;
  a.beta1 = 0.5;
  b.beta1 = 0.99;
  CHECK(normalize(b).x[1] < normalize(a).x[1]);

  a = b = base;
  a.epsilon = 1e-8;
  b.epsilon = 1.0;
  CHECK(normalize(a).x[5] < normalize(b).x[5]);
}

TEST_CASE("out-of-range values are rejected with the dimension named") {
  HpConfig c;
  c.learning_rate = 100.0;  // above 10
  CHECK_THROWS_WITH_AS(normalize(c),
                       doctest::Contains("learning_rate"),
                       std::out_of_range);
  c = HpConfig{};
  c.epsilon = 1e-12;  // below 1e-10
  CHECK_THROWS_AS(normalize(c), std::out_of_range);
  c = HpConfig{};
  c.beta1 = 1.0 - 1e-6;  // u below 1e-4
  CHECK_THROWS_AS(normalize(c), std::out_of_range);
}

TEST_CASE("sampling is uniform on the unit cube") {
  std::mt19937_64 rng(7);
  const auto configs = sample_configs(rng, 20000);
  std::array<double, kNumHps> mean{};
  for (const auto& c : configs) {
    const auto n = normalize(c);
    for (int i = 0; i < kNumHps; ++i) mean[i] += n.x[i];
  }
  for (int i = 0; i < kNumHps; ++i) {
    mean[i] /= static_cast<double>(configs.size());
    CHECK(std::abs(mean[i] - 0.5) < 0.02);
  }
}

TEST_CASE("space_to_json lists all eight dimensions") {
  const auto j = space_to_json();
  for (const char* name : {"learning_rate", "beta1", "beta2", "linear_decay",
                           "expon_decay", "epsilon", "l1", "l2"}) {
    CHECK(j.find(name) != std::string::npos);
  }
}

}  // TEST_SUITE
