#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "apfn/surrogate.hpp"

using namespace apfn::surrogate;
namespace fs = std::filesystem;

namespace {

CurvePoint make_point(std::mt19937_64& rng, bool with_y) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CurvePoint p;
  for (auto& v : p.x.x) v = u(rng);
  p.t = 0.05 + 0.95 * u(rng);
  if (with_y) {
    p.y = u(rng);
    p.has_y = true;
  }
  return p;
}

std::vector<CurvePoint> make_points(std::mt19937_64& rng, std::size_t n,
                                    bool with_y) {
  std::vector<CurvePoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_point(rng, with_y));
  return out;
}

// Small model keeps the unit tests fast on one core.
ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.embed_dim = 32;
  c.hidden_dim = 64;
  c.buckets = 20;
  c.max_context = 64;
  return c;
}

BatchElement make_element(std::mt19937_64& rng, std::size_t n_ctx,
                          std::size_t n_q) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BatchElement e;
  e.context = make_points(rng, n_ctx, true);
  e.queries = make_points(rng, n_q, false);
  for (std::size_t i = 0; i < n_q; ++i) e.targets.push_back(u(rng));
  return e;
}

}  // namespace

TEST_SUITE("surrogate") {

TEST_CASE("discretize examples") {
  CHECK(discretize(0.0, 1000) == 0);
  CHECK(discretize(1.0, 1000) == 999);
  CHECK(discretize(0.9995, 1000) == 999);
  CHECK(discretize(0.5, 1000) == 500);
  CHECK(discretize(0.123, 10) == 1);
}

TEST_CASE("nll_loss examples") {
  PredictiveDistribution point;
  point.probs.assign(1000, 0.0);
  point.probs[discretize(0.42, 1000)] = 1.0;
  CHECK(nll_loss(point, 0.42) == doctest::Approx(0.0).epsilon(1e-9));

  CHECK(nll_loss(uniform_distribution(1000), 0.3) ==
        doctest::Approx(std::log(1000.0)).epsilon(1e-9));

  PredictiveDistribution half;
  half.probs.assign(10, 0.5 / 9.0);
  half.probs[discretize(0.7, 10)] = 0.5;
  CHECK(nll_loss(half, 0.7) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("distribution summaries") {
  const auto uni = uniform_distribution(100);
  CHECK(mean_of(uni) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mass_above(uni, 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(mass_above(uni, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mass_above(uni, 0.5) == doctest::Approx(0.5).epsilon(1e-9));

  PredictiveDistribution point;
  point.probs.assign(100, 0.0);
  point.probs[42] = 1.0;
  CHECK(mean_of(point) == doctest::Approx(42.5 / 100.0).epsilon(1e-12));
  CHECK(quantile_of(point, 0.5) == doctest::Approx(42.5 / 100.0).epsilon(1e-12));
  CHECK(mass_above(point, 0.3) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mass_above(point, 0.9) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("model presets") {
  const auto p = ModelConfig::paper_preset();
  CHECK(p.layers == 6);
  CHECK(p.heads == 4);
  CHECK(p.embed_dim == 512);
  CHECK(p.hidden_dim == 1024);
  CHECK(p.buckets == 1000);

  const auto d = ModelConfig::desk_preset();
  CHECK(d.layers == 3);
  CHECK(d.heads == 2);
  CHECK(d.embed_dim == 128);
  CHECK(d.hidden_dim == 256);
  CHECK(d.buckets == 1000);

  ModelConfig bad = d;
  bad.embed_dim = 127;  // not divisible by heads
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = d;
  bad.buckets = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("init_model is deterministic and finite") {
  std::mt19937_64 a(5), b(5), c(6);
  const auto wa = init_model(tiny_config(), a);
  const auto wb = init_model(tiny_config(), b);
  const auto wc = init_model(tiny_config(), c);
  CHECK((wa.params.array() == wb.params.array()).all());
  CHECK_FALSE((wa.params.array() == wc.params.array()).all());
  for (long i = 0; i < wa.params.size(); ++i)
    CHECK(std::isfinite(wa.params[i]));
}

TEST_CASE("predict outputs normalized distributions") {
  std::mt19937_64 rng(77);
  const auto w = init_model(tiny_config(), rng);
  const auto ctx = make_points(rng, 12, true);
  const auto q = make_points(rng, 5, false);
  const auto out = predict(w, ctx, q);
  REQUIRE(out.size() == q.size());
  for (const auto& dist : out) {
    REQUIRE(static_cast<int>(dist.probs.size()) == w.config.buckets);
    double sum = 0.0;
    for (double p : dist.probs) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("predict is invariant to context permutation within 1e-5") {
  std::mt19937_64 rng(31);
  const auto w = init_model(tiny_config(), rng);
  auto ctx = make_points(rng, 16, true);
  const auto q = make_points(rng, 4, false);
  const auto base = predict(w, ctx, q);

  std::shuffle(ctx.begin(), ctx.end(), rng);
  const auto shuffled = predict(w, ctx, q);
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 0; j < base[i].probs.size(); ++j) {
      CHECK(std::abs(base[i].probs[j] - shuffled[i].probs[j]) <= 1e-5);
    }
  }
}

TEST_CASE("queries are independent of each other") {
  std::mt19937_64 rng(13);
  const auto w = init_model(tiny_config(), rng);
  const auto ctx = make_points(rng, 10, true);
  auto q = make_points(rng, 3, false);

  // Duplicating a query gives two matching answers; agreement is up to
  // floating-point reassociation (SIMD lane placement), far inside 1e-12.
  q.push_back(q[0]);
  const auto out = predict(w, ctx, q);
  REQUIRE(out[0].probs.size() == out[3].probs.size());
  for (std::size_t j = 0; j < out[0].probs.size(); ++j) {
    CHECK(std::abs(out[0].probs[j] - out[3].probs[j]) <= 1e-12);
  }

  // Removing the other queries leaves a query's answer unchanged.
  const auto solo = predict(w, ctx, {q[1]});
  REQUIRE(solo[0].probs.size() == out[1].probs.size());
  for (std::size_t j = 0; j < out[1].probs.size(); ++j) {
    CHECK(std::abs(solo[0].probs[j] - out[1].probs[j]) <= 1e-12);
  }
}

TEST_CASE("predict validates its inputs") {
  std::mt19937_64 rng(3);
  auto cfg = tiny_config();
  cfg.max_context = 8;
  const auto w = init_model(cfg, rng);
  const auto q = make_points(rng, 1, false);
  CHECK_THROWS_AS(predict(w, make_points(rng, 9, true), q),
                  std::invalid_argument);
  CHECK_THROWS_AS(predict(w, make_points(rng, 4, true), {}),
                  std::invalid_argument);
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(2718);
  auto w = init_model(tiny_config(), rng);
  std::vector<BatchElement> batch;
  batch.push_back(make_element(rng, 8, 3));
  batch.push_back(make_element(rng, 6, 2));

  const auto fb = forward_backward(w, batch, /*parallel=*/false);
  REQUIRE(fb.grad.size() == w.params.size());

  std::uniform_int_distribution<long> pick(0, w.params.size() - 1);
  const double h = 1e-4;
  int ok = 0;
  const int probes = 200;
  for (int p = 0; p < probes; ++p) {
    const long i = pick(rng);
    const double saved = w.params[i];
    w.params[i] = saved + h;
    const double lp = batch_loss(w, batch);
    w.params[i] = saved - h;
    const double lm = batch_loss(w, batch);
    w.params[i] = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(fb.grad[i]), 1e-8});
    if (std::abs(fd - fb.grad[i]) / denom <= 1e-4) ++ok;
  }
  CHECK(ok >= probes * 99 / 100);
}

TEST_CASE("parallel and serial forward_backward agree bitwise") {
  std::mt19937_64 rng(555);
  const auto w = init_model(tiny_config(), rng);
  std::vector<BatchElement> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(make_element(rng, 10, 3));

  const auto serial = forward_backward(w, batch, /*parallel=*/false);
  const auto parallel = forward_backward(w, batch, /*parallel=*/true);
  CHECK(serial.loss == parallel.loss);
  CHECK((serial.grad.array() == parallel.grad.array()).all());

  const auto ps = predict_batch(w, batch, false);
  const auto pp = predict_batch(w, batch, true);
  REQUIRE(ps.size() == pp.size());
  for (std::size_t e = 0; e < ps.size(); ++e)
    for (std::size_t i = 0; i < ps[e].size(); ++i)
      CHECK(ps[e][i].probs == pp[e][i].probs);
}

TEST_CASE("checkpoint round trip and error paths") {
  std::mt19937_64 rng(9);
  const auto w = init_model(tiny_config(), rng);
  const auto path = fs::temp_directory_path() / "apfn_test_ckpt.bin";

  save_checkpoint(w, path);
  const auto back = load_checkpoint(path);
  CHECK(back.config == w.config);
  CHECK((back.params.array() == w.params.array()).all());

  SUBCASE("truncated file") {
    const auto sz = fs::file_size(path);
    fs::resize_file(path, sz - 64);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncat"),
                         std::runtime_error);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOPE", 4);
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                         std::runtime_error);
  }
  SUBCASE("bad version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t v = 999;
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"),
                         std::runtime_error);
  }
  fs::remove(path);
}

}  // TEST_SUITE
