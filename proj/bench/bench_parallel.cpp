// Compares the serial reference paths against the OpenMP-parallel kernels:
// surrogate forward/backward over a batch and task-bundle generation.
// Prints wall time per path plus a bitwise-agreement check.

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "apfn/surrogate.hpp"
#include "apfn/taskgen.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(Clock::now() - t0).count() /
         static_cast<double>(reps);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP not enabled; both paths run serially\n");
#endif

  // Surrogate forward/backward on a desk-preset model.
  {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto w = apfn::surrogate::init_model(
        apfn::surrogate::ModelConfig::desk_preset(), rng);

    std::vector<apfn::surrogate::BatchElement> batch(6);
    for (auto& e : batch) {
      for (int i = 0; i < 40; ++i) {
        apfn::surrogate::CurvePoint p;
        for (auto& v : p.x.x) v = u(rng);
        p.t = 0.05 + 0.95 * u(rng);
        p.y = u(rng);
        p.has_y = true;
        e.context.push_back(p);
      }
      for (int i = 0; i < 8; ++i) {
        apfn::surrogate::CurvePoint p;
        for (auto& v : p.x.x) v = u(rng);
        p.t = 0.05 + 0.95 * u(rng);
        e.queries.push_back(p);
        e.targets.push_back(u(rng));
      }
    }

    const auto serial = apfn::surrogate::forward_backward(w, batch, false);
    const auto parallel = apfn::surrogate::forward_backward(w, batch, true);
    const bool same = serial.loss == parallel.loss &&
                      (serial.grad.array() == parallel.grad.array()).all();

    const double ts =
        time_of([&] { apfn::surrogate::forward_backward(w, batch, false); }, 5);
    const double tp =
        time_of([&] { apfn::surrogate::forward_backward(w, batch, true); }, 5);
    std::printf("forward_backward  serial %.3f s  parallel %.3f s  "
                "speedup %.2fx  bitwise %s\n",
                ts, tp, ts / tp, same ? "identical" : "DIFFERENT");
  }

  // Task-bundle generation.
  {
    const auto a = apfn::taskgen::generate_bundle({"mlp-synth", 1}, 20, 30,
                                                  false);
    const auto b = apfn::taskgen::generate_bundle({"mlp-synth", 1}, 20, 30,
                                                  true);
    const bool same = a.curves == b.curves;
    const double ts = time_of(
        [] { apfn::taskgen::generate_bundle({"mlp-synth", 1}, 20, 30, false); },
        3);
    const double tp = time_of(
        [] { apfn::taskgen::generate_bundle({"mlp-synth", 1}, 20, 30, true); },
        3);
    std::printf("generate_bundle   serial %.3f s  parallel %.3f s  "
                "speedup %.2fx  bitwise %s\n",
                ts, tp, ts / tp, same ? "identical" : "DIFFERENT");
  }
  return 0;
}
