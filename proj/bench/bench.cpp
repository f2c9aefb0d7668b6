// Serial reference vs OpenMP kernel timings. Each pair is also checked for
// identical results so a speedup never hides a divergence.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include "cvsig/harness.hpp"
#include "oracles.hpp"

using namespace cvsig;

namespace {

double time_it(const std::function<void()>& f, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

void row(const char* name, double serial, double parallel, bool same) {
  std::printf("%-22s %12.3f ms %12.3f ms %8.2fx  %s\n", name, serial * 1e3, parallel * 1e3, serial / parallel,
              same ? "identical" : "DIFFERENT");
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-22s %15s %15s %9s\n", "kernel", "serial", "openmp", "speedup");

  // Green sweep: the widest instances of the generator.
  {
    std::mt19937_64 gen(5);
    std::vector<TimingProblem> ps;
    while (ps.size() < 40) {
      auto p = oracle::random_timing_problem(gen);
      p.g_hi_s = p.g_lo_s + 19;
      while (p.platoons.size() < 3) p.platoons.push_back(p.platoons.empty() ? PlatoonTerm{} : p.platoons.back());
      ps.push_back(p);
    }
    bool same = true;
    for (const auto& p : ps) {
      const auto a = green_sweep(p), b = green_sweep_serial(p);
      for (std::size_t i = 0; i < a.size(); ++i) same = same && a[i].objective == b[i].objective && a[i].f_r == b[i].f_r;
    }
    const double s = time_it([&] { for (const auto& p : ps) green_sweep_serial(p); }, 3);
    const double o = time_it([&] { for (const auto& p : ps) green_sweep(p); }, 3);
    row("green_sweep x40", s, o, same);
  }

  {
    std::mt19937_64 gen(6);
    std::vector<OffsetProblem> ps;
    for (int i = 0; i < 400; ++i) ps.push_back(oracle::random_offset_problem(gen));
    bool same = true;
    for (const auto& p : ps) {
      const auto a = optimize_offset(p), b = optimize_offset_serial(p);
      same = same && a.has_value() == b.has_value() && (!a || (a->t1 == b->t1 && a->t2 == b->t2));
    }
    const double s = time_it([&] { for (const auto& p : ps) optimize_offset_serial(p); }, 3);
    const double o = time_it([&] { for (const auto& p : ps) optimize_offset(p); }, 3);
    row("optimize_offset x400", s, o, same);
  }

  {
    Hyperparams hp;
    LstmModel m(20, hp);
    m.initialize(3);
    std::mt19937_64 gen(8);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Sample> data(256);
    for (auto& d : data) {
      d.steps.resize(static_cast<std::size_t>(hp.lookback));
      for (auto& st : d.steps)
        for (auto& x : st) x = n(gen);
      d.label = n(gen);
    }
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<double> ga(m.params().size()), gb(m.params().size());
    const double la = loss_and_gradient(m, data, idx, ga);
    const double lb = loss_and_gradient_serial(m, data, idx, gb);
    const double s = time_it([&] { loss_and_gradient_serial(m, data, idx, gb); }, 5);
    const double o = time_it([&] { loss_and_gradient(m, data, idx, ga); }, 5);
    row("lstm gradient b=256", s, o, la == lb && ga == gb);
  }

  {
    ScenarioConfig cfg = parse_scenario(nlohmann::json::parse(R"({
      "name": "bench", "synthetic": {"intersections": 4},
      "demand": {"major_vph": 900, "minor_vph": 250},
      "duration_s": 1800, "warmup_s": 300, "seeds": [1, 2, 3, 4]})"));
    const double s = time_it([&] { run_replications_serial(cfg, cfg.seeds); }, 1);
    const double o = time_it([&] { run_replications(cfg, cfg.seeds); }, 1);
    const auto a = run_replications(cfg, cfg.seeds), b = run_replications_serial(cfg, cfg.seeds);
    bool same = a.size() == b.size();
    for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].digest == b[i].digest;
    row("replications x4", s, o, same);
  }
  return 0;
}
