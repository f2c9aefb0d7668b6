#include <random>

#include "../oracles/oracles.hpp"
#include "cvsig/green_optimizer.hpp"
#include "cvsig/units.hpp"
#include "doctest.h"

using namespace cvsig;

namespace {

TimingProblem base(double lo, double hi) {
  TimingProblem p;
  p.segment_count = 30;
  p.segment_length_mi = 1.0;
  p.ig_cor_s = 6;
  p.cycle_s = 90;
  p.intergreen_total_s = 12;
  p.g_lo_s = lo;
  p.g_hi_s = hi;
  return p;
}

PlatoonTerm platoon(double length_mi, double speed, double head_mi, int cv = 1) {
  PlatoonTerm t;
  t.length_mi = length_mi;
  t.speed_mph = speed;
  t.head_distance_mi = head_mi;
  t.cv_count = cv;
  return t;
}

}  // namespace

TEST_CASE("maximum green bounds") {
  const std::vector<NoncoordinatedPhase> one{{4, 6}};
  CHECK(max_green_coordinated(90, 6, one) == doctest::Approx(74));
  const std::vector<NoncoordinatedPhase> bare{{4, 0}, {5, 0}};
  CHECK(max_green_coordinated(90, 0, bare) == doctest::Approx(81));
  const std::vector<NoncoordinatedPhase> big{{4, 6}, {4, 6}};
  CHECK_THROWS_AS(max_green_coordinated(20, 6, big), ValidationError);

  CHECK(max_green_noncoordinated(40, 90, 12, 300, 1200) == doctest::Approx(19.5));
  CHECK(max_green_noncoordinated(100, 90, 12, 500, 500) == doctest::Approx(78));
  CHECK(max_green_noncoordinated(10, 90, 12, 300, 1200) == doctest::Approx(10));
  CHECK(max_green_noncoordinated(40, 90, 12, 0, 0) == doctest::Approx(4));
}

TEST_CASE("blocked wait time") {
  TimingProblem p = base(10, 20);
  p.platoons = {platoon(0.1, 30, 0.1)};
  const std::vector<double> half{0.5}, full{1.0}, none{0.0};
  CHECK(blocked_wait_time(p, full) == doctest::Approx(6.0));
  CHECK(blocked_wait_time(p, half) == doctest::Approx(9.75));
  CHECK(blocked_wait_time(p, none) - 6.0 == doctest::Approx(2 * (9.75 - 6.0)));
}

TEST_CASE("queue clear time") {
  TimingProblem p = base(10, 20);
  // T_h = 10 s and T_l = 4 s at 36 mph.
  p.platoons = {platoon(0.04, 36, 0.1)};
  const std::vector<double> full{1.0};
  CHECK(queue_clear_time(p, full) == doctest::Approx(14.0));

  TimingProblem q = base(10, 40);
  q.q_d_s = 8;
  PlatoonTerm a = platoon(0.1, 30, 0.05);
  a.affected = true;
  a.d_ahead_mi = 0.05;
  q.platoons = {a};
  CHECK(queue_clear_time(q, full) == doctest::Approx(26.0));

  TimingProblem empty = base(10, 20);
  empty.q_d_s = 8;
  CHECK(queue_clear_time(empty, {}) == doctest::Approx(8.0));

  TimingProblem stopped = base(10, 200);
  stopped.platoons = {platoon(0.01, 0.0, 0.0)};
  stopped.platoons[0].d_ahead_mi = 0.0;
  CHECK(queue_clear_time(stopped, full) == doctest::Approx(36.0));  // creep at 1 mph
}

TEST_CASE("nonselected wait") {
  TimingProblem p = base(10, 20);
  p.segment_length_mi = 1.0;
  p.segment_count = 0.05 * units::miles_to_meters(1.0);
  p.platoons = {platoon(units::meters_to_miles(110), 30, 0.1, 2)};  // estimated 7 vehicles
  const std::vector<double> rejected{0.0}, selected{0.3};
  CHECK(nonselected_wait(p, rejected) == doctest::Approx(630));
  CHECK(nonselected_wait(p, selected) == 0.0);
  p.platoons.push_back(p.platoons[0]);
  const std::vector<double> both{0.0, 0.0};
  CHECK(nonselected_wait(p, both) == doctest::Approx(1260));
}

TEST_CASE("optimize: single platoon passes whole") {
  TimingProblem p = base(10, 20);
  p.platoons = {platoon(0.04, 36, 0.1, 2)};
  const auto s = optimize_intersection(p);
  CHECK(s.f_r[0] == 1.0);
  CHECK(s.g_cor == 20);
  CHECK(s.g_required == 14);
  CHECK(s.g_noncor == 90 - 12 - 20);
  const auto o = oracle::brute_force_timing(p);
  CHECK(s.objective == doctest::Approx(o.objective).epsilon(1e-12));
  check_solution(p, s);
}

TEST_CASE("optimize: no platoons gives the slack to coordination") {
  TimingProblem p = base(10, 20);
  const auto s = optimize_intersection(p);
  CHECK(s.g_cor == 20);
  CHECK(s.f_r.empty());
}

TEST_CASE("optimize: when only one platoon fits, the larger one is admitted") {
  // Each platoon alone clears within 18 s; together they need 21.6 s.
  TimingProblem p = base(4, 18);
  PlatoonTerm small = platoon(0.02, 20, 0.01, 1);
  small.affected = true;
  small.d_ahead_mi = 0.01;
  PlatoonTerm large = platoon(0.06, 20, 0.03, 4);
  large.affected = true;
  large.d_ahead_mi = 0.03;
  p.platoons = {small, large};
  const std::vector<double> only_small{1.0, 0.0}, only_large{0.0, 1.0}, both{1.0, 1.0};
  double tq = 0.0;
  const double j_small = oracle::timing_objective(p, only_small, &tq);
  CHECK(tq <= 18.0);
  const double j_large = oracle::timing_objective(p, only_large, &tq);
  CHECK(tq <= 18.0);
  oracle::timing_objective(p, both, &tq);
  CHECK(tq > 18.0);
  CHECK(j_large < j_small);
  const auto s = optimize_intersection(p);
  CHECK(s.f_r[1] > s.f_r[0]);
  CHECK(s.objective <= j_large + 1e-12);
  CHECK(s.objective == doctest::Approx(oracle::brute_force_timing(p).objective).epsilon(1e-12));
}

TEST_CASE("optimize: infeasible bounds name the constraint") {
  TimingProblem p = base(20, 10);
  CHECK_THROWS_WITH_AS(optimize_intersection(p), doctest::Contains("g_min <= g <= g_max"), ValidationError);
  TimingProblem q = base(10, 20);
  q.q_d_s = 30;
  CHECK_THROWS_WITH_AS(optimize_intersection(q), doctest::Contains("T_q <= g"), ValidationError);
}

TEST_CASE("optimizer equals brute force on random instances") {
  std::mt19937_64 gen(123);
  for (int trial = 0; trial < 60; ++trial) {
    TimingProblem p = oracle::random_timing_problem(gen);
    const auto o = oracle::brute_force_timing(p);
    if (!o.feasible) {
      CHECK_THROWS_AS(optimize_intersection(p), ValidationError);
      continue;
    }
    const auto s = optimize_intersection(p);
    CHECK(std::abs(s.objective - o.objective) <= 1e-9);
    CHECK(std::abs(oracle::timing_objective(p, s.f_r) - o.objective) <= 1e-9);
    check_solution(p, s);
  }
}

TEST_CASE("parallel sweep equals the serial reference") {
  std::mt19937_64 gen(77);
  for (int trial = 0; trial < 30; ++trial) {
    TimingProblem p = oracle::random_timing_problem(gen);
    try {
      const auto a = green_sweep(p);
      const auto b = green_sweep_serial(p);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].g == b[i].g);
        CHECK(a[i].feasible == b[i].feasible);
        CHECK(a[i].objective == b[i].objective);
        CHECK(a[i].f_r == b[i].f_r);
      }
    } catch (const ValidationError&) {
    }
  }
}

TEST_CASE("more CVs in a platoon never lower its admitted fraction") {
  std::mt19937_64 gen(31);
  for (int trial = 0; trial < 60; ++trial) {
    TimingProblem p = oracle::random_timing_problem(gen);
    if (p.platoons.empty()) continue;
    if (!oracle::brute_force_timing(p).feasible) continue;
    const auto before = optimize_intersection(p);
    const std::size_t k = gen() % p.platoons.size();
    p.platoons[k].cv_count += 1 + static_cast<int>(gen() % 3);
    const auto after = optimize_intersection(p);
    CHECK(after.f_r[k] >= before.f_r[k] - 1e-12);
  }
}
