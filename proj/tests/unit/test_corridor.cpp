#include "doctest.h"
#include "support.hpp"

using namespace cvsig;

TEST_CASE("synthetic four-intersection corridor has 8 major and 8 minor segments") {
  const Corridor c = test::corridor(4);
  CHECK(c.intersections.size() == 4);
  CHECK(c.segments_of(Direction::MajorEast).size() + c.segments_of(Direction::MajorWest).size() == 8);
  CHECK(c.segments_of(Direction::Minor).size() == 8);
  CHECK(c.major_exit(0, Direction::MajorEast) == c.intersections[1].east_approach);
  CHECK(c.major_exit(3, Direction::MajorEast) == -1);
  CHECK(c.major_exit(0, Direction::MajorWest) == -1);
  CHECK(c.upstream_along(2, Direction::MajorEast) == 1);
}

TEST_CASE("ten-intersection corridor builds") {
  CHECK(test::corridor(10).intersections.size() == 10);
}

TEST_CASE("validation errors name the field") {
  SyntheticCorridor layout;
  auto j = synthetic_corridor_json(layout);
  SUBCASE("zero length") {
    j["segments"][0]["length_mi"] = 0.0;
    CHECK_THROWS_WITH_AS(build_corridor(j), doctest::Contains("length_mi"), ValidationError);
  }
  SUBCASE("broken chain") {
    layout.intersections = 3;
    j = synthetic_corridor_json(layout);
    for (auto& s : j["segments"]) {
      if (s["id"] == "E3") s["from"] = 0;
    }
    CHECK_THROWS_WITH_AS(build_corridor(j), doctest::Contains("from"), ValidationError);
  }
  SUBCASE("ring does not sum to the cycle") {
    j["intersections"][0]["phase_plan"]["phases"][1]["green_s"] = 10.0;
    CHECK_THROWS_WITH_AS(build_corridor(j), doctest::Contains("phases"), ValidationError);
  }
  SUBCASE("historical queue beyond the segment") {
    j["segments"][0]["historical_queue_mi"] = 2.0;
    CHECK_THROWS_WITH_AS(build_corridor(j), doctest::Contains("historical_queue_mi"), ValidationError);
  }
}

TEST_CASE("apply_offset shifts only the next coordinated green start") {
  const Corridor c = test::corridor(1);
  SignalState s = initial_signal_state(c.intersections[0].plan, 100.0);
  s.upstream_green_start_s = 100.0;
  CHECK(apply_offset(s, 0.0).next_green_start_s == doctest::Approx(100.0));
  const SignalState shifted = apply_offset(s, 5.0);
  CHECK(shifted.next_green_start_s - s.upstream_green_start_s == doctest::Approx(5.0));
  CHECK(shifted.cycle_s == s.cycle_s);
  CHECK(shifted.interval == s.interval);
  CHECK_THROWS_AS(apply_offset(s, 60.0), ValidationError);
  CHECK_THROWS_AS(apply_offset(s, -46.0), ValidationError);
}

TEST_CASE("signal cycle keeps green + yellow + red equal to the cycle") {
  const Corridor c = test::corridor(1);
  const PhasePlan& plan = c.intersections[0].plan;
  SignalState s = initial_signal_state(plan, 0.0);
  double now = 0.0;
  const double dt = 0.5;
  std::vector<double> starts;
  for (int step = 0; step < 2000; ++step) {
    now += dt;
    const bool started = advance_signal(s, plan, now) == SignalEvent::CoordinatedGreenStart;
    if (started) starts.push_back(now);
    const double local = now - s.green_start_s;
    if (s.interval == Interval::MajorGreen && local >= plan.coordinated().green_s - 1e-9) end_green(s, plan, now);
    if (s.interval == Interval::MinorGreen && now - s.interval_start_s >= plan.noncoordinated().green_s - 1e-9) {
      end_green(s, plan, now);
    }
  }
  REQUIRE(starts.size() > 5);
  for (std::size_t i = 1; i < starts.size(); ++i) CHECK(starts[i] - starts[i - 1] == doctest::Approx(plan.cycle_s));
}
