#include "cvsig/offset_optimizer.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

#include "cvsig/units.hpp"

namespace cvsig {

namespace {

constexpr double kTieTol = 1e-9;

void validate(const OffsetProblem& p) {
  if (!(p.h_s > 0)) throw ValidationError("h_s: must be positive");
  if (!(p.alpha > 0 && p.alpha <= 1)) throw ValidationError("alpha: must lie in (0, 1]");
  if (p.q_s1_vph < 0 || p.q_s2_vph < 0 || p.q_up_vph < 0) throw ValidationError("flows: must be nonnegative");
  if (p.v_bf_mph > 0) throw ValidationError("v_bf_mph: must be nonpositive (upstream wave)");
  if (!(p.v_ffs_mph > std::abs(p.v_bf_mph))) throw ValidationError("v_ffs_mph: must exceed |v_bf|");
  if (p.q_dis_vph() <= p.q_up_vph) {
    throw OversaturatedError("q_up_vph: upstream flow reaches the discharge rate; offset skipped");
  }
}

struct Candidate {
  bool ok = false;
  OffsetSolution s;
};

Candidate evaluate(const OffsetProblem& p, int t1, int limit) {
  Candidate c;
  const int t2 = implied_t2(p, t1);
  if (std::abs(t2) > limit) return c;
  c.ok = true;
  c.s.t1 = t1;
  c.s.t2 = t2;
  c.s.derived = derived_quantities(p, t1, t2);
  c.s.delay = triangle_delay(p, t1, t2);
  return c;
}

bool preferred(const OffsetSolution& a, const OffsetSolution& b) {
  if (a.delay < b.delay - kTieTol) return true;
  if (a.delay > b.delay + kTieTol) return false;
  if (std::abs(a.t2) != std::abs(b.t2)) return std::abs(a.t2) < std::abs(b.t2);
  return a.t1 < b.t1;
}

std::optional<OffsetSolution> reduce(const std::vector<Candidate>& all) {
  std::optional<OffsetSolution> best;
  for (const auto& c : all) {
    if (c.ok && (!best || preferred(c.s, *best))) best = c.s;
  }
  return best;
}

}  // namespace

int t2_limit(const OffsetProblem& p) {
  const double travel = units::travel_seconds(p.length_mi, p.v_ffs_mph * p.alpha);
  return static_cast<int>(std::floor(std::min(travel, p.cycle_s / 2.0) + 1e-9));
}

int implied_t2(const OffsetProblem& p, int t1) {
  return static_cast<int>(std::lround(p.r_n1_s - std::abs(p.r_n_s - t1)));
}

DerivedQuantities derived_quantities(const OffsetProblem& p, int t1, int t2) {
  validate(p);
  const double lag = std::abs(p.r_n_s - t1);
  const double q_dis = p.q_dis_vph();
  DerivedQuantities d;
  d.t3_s = units::hours_to_seconds((p.length_mi - p.v_bf_mph * units::seconds_to_hours(lag)) /
                                   (p.v_ffs_mph - p.v_bf_mph));
  d.t4_s = lag * (p.q_s1_vph + p.q_s2_vph) / q_dis;
  d.t_req_s = (lag * (p.q_s1_vph + p.q_s2_vph) + t2 * q_dis) / (q_dis - p.q_up_vph);
  d.l_w_mi = std::abs(p.v_bf_mph * units::seconds_to_hours(lag + d.t3_s));
  return d;
}

double triangle_area(double ab_s, double t_req_s, double q_up_vph) {
  return std::max(0.0, ab_s) * std::max(0.0, t_req_s) * units::per_hour_to_per_second(q_up_vph) / 2.0;
}

double triangle_delay(const OffsetProblem& p, int t1, int t2) {
  const DerivedQuantities d = derived_quantities(p, t1, t2);
  return triangle_area(t2 + d.t4_s - d.t3_s, d.t_req_s, p.q_up_vph);
}

std::pair<int, int> t1_range(const OffsetProblem& p) {
  return {1, static_cast<int>(std::floor(p.cycle_s / 2.0 + 1e-9))};
}

std::optional<OffsetSolution> optimize_offset_serial(const OffsetProblem& p) {
  validate(p);
  const int hi = t1_range(p).second;
  const int limit = t2_limit(p);
  std::vector<Candidate> all;
  for (int t1 = 1; t1 <= hi; ++t1) all.push_back(evaluate(p, t1, limit));
  return reduce(all);
}

std::optional<OffsetSolution> optimize_offset(const OffsetProblem& p) {
  validate(p);
  const int hi = t1_range(p).second;
  const int limit = t2_limit(p);
  std::vector<Candidate> all(static_cast<std::size_t>(std::max(0, hi)));
#pragma omp parallel for schedule(static)
  for (int t1 = 1; t1 <= hi; ++t1) all[static_cast<std::size_t>(t1 - 1)] = evaluate(p, t1, limit);
  return reduce(all);
}

}  // namespace cvsig
