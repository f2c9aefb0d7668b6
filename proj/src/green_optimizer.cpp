#include "cvsig/green_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "cvsig/units.hpp"

namespace cvsig {

namespace {

constexpr double kFeasTol = 1e-9;
constexpr double kTieTol = 1e-12;

double speed_of(const TimingProblem& p, const PlatoonTerm& t) { return std::max(t.speed_mph, p.creep_speed_mph); }
bool in_a(const PlatoonTerm& t) { return t.affected || t.speed_mph <= 0.0; }
bool queue_mode(const TimingProblem& p) { return std::any_of(p.platoons.begin(), p.platoons.end(), in_a); }

double head_time(const TimingProblem& p, const PlatoonTerm& t) {
  return units::travel_seconds(t.head_distance_mi, speed_of(p, t));
}
double tail_time(const TimingProblem& p, const PlatoonTerm& t, double f) {
  return units::travel_seconds(t.length_mi * f, speed_of(p, t));
}

// Vehicles behind the bounding CV implied by the predicted density.
double followers(const TimingProblem& p, const PlatoonTerm& t) {
  const double extra_m = std::max(0.0, units::miles_to_meters(t.length_mi) - p.head_offset_m);
  const double non_cv = std::max(0.0, p.segment_count - p.segment_cv_count);
  return extra_m * non_cv / units::miles_to_meters(p.segment_length_mi);
}

// Contribution of one admitted platoon to the queue-mode T_q.
double queue_term(const TimingProblem& p, const PlatoonTerm& t, double f) {
  if (f <= 0.0) return 0.0;
  if (in_a(t)) return units::travel_seconds(t.length_mi * f + t.d_ahead_mi, speed_of(p, t));
  return head_time(p, t) + tail_time(p, t, f);
}

double norm(double x, double lo, double hi) { return hi - lo > 1e-12 ? (x - lo) / (hi - lo) : 0.0; }

void check_sizes(const TimingProblem& p, std::span<const double> f) {
  if (f.size() != p.platoons.size()) throw ValidationError("f_r: one fraction per platoon required");
}

}  // namespace

double max_green_coordinated(double cycle_s, double coord_clearance_s, std::span<const NoncoordinatedPhase> noncoord,
                             double g_min_s) {
  double g = cycle_s - coord_clearance_s;
  for (const auto& ph : noncoord) g -= ph.min_green_s + ph.clearance_s;
  if (g < g_min_s) {
    std::ostringstream msg;
    msg << "cycle_s: " << cycle_s << " s leaves " << g << " s of coordinated green, below g_min " << g_min_s;
    throw ValidationError(msg.str());
  }
  return g;
}

double max_green_noncoordinated(double g_fixed_s, double cycle_s, double lost_time_s, double vc_noncoord,
                                double vc_total, double g_min_s) {
  if (!(vc_total > 0.0)) return g_min_s;
  return std::min(g_fixed_s, (cycle_s - lost_time_s) * vc_noncoord / vc_total);
}

void set_green_range(TimingProblem& problem, const PhasePlan& plan, const GreenBounds& bounds) {
  problem.cycle_s = plan.cycle_s;
  problem.intergreen_total_s = plan.major_clearance_s() + plan.minor_clearance_s();
  const double split = plan.cycle_s - problem.intergreen_total_s;
  problem.g_lo_s = std::max(bounds.g_min_s, split - bounds.g_noncoord_max_s);
  problem.g_hi_s = std::min(bounds.g_coord_max_s, split - plan.noncoordinated().min_green_s);
}

double blocked_wait_time(const TimingProblem& p, std::span<const double> f_r) {
  check_sizes(p, f_r);
  double t = p.ig_cor_s;
  for (std::size_t i = 0; i < p.platoons.size(); ++i) {
    t += p.platoons[i].length_mi * (1.0 - f_r[i]) * p.segment_count * p.h_s / p.segment_length_mi;
  }
  return t;
}

double queue_clear_time(const TimingProblem& p, std::span<const double> f_r) {
  check_sizes(p, f_r);
  if (queue_mode(p)) {
    double t = p.q_d_s;
    for (std::size_t i = 0; i < p.platoons.size(); ++i) t += queue_term(p, p.platoons[i], f_r[i]);
    return t;
  }
  // Without a queue the telescoping sum leaves the last admitted platoon.
  for (std::size_t i = p.platoons.size(); i-- > 0;) {
    if (f_r[i] > 0.0) {
      return std::max(p.q_d_s, head_time(p, p.platoons[i]) + tail_time(p, p.platoons[i], f_r[i]));
    }
  }
  return p.q_d_s;
}

double nonselected_wait(const TimingProblem& p, std::span<const double> f_r) {
  check_sizes(p, f_r);
  double t = 0.0;
  for (std::size_t i = 0; i < p.platoons.size(); ++i) {
    if (f_r[i] == 0.0) t += p.cycle_s * (p.platoons[i].cv_count + followers(p, p.platoons[i]));
  }
  return t;
}

double progression_score(const TimingProblem& p, std::span<const double> f_r) {
  check_sizes(p, f_r);
  double s = 0.0;
  for (std::size_t i = 0; i < p.platoons.size(); ++i) {
    s += p.platoons[i].cv_count + followers(p, p.platoons[i]) * f_r[i];
  }
  return s;
}

ObjectiveRange objective_range(const TimingProblem& p) {
  ObjectiveRange r;
  r.wait_lo = p.ig_cor_s + p.q_d_s;
  r.wait_hi = p.ig_cor_s + std::max(p.g_hi_s, p.q_d_s);
  for (const auto& t : p.platoons) {
    const double n = followers(p, t);
    r.wait_hi += t.length_mi * p.segment_count * p.h_s / p.segment_length_mi + p.cycle_s * (t.cv_count + n);
    r.prog_lo += t.cv_count;
    r.prog_hi += t.cv_count + n;
  }
  return r;
}

double scalarized_objective(const TimingProblem& p, std::span<const double> f_r) {
  const ObjectiveRange r = objective_range(p);
  const double wait = queue_clear_time(p, f_r) + blocked_wait_time(p, f_r) + nonselected_wait(p, f_r);
  return p.weights.w1 * norm(wait, r.wait_lo, r.wait_hi) -
         p.weights.w2 * norm(progression_score(p, f_r), r.prog_lo, r.prog_hi);
}

namespace {

// Depth-first branch and bound over the f_r grid for one fixed green.
// The objective is affine in the separable terms plus alpha * T_q, so a
// lower bound is the fixed part plus each free platoon's own minimum.
class AdmissionSearch {
 public:
  AdmissionSearch(const TimingProblem& p, int g) : p_(p), g_(g), n_(p.platoons.size()) {
    const ObjectiveRange r = objective_range(p);
    alpha_ = r.wait_hi - r.wait_lo > 1e-12 ? p.weights.w1 / (r.wait_hi - r.wait_lo) : 0.0;
    beta_ = r.prog_hi - r.prog_lo > 1e-12 ? p.weights.w2 / (r.prog_hi - r.prog_lo) : 0.0;
    levels_ = static_cast<int>(std::lround(1.0 / p.fr_step));
    queue_ = queue_mode(p);
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    // Without a queue T_q is set by the last admitted platoon, so decide from the back.
    if (!queue_) std::reverse(order_.begin(), order_.end());
    rest_.assign(n_ + 1, 0.0);
    for (std::size_t d = n_; d-- > 0;) {
      double m = std::numeric_limits<double>::infinity();
      for (int k = 0; k <= levels_; ++k) m = std::min(m, local(order_[d], level(k)));
      rest_[d] = rest_[d + 1] + m;
    }
    f_.assign(n_, 0.0);
  }

  GreenCandidate run() {
    GreenCandidate c;
    c.g = g_;
    if (p_.q_d_s > g_ + kFeasTol) return c;
    dfs(0, 0.0, 0.0, -1.0);
    c.feasible = found_;
    c.objective = best_;
    c.f_r = best_f_;
    return c;
  }

 private:
  double level(int k) const { return static_cast<double>(k) / levels_; }

  // Separable part of the objective for platoon i (queue-mode T_q included).
  double local(std::size_t i, double f) const {
    const PlatoonTerm& t = p_.platoons[i];
    const double n = followers(p_, t);
    double v = alpha_ * (t.length_mi * (1.0 - f) * p_.segment_count * p_.h_s / p_.segment_length_mi +
                         (f == 0.0 ? p_.cycle_s * (t.cv_count + n) : 0.0)) -
               beta_ * n * f;
    if (queue_) v += alpha_ * queue_term(p_, t, f);
    return v;
  }

  // `clear` is T_q so far: queue mode accumulates, otherwise it is fixed by
  // the first admitted platoon met (negative while undetermined).
  void dfs(std::size_t depth, double partial, double clear, double last) {
    const double t_q = queue_ ? p_.q_d_s + clear : std::max(p_.q_d_s, last);
    if (t_q > g_ + kFeasTol) return;
    // With lo = IG + Q_d the objective is sum(local) plus alpha * (T_q - Q_d)
    // outside queue mode; in queue mode local already carries T_q.
    const double bound = partial + rest_[depth] + (queue_ ? 0.0 : alpha_ * (t_q - p_.q_d_s));
    if (found_ && bound > best_ + 1e-9) return;
    if (depth == n_) {
      leaf();
      return;
    }
    const std::size_t i = order_[depth];
    for (int k = levels_; k >= 0; --k) {
      const double f = level(k);
      f_[i] = f;
      double next_clear = clear;
      double next_last = last;
      if (queue_) {
        next_clear += queue_term(p_, p_.platoons[i], f);
      } else if (last < 0.0 && f > 0.0) {
        next_last = head_time(p_, p_.platoons[i]) + tail_time(p_, p_.platoons[i], f);
      }
      dfs(depth + 1, partial + local(i, f), next_clear, next_last);
    }
    f_[i] = 0.0;
  }

  void leaf() {
    if (queue_clear_time(p_, f_) > g_ + kFeasTol) return;
    const double j = scalarized_objective(p_, f_);
    const bool better = !found_ || j < best_ - kTieTol ||
                        (std::abs(j - best_) <= kTieTol &&
                         std::lexicographical_compare(best_f_.begin(), best_f_.end(), f_.begin(), f_.end()));
    if (better) {
      found_ = true;
      best_ = j;
      best_f_ = f_;
    }
  }

  const TimingProblem& p_;
  int g_;
  std::size_t n_;
  double alpha_ = 0.0, beta_ = 0.0;
  int levels_ = 20;
  bool queue_ = false;
  std::vector<std::size_t> order_;
  std::vector<double> rest_;
  std::vector<double> f_;
  bool found_ = false;
  double best_ = std::numeric_limits<double>::infinity();
  std::vector<double> best_f_;
};

std::vector<int> green_values(const TimingProblem& p) {
  const int lo = static_cast<int>(std::ceil(p.g_lo_s - kFeasTol));
  const int hi = static_cast<int>(std::floor(p.g_hi_s + kFeasTol));
  if (lo > hi) {
    std::ostringstream msg;
    msg << "g_min <= g <= g_max: empty coordinated green range [" << p.g_lo_s << ", " << p.g_hi_s << "]";
    throw ValidationError(msg.str());
  }
  std::vector<int> gs;
  for (int g = lo; g <= hi; ++g) gs.push_back(g);
  return gs;
}

TimingSolution pick(const TimingProblem& p, const std::vector<GreenCandidate>& sweep) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : sweep) {
    if (c.feasible) best = std::min(best, c.objective);
  }
  if (!std::isfinite(best)) {
    std::ostringstream msg;
    msg << "T_q <= g: pre-existing queue clear time " << p.q_d_s << " s exceeds every green up to " << p.g_hi_s;
    throw ValidationError(msg.str());
  }
  const GreenCandidate* chosen = nullptr;
  int required = 0;
  for (const auto& c : sweep) {
    if (!c.feasible || c.objective > best + kTieTol) continue;
    if (chosen == nullptr) required = c.g;
    chosen = &c;  // sweep ascends in g, so the last tie is the largest green
  }
  TimingSolution s;
  s.f_r = chosen->f_r;
  s.g_cor = chosen->g;
  s.g_required = required;
  s.g_noncor = static_cast<int>(std::lround(p.cycle_s - p.intergreen_total_s)) - s.g_cor;
  s.t_s = blocked_wait_time(p, s.f_r);
  s.t_q = queue_clear_time(p, s.f_r);
  s.t_p = nonselected_wait(p, s.f_r);
  s.progression = progression_score(p, s.f_r);
  s.objective = chosen->objective;
  return s;
}

}  // namespace

GreenCandidate best_admission(const TimingProblem& p, int g) { return AdmissionSearch(p, g).run(); }

std::vector<GreenCandidate> green_sweep_serial(const TimingProblem& p) {
  const auto gs = green_values(p);
  std::vector<GreenCandidate> out(gs.size());
  for (std::size_t i = 0; i < gs.size(); ++i) out[i] = best_admission(p, gs[i]);
  return out;
}

std::vector<GreenCandidate> green_sweep(const TimingProblem& p) {
  const auto gs = green_values(p);
  std::vector<GreenCandidate> out(gs.size());
  const long n = static_cast<long>(gs.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = best_admission(p, gs[static_cast<std::size_t>(i)]);
  return out;
}

TimingSolution optimize_intersection(const TimingProblem& p) { return pick(p, green_sweep(p)); }
TimingSolution optimize_intersection_serial(const TimingProblem& p) { return pick(p, green_sweep_serial(p)); }

void check_solution(const TimingProblem& p, const TimingSolution& s, double tol) {
  const auto fail = [](const std::string& what) { throw ValidationError("timing solution: " + what); };
  if (s.f_r.size() != p.platoons.size()) fail("f_r size");
  for (double f : s.f_r) {
    if (f < 0.0 || f > 1.0) fail("f_r outside [0, 1]");
  }
  if (queue_clear_time(p, s.f_r) > s.g_cor + tol) fail("T_q exceeds g_cor");
  if (s.g_cor < p.g_lo_s - tol || s.g_cor > p.g_hi_s + tol) fail("g_cor outside bounds");
  if (std::abs(s.g_cor + s.g_noncor + p.intergreen_total_s - p.cycle_s) > tol) fail("ring-barrier sum differs from C");
}

}  // namespace cvsig
