#include "cvsig/controller.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "cvsig/units.hpp"

namespace cvsig {

namespace {

constexpr double kEps = 1e-9;

// Rear of the farthest queued CV platoon, in meters from the stop line; -1 without one.
double queued_extent_m(const ApproachView& a, const Segment& seg, double queued_speed_mph) {
  const QueueZone zone{a.segment, seg.length_mi};
  double extent = -1.0;
  for (const auto& p : identify_platoons(a.bsms, seg, a.segment, zone)) {
    if (p.avg_speed_mph >= queued_speed_mph) continue;
    extent = std::max(extent, seg.length_m() - p.tail_position_m);
  }
  return extent;
}

// Vehicles expected in the minor queue. CVs give it directly; otherwise the
// predicted arrivals over the red.
double minor_queue_vehicles(const ApproachView& a, const Segment& seg, double red_elapsed_s,
                            const MinorActivationOptions& o) {
  const double arrived = a.arrival_rate_vps >= 0 ? a.arrival_rate_vps * std::max(0.0, red_elapsed_s) : 0.0;
  if (!a.bsms.empty()) {
    // Unseen vehicles may wait behind the last queued CV.
    const double ext = queued_extent_m(a, seg, o.queued_speed_mph);
    return std::max(arrived, ext < 0 ? 0.0 : ext / o.vehicle_spacing_m + 1.0);
  }
  if (a.arrival_rate_vps >= 0) return arrived;
  const double n = std::max(0.0, a.predicted_count);
  const double q_vps = n * units::mph_to_mps(seg.free_flow_speed_mph) / seg.length_m();
  return std::min(n, q_vps * std::max(0.0, red_elapsed_s));
}

}  // namespace

bool minor_green_activation(const ApproachView& minor, const Segment& segment, double red_elapsed_s,
                            double max_allowable_queue_mi, const MinorActivationOptions& options) {
  const double allowable_m = units::miles_to_meters(max_allowable_queue_mi);
  return minor_queue_vehicles(minor, segment, red_elapsed_s, options) * options.vehicle_spacing_m > allowable_m;
}

std::string_view to_string(ControlMode m) {
  switch (m) {
    case ControlMode::Grace: return "grace";
    case ControlMode::Planned: return "planned";
    case ControlMode::MonitorSide: return "monitor-side";
    case ControlMode::Resting: return "resting";
  }
  return "?";
}

void write_decision_header(std::ostream& out) {
  out << "intersection,cycle,time_s,event,mode,q_d_s,g_cor,g_noncor,g_required,f_r,t_s,t_q,t_p,progression,"
         "objective,planned_end_s\n";
}

void write_decision(std::ostream& out, const DecisionRecord& r) {
  const auto& s = r.solution;
  out << r.intersection << ',' << r.cycle << ',' << r.time_s << ',' << r.event << ',' << to_string(r.mode) << ','
      << r.q_d_s << ',' << s.g_cor << ',' << s.g_noncor << ',' << s.g_required << ',';
  for (std::size_t i = 0; i < s.f_r.size(); ++i) out << (i ? ";" : "") << s.f_r[i];
  out << ',' << s.t_s << ',' << s.t_q << ',' << s.t_p << ',' << s.progression << ',' << s.objective << ','
      << r.planned_end_s << '\n';
}

AdaptiveController::AdaptiveController(const Corridor& corridor, int intersection, AdaptiveConfig config)
    : corridor_(&corridor), index_(intersection), cfg_(config) {
  const PhasePlan& plan = corridor.intersections.at(static_cast<std::size_t>(intersection)).plan;
  const std::vector<NoncoordinatedPhase> minor{{plan.noncoordinated().min_green_s, plan.minor_clearance_s()}};
  bounds_.g_min_s = plan.coordinated().min_green_s;
  bounds_.g_coord_max_s =
      std::min(plan.coordinated().max_green_s,
               max_green_coordinated(plan.cycle_s, plan.major_clearance_s(), minor, bounds_.g_min_s));
  bounds_.g_noncoord_max_s = plan.noncoordinated().max_green_s;
}

std::vector<DecisionRecord> AdaptiveController::take_decisions() {
  std::vector<DecisionRecord> out;
  out.swap(decisions_);
  return out;
}

void AdaptiveController::on_coordinated_green_start(const SignalState& s, const SensedIntersection& in) {
  mode_ = ControlMode::Grace;
  planned_ = false;
  rechecked_ = false;
  const Segment& seg = corridor_->segment(in.coordinated.segment);
  const QueueZone zone = expected_queue_zone(seg, in.coordinated.segment, in.coordinated.bsms,
                                             seg.historical_queue_mi, cfg_.queued_speed_mph);
  const auto platoons = identify_platoons(in.coordinated.bsms, seg, in.coordinated.segment, zone);
  const double l_q = estimate_queue_length(platoons, seg, {cfg_.queued_speed_mph, 15.0});

  ShockwaveInput w;
  w.red_s = s.last_red_s();
  w.queue_mi = l_q;
  w.n_queued = units::miles_to_meters(l_q) / cfg_.vehicle_spacing_m;
  w.cycle_s = s.cycle_s;
  w.start_headway_s = cfg_.start_headway_s;
  // Uncongested section: whatever the prediction leaves outside the queue.
  const double free_mi = std::max(1e-6, seg.length_mi - l_q);
  const double upstream_veh = std::max(0.0, in.coordinated.predicted_count - w.n_queued);
  double speed = 0.0;
  int moving = 0;
  for (const auto& b : in.coordinated.bsms) {
    if (b.speed_mph >= cfg_.queued_speed_mph) {
      speed += b.speed_mph;
      ++moving;
    }
  }
  const double v = moving ? speed / moving : seg.free_flow_speed_mph;
  w.k_a_vpm = upstream_veh / free_mi;
  w.q_a_vph = w.k_a_vpm * v;
  wave_ = analyze_queue(w);
  q_d_ = wave_.t_q_s;
}

double AdaptiveController::latest_major_end(const SignalState& s) const {
  const PhasePlan& plan = corridor_->intersections[static_cast<std::size_t>(index_)].plan;
  return s.next_green_start_s - plan.major_clearance_s() - plan.noncoordinated().min_green_s -
         plan.minor_clearance_s();
}

TimingProblem AdaptiveController::build_problem(const SignalState& s, const SensedIntersection& in) const {
  const PhasePlan& plan = corridor_->intersections[static_cast<std::size_t>(index_)].plan;
  const Segment& seg = corridor_->segment(in.coordinated.segment);
  const double elapsed = in.now_s - s.green_start_s;

  TimingProblem p;
  set_green_range(p, plan, bounds_);
  const double lo = std::max(0.0, std::ceil(p.g_lo_s - elapsed - kEps));
  const double hi = std::max(0.0, std::floor(p.g_hi_s - elapsed + kEps));
  p.g_lo_s = std::min(lo, hi);
  p.g_hi_s = hi;
  p.q_d_s = std::min(std::max(0.0, q_d_ - elapsed), p.g_hi_s);
  p.segment_count = in.coordinated.predicted_count;
  p.segment_cv_count = static_cast<int>(in.coordinated.bsms.size());
  p.segment_length_mi = seg.length_mi;
  p.h_s = cfg_.h_s;
  p.ig_cor_s = plan.major_clearance_s();
  p.weights = cfg_.weights;
  p.fr_step = cfg_.fr_step;
  p.head_offset_m = cfg_.head_offset_m;

  const QueueZone zone =
      expected_queue_zone(seg, in.coordinated.segment, in.coordinated.bsms, seg.historical_queue_mi,
                          cfg_.queued_speed_mph);
  for (const auto& pl : identify_platoons(in.coordinated.bsms, seg, in.coordinated.segment, zone)) {
    // Standing queue is already in Q_d.
    if (pl.is_queued && pl.zone == Zone::InsideQueueZone) continue;
    PlatoonTerm t;
    t.length_mi = pl.length_mi;
    t.speed_mph = pl.avg_speed_mph;
    t.head_distance_mi = units::meters_to_miles(seg.length_m() - pl.head_position_m);
    t.cv_count = pl.cv_count;
    t.d_ahead_mi = t.head_distance_mi;
    const double t_h = units::travel_seconds(t.head_distance_mi, std::max(t.speed_mph, p.creep_speed_mph));
    t.affected = t.speed_mph < cfg_.queued_speed_mph || t_h < p.q_d_s;
    p.platoons.push_back(t);
  }
  return p;
}

void AdaptiveController::optimize(const SignalState& s, const SensedIntersection& in, const char* event) {
  const PhasePlan& plan = corridor_->intersections[static_cast<std::size_t>(index_)].plan;
  const TimingProblem p = build_problem(s, in);
  DecisionRecord rec;
  rec.intersection = index_;
  rec.cycle = s.cycle_index;
  rec.time_s = in.now_s;
  rec.event = event;
  rec.q_d_s = p.q_d_s;
  const double elapsed = in.now_s - s.green_start_s;
  try {
    rec.solution = optimize_intersection(p);
    check_solution(p, rec.solution);
    ++verified_;
    planned_end_ = std::max(s.green_start_s + cfg_.grace_s, in.now_s + rec.solution.g_required);
    const double split = plan.cycle_s - plan.major_clearance_s() - plan.minor_clearance_s();
    mode_ = elapsed + rec.solution.g_required > split - bounds_.g_noncoord_max_s + kEps ? ControlMode::MonitorSide
                                                                                         : ControlMode::Planned;
  } catch (const ValidationError&) {
    rec.event = "infeasible";
    planned_end_ = in.now_s + p.g_hi_s;
    mode_ = ControlMode::Planned;
  }
  rec.mode = mode_;
  rec.planned_end_s = planned_end_;
  decisions_.push_back(std::move(rec));
}

bool AdaptiveController::minor_call(const SignalState& s, const SensedIntersection& in) const {
  const double red = in.now_s - s.last_minor_end_s;
  if (!in.minors.empty() && red + kEps >= cfg_.minor_max_red_s) return true;
  for (const auto& m : in.minors) {
    const Segment& seg = corridor_->segment(m.segment);
    if (minor_green_activation(m, seg, red, seg.max_allowable_queue_mi,
                               {cfg_.queued_speed_mph, cfg_.vehicle_spacing_m})) {
      return true;
    }
  }
  return false;
}

void AdaptiveController::on_minor_green_start(const SignalState& s, const SensedIntersection& in) {
  const PhasePlan& plan = corridor_->intersections[static_cast<std::size_t>(index_)].plan;
  const double red = in.now_s - s.last_minor_end_s;
  double n = 0.0;
  for (const auto& m : in.minors) {
    const Segment& seg = corridor_->segment(m.segment);
    n = std::max(n, minor_queue_vehicles(m, seg, red, {cfg_.queued_speed_mph, cfg_.vehicle_spacing_m}));
    // A recall with nothing sensed serves at least the usual queue.
    if (red + kEps >= cfg_.minor_max_red_s) {
      n = std::max(n, m.arrival_rate_vps >= 0 ? m.arrival_rate_vps * red
                                              : units::miles_to_meters(seg.historical_queue_mi) / cfg_.vehicle_spacing_m);
    }
  }
  const double force_off = s.next_green_start_s - plan.minor_clearance_s() - in.now_s;
  const double g_min = plan.noncoordinated().min_green_s;
  const double g_max = std::max(g_min, std::min(bounds_.g_noncoord_max_s, force_off));
  minor_end_ = in.now_s + std::clamp(n * cfg_.h_s + cfg_.minor_extra_s, g_min, g_max);
}

void AdaptiveController::tick(SignalState& s, const SensedIntersection& in) {
  const PhasePlan& plan = corridor_->intersections[static_cast<std::size_t>(index_)].plan;
  const double now = in.now_s;
  if (s.interval == Interval::MinorGreen) {
    if (now + kEps >= minor_end_) end_green(s, plan, now);
    return;
  }
  if (s.interval != Interval::MajorGreen) return;

  const double elapsed = now - s.green_start_s;
  if (elapsed + kEps < cfg_.grace_s) {
    mode_ = ControlMode::Grace;
    return;
  }
  if (!planned_) {
    planned_ = true;
    optimize(s, in, "plan");
  }
  if (!rechecked_ && now + kEps >= planned_end_ - cfg_.recheck_s && now < planned_end_) {
    rechecked_ = true;
    if (!build_problem(s, in).platoons.empty()) optimize(s, in, "recheck");
  }
  const bool can_serve_minor = now <= latest_major_end(s) + kEps;
  if (mode_ == ControlMode::MonitorSide && now < planned_end_) {
    // Past the point that still leaves the minor its max green, a side-street
    // queue over the allowable length cuts the platoon service short.
    const double split = plan.cycle_s - plan.major_clearance_s() - plan.minor_clearance_s();
    if (elapsed + kEps >= split - bounds_.g_noncoord_max_s && can_serve_minor && minor_call(s, in)) {
      end_green(s, plan, now);
    }
    return;
  }
  if (now + kEps >= planned_end_) {
    mode_ = ControlMode::Resting;
    if (can_serve_minor && minor_call(s, in)) end_green(s, plan, now);
  }
}

std::optional<OffsetSolution> update_offset(SignalState& downstream, const SignalState& upstream,
                                            const Segment& link, const OffsetInputs& in, const AdaptiveConfig& cfg,
                                            double h_s) {
  OffsetProblem p;
  p.r_n_s = std::round(in.upstream_red_s);
  p.r_n1_s = std::round(in.downstream_red_s);
  p.q_s1_vph = in.side_inflow_vph / 2.0;
  p.q_s2_vph = in.side_inflow_vph / 2.0;
  p.q_up_vph = in.upstream_flow_vph;
  p.h_s = h_s;
  p.length_mi = link.length_mi;
  p.v_ffs_mph = link.free_flow_speed_mph;
  p.v_bf_mph = std::clamp(in.v_bf_mph, -0.9 * link.free_flow_speed_mph, 0.0);
  p.alpha = cfg.offset_alpha;
  p.cycle_s = downstream.cycle_s;
  std::optional<OffsetSolution> sol;
  try {
    sol = optimize_offset(p);
  } catch (const ValidationError&) {
    return std::nullopt;
  }
  if (!sol) return std::nullopt;

  const double c = downstream.cycle_s;
  if (cfg.offset_tie == OffsetTie::QueueClearance || cfg.offset_tie == OffsetTie::Current) {
    double current = std::fmod(downstream.next_green_start_s - upstream.next_green_start_s, c);
    if (current > c / 2) current -= c;
    if (current < -c / 2) current += c;
    const int limit = t2_limit(p);
    const auto [lo, hi] = t1_range(p);
    const auto score = [&](int t1, int t2) {
      if (cfg.offset_tie == OffsetTie::Current) return std::abs(t2 - current);
      // Platoon reaching the downstream queue as it finishes clearing.
      const DerivedQuantities d = derived_quantities(p, t1, t2);
      return std::abs(t2 + d.t4_s - d.t3_s);
    };
    double best = score(sol->t1, sol->t2);
    for (int t1 = lo; t1 <= hi; ++t1) {
      const int t2 = implied_t2(p, t1);
      if (std::abs(t2) > limit || triangle_delay(p, t1, t2) > sol->delay + 1e-9) continue;
      const double d = score(t1, t2);
      if (d < best - 1e-9) {
        best = d;
        sol = OffsetSolution{t1, t2, derived_quantities(p, t1, t2), triangle_delay(p, t1, t2)};
      }
    }
  }

  SignalState next = downstream;
  next.upstream_green_start_s = upstream.next_green_start_s;
  next = apply_offset(next, sol->t2);
  const double nominal = downstream.green_start_s + c;
  double target = next.next_green_start_s;
  target += std::round((nominal - target) / c) * c;
  next.next_green_start_s =
      std::clamp(target, nominal - cfg.offset_transition * c, nominal + cfg.offset_transition * c);
  downstream = next;
  return sol;
}

}  // namespace cvsig
