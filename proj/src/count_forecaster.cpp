#include "cvsig/count_forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "cvsig/rng.hpp"

namespace cvsig {

// ---------------------------------------------------------------------------
// Features

EncodedFeatures FeatureVector::encode() const {
  EncodedFeatures e{};
  e[0] = cv_gap_m;
  e[1] = cv_speed_mph;
  e[2] = cv_wait_s;
  e[3] = num_cvs;
  e[4 + static_cast<int>(phase)] = 1.0;
  e[8 + static_cast<int>(direction)] = 1.0;
  return e;
}

PhaseFeature to_phase_feature(Indication ind) {
  switch (ind) {
    case Indication::Green: return PhaseFeature::Green;
    case Indication::Yellow: return PhaseFeature::Yellow;
    case Indication::Red: return PhaseFeature::Red;
  }
  return PhaseFeature::None;
}

PhaseFeature majority_phase(std::span<const PhaseFeature> window) {
  if (window.empty()) return PhaseFeature::None;
  std::array<int, 4> count{};
  std::array<std::size_t, 4> last{};
  for (std::size_t i = 0; i < window.size(); ++i) {
    const auto k = static_cast<std::size_t>(window[i]);
    ++count[k];
    last[k] = i;
  }
  std::size_t best = static_cast<std::size_t>(window.back());
  for (std::size_t k = 0; k < 4; ++k) {
    if (count[k] > count[best] || (count[k] == count[best] && count[k] > 0 && last[k] > last[best])) best = k;
  }
  return static_cast<PhaseFeature>(best);
}

FeatureBuilder::FeatureBuilder(Direction direction, int phase_window_s, double stop_speed_mph)
    : direction_(direction), phase_window_s_(std::max(1, phase_window_s)), stop_speed_mph_(stop_speed_mph) {}

FeatureVector FeatureBuilder::push(double time_s, std::span<const Bsm> segment_bsms,
                                   std::optional<Indication> upstream) {
  const double dt = last_time_s_ < 0 ? 1.0 : time_s - last_time_s_;
  last_time_s_ = time_s;

  FeatureVector fv;
  fv.time_s = time_s;
  fv.direction = direction_;
  phases_.push_back(upstream ? to_phase_feature(*upstream) : PhaseFeature::None);
  if (static_cast<int>(phases_.size()) > phase_window_s_) phases_.erase(phases_.begin());
  fv.phase = majority_phase(phases_);

  std::map<long, double> seen;
  std::vector<double> pos;
  double speed = 0.0, wait = 0.0;
  for (const auto& b : segment_bsms) {
    auto it = waited_.find(b.vehicle_id);
    double w = it == waited_.end() ? 0.0 : it->second;
    if (b.speed_mph < stop_speed_mph_) w += dt;
    seen[b.vehicle_id] = w;
    pos.push_back(b.position_m);
    speed += b.speed_mph;
    wait += w;
  }
  waited_ = std::move(seen);  // CVs that left the segment are forgotten

  fv.num_cvs = static_cast<int>(pos.size());
  if (!pos.empty()) {
    fv.cv_speed_mph = speed / pos.size();
    fv.cv_wait_s = wait / pos.size();
  }
  if (pos.size() >= 2) {
    std::sort(pos.begin(), pos.end());
    fv.cv_gap_m = (pos.back() - pos.front()) / static_cast<double>(pos.size() - 1);
  }
  return fv;
}

std::vector<FeatureVector> build_features(std::span<const Bsm> bsms, std::span<const Indication> phase_log,
                                          int segment, Direction direction, int t_begin, int t_end,
                                          int phase_window_s) {
  std::map<long, std::vector<Bsm>> by_second;
  for (const auto& b : bsms) {
    if (b.segment != segment) continue;
    const long t = std::lround(std::floor(b.time_s));
    if (t >= t_begin && t < t_end) by_second[t].push_back(b);
  }
  FeatureBuilder builder(direction, phase_window_s);
  std::vector<FeatureVector> out;
  for (int t = t_begin; t < t_end; ++t) {
    std::optional<Indication> ind;
    const auto k = static_cast<std::size_t>(t - t_begin);
    if (k < phase_log.size()) ind = phase_log[k];
    const auto it = by_second.find(t);
    out.push_back(it == by_second.end() ? builder.push(t, {}, ind) : builder.push(t, it->second, ind));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

std::string_view phase_name(PhaseFeature p) {
  switch (p) {
    case PhaseFeature::None: return "none";
    case PhaseFeature::Green: return "green";
    case PhaseFeature::Yellow: return "yellow";
    case PhaseFeature::Red: return "red";
  }
  return "none";
}

PhaseFeature parse_phase(std::string_view s) {
  if (s == "none") return PhaseFeature::None;
  if (s == "green") return PhaseFeature::Green;
  if (s == "yellow") return PhaseFeature::Yellow;
  if (s == "red") return PhaseFeature::Red;
  throw ValidationError("unknown phase '" + std::string(s) + "'");
}

}  // namespace

void write_dataset_csv(std::ostream& out, std::span<const DatasetRow> rows) {
  out << "time_s,segment_id,cv_gap_m,cv_speed_mph,cv_wait_s,num_cvs,phase,direction,label\n";
  out.precision(17);
  for (const auto& r : rows) {
    const auto& f = r.features;
    out << r.time_s << ',' << r.segment << ',' << f.cv_gap_m << ',' << f.cv_speed_mph << ',' << f.cv_wait_s << ','
        << f.num_cvs << ',' << phase_name(f.phase) << ',' << to_string(f.direction) << ',' << r.label << '\n';
  }
}

std::vector<DatasetRow> read_dataset_csv(std::istream& in) {
  std::vector<DatasetRow> rows;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.rfind("time_s", 0) == 0) continue;
    std::stringstream ss(line);
    std::string f[9];
    for (auto& x : f) std::getline(ss, x, ',');
    try {
      DatasetRow r;
      r.time_s = std::stod(f[0]);
      r.segment = f[1];
      r.features.time_s = r.time_s;
      r.features.cv_gap_m = std::stod(f[2]);
      r.features.cv_speed_mph = std::stod(f[3]);
      r.features.cv_wait_s = std::stod(f[4]);
      r.features.num_cvs = std::stoi(f[5]);
      r.features.phase = parse_phase(f[6]);
      r.features.direction = parse_direction(f[7]);
      r.label = std::stod(f[8]);
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ValidationError("dataset csv line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<Sample> make_samples(std::span<const DatasetRow> rows, int lookback, int stride) {
  if (lookback < 1 || stride < 1) throw ValidationError("make_samples: lookback and stride must be >= 1");
  std::vector<Sample> out;
  std::size_t begin = 0;
  while (begin < rows.size()) {
    std::size_t end = begin;
    while (end < rows.size() && rows[end].segment == rows[begin].segment) ++end;
    const auto n = end - begin;
    for (std::size_t k = static_cast<std::size_t>(lookback) - 1; k < n; k += static_cast<std::size_t>(stride)) {
      const auto first = begin + k + 1 - static_cast<std::size_t>(lookback);
      const auto last = begin + k;
      if (std::abs(rows[last].time_s - rows[first].time_s - (lookback - 1)) > 1e-6) continue;
      Sample s;
      for (auto i = first; i <= last; ++i) s.steps.push_back(rows[i].features.encode());
      s.label = rows[last].label;
      s.time_s = rows[last].time_s;
      s.num_cvs_last = rows[last].features.num_cvs;
      out.push_back(std::move(s));
    }
    begin = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nadam

Nadam::Nadam(std::size_t size, NadamConfig config) : c_(config), m_(size, 0.0), v_(size, 0.0) {
  if (!(c_.beta1 > 0 && c_.beta1 < 1 && c_.beta2 > 0 && c_.beta2 < 1)) {
    throw ValidationError("nadam: betas must lie in (0, 1)");
  }
}

void Nadam::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double t = static_cast<double>(t_);
  const double mu_t = c_.beta1 * (1.0 - 0.5 * std::pow(0.96, t * c_.schedule_decay));
  const double mu_next = c_.beta1 * (1.0 - 0.5 * std::pow(0.96, (t + 1.0) * c_.schedule_decay));
  m_schedule_ *= mu_t;
  const double schedule_next = m_schedule_ * mu_next;
  const double v_corr = 1.0 - std::pow(c_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * g;
    v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * g * g;
    const double g_hat = g / (1.0 - m_schedule_);
    const double m_hat = m_[i] / (1.0 - schedule_next);
    const double v_hat = v_[i] / v_corr;
    const double m_bar = (1.0 - mu_t) * g_hat + mu_next * m_hat;
    params[i] -= c_.learning_rate * m_bar / (std::sqrt(v_hat) + c_.epsilon);
  }
}

// ---------------------------------------------------------------------------
// LSTM

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Layout {
  int in, h, z;
  std::size_t w, b, w_out, b_out, total;
  explicit Layout(int hidden) : in(kFeatureCount), h(hidden), z(kFeatureCount + hidden) {
    w = 0;
    b = static_cast<std::size_t>(4 * h * z);
    w_out = b + static_cast<std::size_t>(4 * h);
    b_out = w_out + static_cast<std::size_t>(h);
    total = b_out + 1;
  }
};

// Per-sequence activations kept for the backward pass.
struct Trace {
  std::vector<double> xh, gates, c, tanh_c, h;  // per step: z, 4H, H, H, H
};

double run_forward(const Layout& L, const double* p, std::span<const EncodedFeatures> steps, Trace& tr) {
  const int T = static_cast<int>(steps.size());
  const int H = L.h, Z = L.z;
  tr.xh.assign(static_cast<std::size_t>(T * Z), 0.0);
  tr.gates.assign(static_cast<std::size_t>(T * 4 * H), 0.0);
  tr.c.assign(static_cast<std::size_t>((T + 1) * H), 0.0);  // c[0] is the initial state
  tr.tanh_c.assign(static_cast<std::size_t>(T * H), 0.0);
  tr.h.assign(static_cast<std::size_t>((T + 1) * H), 0.0);
  const double* W = p + L.w;
  const double* bias = p + L.b;
  for (int t = 0; t < T; ++t) {
    double* xh = &tr.xh[static_cast<std::size_t>(t * Z)];
    std::copy(steps[t].begin(), steps[t].end(), xh);
    std::copy_n(&tr.h[static_cast<std::size_t>(t * H)], H, xh + L.in);
    double* a = &tr.gates[static_cast<std::size_t>(t * 4 * H)];
    for (int r = 0; r < 4 * H; ++r) {
      const double* row = W + static_cast<std::size_t>(r) * Z;
      double s = bias[r];
      for (int k = 0; k < Z; ++k) s += row[k] * xh[k];
      a[r] = s;
    }
    const double* c_prev = &tr.c[static_cast<std::size_t>(t * H)];
    double* c = &tr.c[static_cast<std::size_t>((t + 1) * H)];
    double* tc = &tr.tanh_c[static_cast<std::size_t>(t * H)];
    double* h = &tr.h[static_cast<std::size_t>((t + 1) * H)];
    for (int j = 0; j < H; ++j) {
      const double ig = sigmoid(a[j]);
      const double fg = sigmoid(a[H + j]);
      const double gg = std::tanh(a[2 * H + j]);
      const double og = sigmoid(a[3 * H + j]);
      a[j] = ig;
      a[H + j] = fg;
      a[2 * H + j] = gg;
      a[3 * H + j] = og;
      c[j] = fg * c_prev[j] + ig * gg;
      tc[j] = std::tanh(c[j]);
      h[j] = og * tc[j];
    }
  }
  const double* hT = &tr.h[static_cast<std::size_t>(T * H)];
  double y = p[L.b_out];
  for (int j = 0; j < H; ++j) y += p[L.w_out + j] * hT[j];
  return y;
}

// Accumulates d(loss)/d(params) for one sequence with d(loss)/dy = dy into g.
void run_backward(const Layout& L, const double* p, const Trace& tr, int T, double dy, double* g) {
  const int H = L.h, Z = L.z;
  const double* W = p + L.w;
  const double* hT = &tr.h[static_cast<std::size_t>(T * H)];
  std::vector<double> dh(static_cast<std::size_t>(H)), dc(static_cast<std::size_t>(H), 0.0),
      da(static_cast<std::size_t>(4 * H)), dxh(static_cast<std::size_t>(Z));
  for (int j = 0; j < H; ++j) {
    g[L.w_out + j] += dy * hT[j];
    dh[j] = dy * p[L.w_out + j];
  }
  g[L.b_out] += dy;
  for (int t = T - 1; t >= 0; --t) {
    const double* a = &tr.gates[static_cast<std::size_t>(t * 4 * H)];
    const double* c_prev = &tr.c[static_cast<std::size_t>(t * H)];
    const double* tc = &tr.tanh_c[static_cast<std::size_t>(t * H)];
    const double* xh = &tr.xh[static_cast<std::size_t>(t * Z)];
    for (int j = 0; j < H; ++j) {
      const double ig = a[j], fg = a[H + j], gg = a[2 * H + j], og = a[3 * H + j];
      dc[j] += dh[j] * og * (1.0 - tc[j] * tc[j]);
      da[j] = dc[j] * gg * ig * (1.0 - ig);
      da[H + j] = dc[j] * c_prev[j] * fg * (1.0 - fg);
      da[2 * H + j] = dc[j] * ig * (1.0 - gg * gg);
      da[3 * H + j] = dh[j] * tc[j] * og * (1.0 - og);
      dc[j] *= fg;
    }
    std::fill(dxh.begin(), dxh.end(), 0.0);
    for (int r = 0; r < 4 * H; ++r) {
      const double d = da[r];
      if (d == 0.0) continue;
      double* gw = g + L.w + static_cast<std::size_t>(r) * Z;
      const double* row = W + static_cast<std::size_t>(r) * Z;
      for (int k = 0; k < Z; ++k) {
        gw[k] += d * xh[k];
        dxh[k] += d * row[k];
      }
      g[L.b + r] += d;
    }
    for (int j = 0; j < H; ++j) dh[j] = dxh[L.in + j];
  }
}

// Squared error of one normalized sample; its gradient (scaled by `scale`)
// is written into `g`, which is zeroed first.
double sample_gradient(const Layout& L, const double* p, const Sample& s, double scale, double* g) {
  Trace tr;
  std::fill(g, g + L.total, 0.0);
  const double y = run_forward(L, p, s.steps, tr);
  const double e = y - s.label;
  run_backward(L, p, tr, static_cast<int>(s.steps.size()), 2.0 * e * scale, g);
  return e * e;
}

}  // namespace

LstmModel::LstmModel(int hidden, Hyperparams hyper) : hidden_(hidden), hyper_(hyper) {
  if (hidden < 1) throw ValidationError("lstm: neurons must be >= 1");
  if (hyper.lookback < 1) throw ValidationError("lstm: lookback must be >= 1");
  hyper_.neurons = hidden;
  params_.assign(Layout(hidden).total, 0.0);
}

void LstmModel::initialize(std::uint64_t seed) {
  const Layout L(hidden_);
  std::mt19937_64 gen(seed);
  const double r = 1.0 / std::sqrt(static_cast<double>(hidden_));
  std::uniform_real_distribution<double> u(-r, r);
  for (auto& x : params_) x = u(gen);
  for (int j = 0; j < 4 * hidden_; ++j) params_[L.b + j] = 0.0;
  for (int j = 0; j < hidden_; ++j) params_[L.b + hidden_ + j] = 1.0;
  params_[L.b_out] = 0.0;
}

double LstmModel::forward_normalized(std::span<const EncodedFeatures> steps) const {
  Trace tr;
  return run_forward(Layout(hidden_), params_.data(), steps, tr);
}

double LstmModel::predict(std::span<const EncodedFeatures> steps) const {
  if (static_cast<int>(steps.size()) != hyper_.lookback) {
    throw ValidationError("lstm: sequence length " + std::to_string(steps.size()) + " != lookback " +
                          std::to_string(hyper_.lookback));
  }
  std::vector<EncodedFeatures> z(steps.begin(), steps.end());
  for (auto& s : z) {
    for (int k = 0; k < kFeatureCount; ++k) s[k] = (s[k] - norm_.mean[k]) / norm_.stdev[k];
  }
  const double y = norm_.label_mean + norm_.label_std * forward_normalized(z);
  return std::isfinite(y) ? std::max(0.0, y) : 0.0;
}

double LstmModel::predict(std::span<const FeatureVector> steps) const {
  std::vector<EncodedFeatures> e;
  e.reserve(steps.size());
  for (const auto& s : steps) e.push_back(s.encode());
  return predict(e);
}

nlohmann::json LstmModel::to_json() const {
  nlohmann::json j;
  j["format"] = "cvsig-lstm";
  j["version"] = 1;
  j["inputs"] = kFeatureCount;
  j["hidden"] = hidden_;
  j["hyper"] = {{"neurons", hyper_.neurons},
                {"batch_size", hyper_.batch_size},
                {"max_epochs", hyper_.max_epochs},
                {"patience", hyper_.patience},
                {"lookback", hyper_.lookback}};
  j["norm"] = {{"mean", norm_.mean},
               {"stdev", norm_.stdev},
               {"label_mean", norm_.label_mean},
               {"label_std", norm_.label_std}};
  j["params"] = params_;
  return j;
}

LstmModel LstmModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "cvsig-lstm") throw ValidationError("not a cvsig-lstm checkpoint");
    if (j.at("inputs").get<int>() != kFeatureCount) throw ValidationError("checkpoint input size mismatch");
    Hyperparams hp;
    const auto& h = j.at("hyper");
    hp.neurons = h.at("neurons");
    hp.batch_size = h.at("batch_size");
    hp.max_epochs = h.at("max_epochs");
    hp.patience = h.at("patience");
    hp.lookback = h.at("lookback");
    LstmModel m(j.at("hidden").get<int>(), hp);
    const auto& n = j.at("norm");
    m.norm_.mean = n.at("mean").get<EncodedFeatures>();
    m.norm_.stdev = n.at("stdev").get<EncodedFeatures>();
    m.norm_.label_mean = n.at("label_mean");
    m.norm_.label_std = n.at("label_std");
    auto p = j.at("params").get<std::vector<double>>();
    if (p.size() != m.params_.size()) throw ValidationError("checkpoint parameter count mismatch");
    m.params_ = std::move(p);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

void LstmModel::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw ValidationError("cannot write " + file.string());
  out << to_json().dump() << '\n';
}

LstmModel LstmModel::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot read " + file.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

double loss_and_gradient_serial(const LstmModel& model, std::span<const Sample> normalized,
                                std::span<const std::size_t> indices, std::span<double> grad) {
  const Layout L(model.hidden());
  std::fill(grad.begin(), grad.end(), 0.0);
  if (indices.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(indices.size());
  std::vector<double> g(L.total);
  double loss = 0.0;
  for (const auto i : indices) {
    loss += sample_gradient(L, model.params().data(), normalized[i], scale, g.data());
    for (std::size_t k = 0; k < L.total; ++k) grad[k] += g[k];
  }
  return loss * scale;
}

double loss_and_gradient(const LstmModel& model, std::span<const Sample> normalized,
                         std::span<const std::size_t> indices, std::span<double> grad) {
  const Layout L(model.hidden());
  std::fill(grad.begin(), grad.end(), 0.0);
  if (indices.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(indices.size());
  const auto n = static_cast<long>(indices.size());
  std::vector<double> g(static_cast<std::size_t>(n) * L.total);
  std::vector<double> se(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (long b = 0; b < n; ++b) {
    se[static_cast<std::size_t>(b)] = sample_gradient(L, model.params().data(), normalized[indices[b]], scale,
                                                      &g[static_cast<std::size_t>(b) * L.total]);
  }
  double loss = 0.0;
  for (long b = 0; b < n; ++b) {
    loss += se[static_cast<std::size_t>(b)];
    const double* gb = &g[static_cast<std::size_t>(b) * L.total];
    for (std::size_t k = 0; k < L.total; ++k) grad[k] += gb[k];
  }
  return loss * scale;
}

Normalization fit_normalization(std::span<const Sample> samples) {
  Normalization n;
  if (samples.empty()) return n;
  EncodedFeatures sum{}, sq{};
  double count = 0.0, ls = 0.0, lsq = 0.0;
  for (const auto& s : samples) {
    for (const auto& st : s.steps) {
      for (int k = 0; k < kFeatureCount; ++k) {
        sum[k] += st[k];
        sq[k] += st[k] * st[k];
      }
      count += 1.0;
    }
    ls += s.label;
    lsq += s.label * s.label;
  }
  for (int k = 0; k < kFeatureCount; ++k) {
    n.mean[k] = sum[k] / count;
    const double var = std::max(0.0, sq[k] / count - n.mean[k] * n.mean[k]);
    n.stdev[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  const double m = static_cast<double>(samples.size());
  n.label_mean = ls / m;
  const double lvar = std::max(0.0, lsq / m - n.label_mean * n.label_mean);
  n.label_std = lvar > 1e-12 ? std::sqrt(lvar) : 1.0;
  return n;
}

std::vector<Sample> normalize(std::span<const Sample> samples, const Normalization& norm) {
  std::vector<Sample> out(samples.begin(), samples.end());
  for (auto& s : out) {
    for (auto& st : s.steps) {
      for (int k = 0; k < kFeatureCount; ++k) st[k] = (st[k] - norm.mean[k]) / norm.stdev[k];
    }
    s.label = (s.label - norm.label_mean) / norm.label_std;
  }
  return out;
}

std::vector<double> predict_all(const LstmModel& model, std::span<const Sample> samples) {
  std::vector<double> out(samples.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(samples.size()); ++i) {
    out[static_cast<std::size_t>(i)] = model.predict(samples[static_cast<std::size_t>(i)].steps);
  }
  return out;
}

namespace {

double validation_rmse(const LstmModel& model, std::span<const Sample> raw) {
  std::vector<double> actual(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) actual[i] = raw[i].label;
  return rmse(actual, predict_all(model, raw));
}

CandidateResult fit_candidate(LstmModel& model, std::span<const Sample> train_norm, std::span<const Sample> val_raw,
                              const NadamConfig& nadam, std::uint64_t shuffle_seed) {
  const Hyperparams& hp = model.hyper();
  Nadam opt(model.params().size(), nadam);
  std::mt19937_64 gen(shuffle_seed);
  std::vector<std::size_t> order(train_norm.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(model.params().size());

  CandidateResult r{hp.neurons, hp.batch_size, 0, validation_rmse(model, val_raw)};
  std::vector<double> best = model.params();
  int stale = 0;
  for (int epoch = 0; epoch < hp.max_epochs && stale < hp.patience; ++epoch) {
    std::shuffle(order.begin(), order.end(), gen);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(hp.batch_size)) {
      const auto e = std::min(order.size(), b + static_cast<std::size_t>(hp.batch_size));
      loss_and_gradient(model, train_norm, std::span(order).subspan(b, e - b), grad);
      opt.step(model.params(), grad);
    }
    ++r.epochs_run;
    const double v = validation_rmse(model, val_raw);
    if (v < r.validation_rmse) {
      r.validation_rmse = v;
      best = model.params();
      stale = 0;
    } else {
      ++stale;
    }
  }
  model.params() = best;
  return r;
}

}  // namespace

TrainResult train(std::span<const Sample> samples, const TrainGrid& grid, const Hyperparams& base,
                  const NadamConfig& nadam, std::uint64_t seed, double train_fraction) {
  if (samples.size() < 2) throw ValidationError("train: dataset is empty");
  if (grid.neurons.empty() || grid.batch_sizes.empty()) throw ValidationError("train: empty candidate grid");
  for (const auto& s : samples) {
    if (static_cast<int>(s.steps.size()) != base.lookback) throw ValidationError("train: sample length != lookback");
  }
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].time_s < samples[b].time_s; });
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(samples.size()))), 1,
      samples.size() - 1);
  std::vector<Sample> train_raw, val_raw;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? train_raw : val_raw).push_back(samples[idx[i]]);
  const Normalization norm = fit_normalization(train_raw);
  const auto train_norm = normalize(train_raw, norm);

  TrainResult out;
  bool have = false;
  std::uint64_t candidate = 0;
  for (const int neurons : grid.neurons) {
    for (const int batch : grid.batch_sizes) {
      Hyperparams hp = base;
      hp.neurons = neurons;
      hp.batch_size = batch;
      LstmModel m(neurons, hp);
      m.norm() = norm;
      m.initialize(derive_seed(seed, 6000 + candidate));
      const auto r = fit_candidate(m, train_norm, val_raw, nadam, derive_seed(seed, 7000 + candidate));
      out.candidates.push_back(r);
      if (!have || r.validation_rmse < out.validation_rmse) {
        out.model = m;
        out.validation_rmse = r.validation_rmse;
        have = true;
      }
      ++candidate;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

double rmse(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) throw ValidationError("rmse: length mismatch");
  if (actual.empty()) throw ValidationError("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) s += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
  return std::sqrt(s / static_cast<double>(actual.size()));
}

int required_samples(double sigma, double tolerance) {
  if (!(tolerance > 0)) throw ValidationError("required_samples: tolerance must be > 0");
  if (sigma < 0) throw ValidationError("required_samples: sigma must be >= 0");
  const double n = std::ceil(std::pow(1.96 * sigma / tolerance, 2) - 1e-9);
  return std::max(1, static_cast<int>(n));
}

}  // namespace cvsig
