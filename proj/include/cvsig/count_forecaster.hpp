#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cvsig/corridor.hpp"
#include "cvsig/cv_sensing.hpp"
#include "json.hpp"

namespace cvsig {

/// Upstream signal phase as a categorical feature; None when the segment has
/// no upstream signal.
enum class PhaseFeature { None, Green, Yellow, Red };

inline constexpr int kFeatureCount = 11;
using EncodedFeatures = std::array<double, kFeatureCount>;

/// CV-only summary of one segment during one second.
struct FeatureVector {
  double time_s = 0.0;
  double cv_gap_m = 0.0;      // mean distance between consecutive CVs
  double cv_speed_mph = 0.0;
  double cv_wait_s = 0.0;     // mean accumulated stopped time on this segment
  int num_cvs = 0;
  PhaseFeature phase = PhaseFeature::None;
  Direction direction = Direction::MajorEast;

  /// 4 numeric values, phase one-hot (4), direction one-hot (3).
  EncodedFeatures encode() const;
};

PhaseFeature to_phase_feature(Indication ind);
/// Most frequent phase in the window; ties go to the most recent of the tied phases.
PhaseFeature majority_phase(std::span<const PhaseFeature> window);

/// Streams per-second BSM snapshots of one segment into feature vectors. The
/// waiting time of a CV accumulates over the seconds it was seen below the
/// stop speed on this segment.
class FeatureBuilder {
 public:
  FeatureBuilder(Direction direction, int phase_window_s = 5, double stop_speed_mph = 5.0);

  /// `segment_bsms` are the BSMs of this segment at `time_s`; `upstream` is
  /// the upstream signal indication for this direction, if any.
  FeatureVector push(double time_s, std::span<const Bsm> segment_bsms, std::optional<Indication> upstream);

 private:
  Direction direction_;
  int phase_window_s_;
  double stop_speed_mph_;
  std::vector<PhaseFeature> phases_;
  std::map<long, double> waited_;
  double last_time_s_ = -1.0;
};

/// Batch form: `bsms` may hold any segments and times; one vector per second
/// in [t_begin, t_end). `phase_log[k]` is the upstream indication at second
/// t_begin + k (empty when there is no upstream signal).
std::vector<FeatureVector> build_features(std::span<const Bsm> bsms, std::span<const Indication> phase_log,
                                          int segment, Direction direction, int t_begin, int t_end,
                                          int phase_window_s = 5);

// ---------------------------------------------------------------------------
// Datasets

/// One labelled second of one segment. The label is the true number of
/// vehicles on the segment one second later.
struct DatasetRow {
  double time_s = 0.0;
  std::string segment;
  FeatureVector features;
  double label = 0.0;
};

void write_dataset_csv(std::ostream& out, std::span<const DatasetRow> rows);
std::vector<DatasetRow> read_dataset_csv(std::istream& in);

struct Sample {
  std::vector<EncodedFeatures> steps;  // oldest first
  double label = 0.0;
  double time_s = 0.0;                 // time of the last step
  int num_cvs_last = 0;
};

/// Sliding windows of `lookback` consecutive seconds per segment, sampled every
/// `stride` seconds. Rows of one segment must be contiguous seconds.
std::vector<Sample> make_samples(std::span<const DatasetRow> rows, int lookback, int stride = 1);

// ---------------------------------------------------------------------------
// Model

struct NadamConfig {
  double learning_rate = 0.001;
  double schedule_decay = 0.004;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Nadam with the momentum schedule mu_t = beta1 (1 - 0.5 * 0.96^(t * decay)).
class Nadam {
 public:
  Nadam(std::size_t size, NadamConfig config);
  void step(std::span<double> params, std::span<const double> grad);
  long iterations() const { return t_; }

 private:
  NadamConfig c_;
  std::vector<double> m_, v_;
  double m_schedule_ = 1.0;
  long t_ = 0;
};

struct Hyperparams {
  int neurons = 10;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  int lookback = 10;
};

/// Z-score statistics frozen at training time. Identity by default.
struct Normalization {
  EncodedFeatures mean{};
  EncodedFeatures stdev = [] {
    EncodedFeatures s;
    s.fill(1.0);
    return s;
  }();
  double label_mean = 0.0;
  double label_std = 1.0;
};

/// Single-layer LSTM with a linear read-out of the last hidden state. All
/// parameters live in one flat vector: W (4H x (I + H)), b (4H), w_out (H), b_out.
/// Gate order is input, forget, cell, output.
class LstmModel {
 public:
  LstmModel() = default;
  LstmModel(int hidden, Hyperparams hyper);

  int inputs() const { return kFeatureCount; }
  int hidden() const { return hidden_; }
  int lookback() const { return hyper_.lookback; }
  const Hyperparams& hyper() const { return hyper_; }
  Normalization& norm() { return norm_; }
  const Normalization& norm() const { return norm_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  double& output_bias() { return params_.back(); }

  /// Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget bias 1, zero read-out bias.
  void initialize(std::uint64_t seed);

  /// Raw network output for an already normalized sequence.
  double forward_normalized(std::span<const EncodedFeatures> steps) const;
  /// Predicted count (de-normalized, clamped at 0). Throws ValidationError
  /// unless the sequence length equals the lookback.
  double predict(std::span<const EncodedFeatures> steps) const;
  double predict(std::span<const FeatureVector> steps) const;

  nlohmann::json to_json() const;
  static LstmModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& file) const;
  static LstmModel load(const std::filesystem::path& file);

 private:
  int hidden_ = 0;
  Hyperparams hyper_{};
  Normalization norm_{};
  std::vector<double> params_;
};

/// Mean squared error over normalized samples and its gradient with respect to
/// every parameter (`grad` is overwritten). `indices` selects the batch.
/// The OpenMP version computes per-sample gradients in parallel and sums them
/// in index order, so it matches the serial reference bit for bit.
double loss_and_gradient(const LstmModel& model, std::span<const Sample> normalized,
                         std::span<const std::size_t> indices, std::span<double> grad);
double loss_and_gradient_serial(const LstmModel& model, std::span<const Sample> normalized,
                                std::span<const std::size_t> indices, std::span<double> grad);

Normalization fit_normalization(std::span<const Sample> samples);
std::vector<Sample> normalize(std::span<const Sample> samples, const Normalization& norm);

struct CandidateResult {
  int neurons = 0;
  int batch_size = 0;
  int epochs_run = 0;
  double validation_rmse = 0.0;
};

struct TrainResult {
  LstmModel model;
  double validation_rmse = 0.0;
  std::vector<CandidateResult> candidates;
};

struct TrainGrid {
  std::vector<int> neurons{10, 20, 50};
  std::vector<int> batch_sizes{32, 64};
};

/// Chronological 70/30 split, z-scores from the training part, early stopping
/// on validation RMSE. Returns the candidate with the lowest validation RMSE
/// (ties keep the earlier grid entry). Throws ValidationError on an empty set.
TrainResult train(std::span<const Sample> samples, const TrainGrid& grid, const Hyperparams& base,
                  const NadamConfig& nadam, std::uint64_t seed, double train_fraction = 0.7);

/// Predictions for raw (unnormalized) samples.
std::vector<double> predict_all(const LstmModel& model, std::span<const Sample> samples);

// ---------------------------------------------------------------------------
// Statistics

/// sqrt(mean((a - p)^2)). Throws ValidationError on mismatched or empty input.
double rmse(std::span<const double> actual, std::span<const double> predicted);

/// ceil((1.96 sigma / tolerance)^2), at least 1. Throws ValidationError when
/// tolerance <= 0 or sigma < 0.
int required_samples(double sigma, double tolerance);

}  // namespace cvsig
