#pragma once

// Out-of-distribution scoring, detection metrics, calibration and synthetic
// dataset generators.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ceb/dataset.hpp"
#include "ceb/model.hpp"

namespace ceb {

// ---- OoD scores -------------------------------------------------------------

/// Which end of a score axis is in-distribution. Stored with every score list.
enum class Orientation { LowerIsIn, HigherIsIn };

struct OodScores {
  Eigen::VectorXd entropy;              // H of the classifier, nats
  std::optional<Eigen::VectorXd> rate;  // R, stochastic models only
  Orientation orientation = Orientation::LowerIsIn;
};

/// Throws CapabilityError when `with_rate` is set for a deterministic model.
OodScores ood_scores(Model& model, const Eigen::MatrixXd& inputs, bool with_rate);
/// Entropy of each row of a matrix of log-probabilities.
Eigen::VectorXd entropy_of_rows(const Eigen::MatrixXd& log_probs);

struct ScoredExample {
  double score = 0;
  bool in_distribution = false;
};

/// Percentages in [0, 100]. In-distribution is the positive class.
struct DetectionMetrics {
  double fpr_at_95_tpr = 0;
  double auroc = 0;
  double aupr_in = 0;
  double aupr_out = 0;
};

/// Exact threshold sweep: an example is called in-distribution when its
/// (oriented) score is <= the threshold. FPR@95TPR uses the smallest threshold
/// whose TPR reaches 0.95; AUROC counts ties as one half; AUPR is the
/// step-wise average precision.
DetectionMetrics detection_metrics(std::span<const double> in_scores, std::span<const double> out_scores,
                                   Orientation orientation = Orientation::LowerIsIn);
DetectionMetrics detection_metrics(std::span<const ScoredExample> scored, Orientation orientation = Orientation::LowerIsIn);

// ---- calibration ------------------------------------------------------------

inline constexpr int kCalibrationBins = 20;
inline constexpr double kWilsonZ90 = 1.6448536269514722;

struct CalibrationBin {
  double lo = 0, hi = 0;  // [lo, hi); the last bin also holds 1.0
  long count = 0;
  double mean_confidence = 0;
  double accuracy = 0;
  double interval_lo = 0, interval_hi = 1;  // 90% Wilson interval of accuracy

  /// Empty bins count as covering.
  bool covers_diagonal() const { return count == 0 || (mean_confidence >= interval_lo && mean_confidence <= interval_hi); }
};

struct CalibrationCurve {
  std::vector<CalibrationBin> bins;
  double ece = 0;
  long total = 0;

  bool all_bins_cover() const;
};

struct WilsonInterval {
  double lo, hi;
};
WilsonInterval wilson_interval(long successes, long trials, double z = kWilsonZ90);

CalibrationCurve calibration_curve(std::span<const double> confidences, const std::vector<bool>& correct);
/// Max-probability confidence of the model on a labelled dataset.
CalibrationCurve calibration_curve(Model& model, const Dataset& data);

// ---- datasets -----------------------------------------------------------------

struct MixtureSpec {
  int classes = 10;
  int per_class = 500;
  int dim = 16;
  double separation = 4.5;
  double label_noise = 0.0;
  std::uint64_t mean_seed = 0;  // only used when dim < classes

  void validate() const;
  double domain_bound() const { return separation + 4.0; }
  nlohmann::json to_json() const;
  static MixtureSpec from_json(const nlohmann::json& j);
};

/// Class c centred at separation * e_c (or a seeded random direction when
/// dim < classes), unit-variance noise, exactly per_class examples per class,
/// clipped to [-B, B] with B = separation + 4. With label_noise p, each label
/// is replaced by a uniformly drawn different class with probability p.
Dataset gaussian_mixture_dataset(const MixtureSpec& spec, std::uint64_t seed);

/// Balanced labels (i mod C) in a seed-fixed random order; independent of the
/// inputs by construction.
Dataset random_label_dataset(const Eigen::MatrixXd& inputs, int classes, std::uint64_t seed, double domain_lo = 0.0,
                             double domain_hi = 1.0);

/// Uniform inputs on the box; labels are all zero.
Dataset uniform_noise_dataset(Eigen::Index n, int dim, double lo, double hi, std::uint64_t seed);

/// {"type": "gaussian_mixture", ...MixtureSpec} or
/// {"type": "random_labels", "classes": C, "count": n, "dim": d} (uniform
/// inputs on [0, 1]^d).
Dataset dataset_from_json(const nlohmann::json& spec, std::uint64_t seed);

void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_scores_csv(std::ostream& out, std::span<const ScoredExample> scored, Orientation orientation);
nlohmann::json detection_to_json(const DetectionMetrics& m);
nlohmann::json calibration_to_json(const CalibrationCurve& c);

}  // namespace ceb
