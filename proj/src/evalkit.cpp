#include "ceb/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

namespace ceb {

Eigen::VectorXd entropy_of_rows(const Eigen::MatrixXd& log_probs) {
  Eigen::VectorXd h(log_probs.rows());
  for (Eigen::Index i = 0; i < log_probs.rows(); ++i) {
    double s = 0;
    for (Eigen::Index k = 0; k < log_probs.cols(); ++k) {
      const double lp = log_probs(i, k);
      if (std::isfinite(lp)) s -= std::exp(lp) * lp;
    }
    h(i) = s;
  }
  return h;
}

OodScores ood_scores(Model& model, const Eigen::MatrixXd& inputs, bool with_rate) {
  OodScores out;
  out.entropy = entropy_of_rows(model.class_log_probs(inputs));
  if (with_rate) out.rate = model.rate(inputs);
  return out;
}

namespace {

struct Sweep {
  std::vector<long> tp, fp;  // cumulative counts at each distinct threshold, ascending
};

Sweep sweep(std::vector<double> in, std::vector<double> out) {
  std::sort(in.begin(), in.end());
  std::sort(out.begin(), out.end());
  std::vector<double> thresholds(in);
  thresholds.insert(thresholds.end(), out.begin(), out.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  Sweep s;
  std::size_t i = 0, o = 0;
  for (double t : thresholds) {
    while (i < in.size() && in[i] <= t) ++i;
    while (o < out.size() && out[o] <= t) ++o;
    s.tp.push_back(static_cast<long>(i));
    s.fp.push_back(static_cast<long>(o));
  }
  return s;
}

double average_precision(const Sweep& s, long positives) {
  double ap = 0;
  long prev_tp = 0;
  for (std::size_t k = 0; k < s.tp.size(); ++k) {
    const long gained = s.tp[k] - prev_tp;
    if (gained > 0)
      ap += (static_cast<double>(gained) / static_cast<double>(positives)) *
            (static_cast<double>(s.tp[k]) / static_cast<double>(s.tp[k] + s.fp[k]));
    prev_tp = s.tp[k];
  }
  // The summed terms can overshoot 1 by an ulp or two.
  return std::min(ap, 1.0);
}

std::vector<double> oriented(std::span<const double> v, Orientation o) {
  std::vector<double> out(v.begin(), v.end());
  if (o == Orientation::HigherIsIn)
    for (double& x : out) x = -x;
  return out;
}

}  // namespace

DetectionMetrics detection_metrics(std::span<const double> in_scores, std::span<const double> out_scores,
                                   Orientation orientation) {
  if (in_scores.empty() || out_scores.empty()) throw ValidationError("detection_metrics: both score lists must be non-empty");
  for (double v : in_scores)
    if (std::isnan(v)) throw ValidationError("detection_metrics: NaN score");
  for (double v : out_scores)
    if (std::isnan(v)) throw ValidationError("detection_metrics: NaN score");
  std::vector<double> in = oriented(in_scores, orientation);
  std::vector<double> out = oriented(out_scores, orientation);
  const long n_in = static_cast<long>(in.size()), n_out = static_cast<long>(out.size());

  DetectionMetrics m;
  const Sweep s = sweep(in, out);
  for (std::size_t k = 0; k < s.tp.size(); ++k)
    if (static_cast<double>(s.tp[k]) >= 0.95 * static_cast<double>(n_in)) {
      m.fpr_at_95_tpr = 100.0 * static_cast<double>(s.fp[k]) / static_cast<double>(n_out);
      break;
    }
  // Trapezoid rule over the ROC staircase, in integer arithmetic.
  long long area2 = 0;
  long prev_tp = 0, prev_fp = 0;
  for (std::size_t k = 0; k < s.tp.size(); ++k) {
    area2 += static_cast<long long>(s.fp[k] - prev_fp) * (s.tp[k] + prev_tp);
    prev_tp = s.tp[k];
    prev_fp = s.fp[k];
  }
  m.auroc = 100.0 * static_cast<double>(area2) / (2.0 * static_cast<double>(n_in) * static_cast<double>(n_out));
  m.aupr_in = 100.0 * average_precision(s, n_in);

  std::vector<double> neg_in(in), neg_out(out);
  for (double& x : neg_in) x = -x;
  for (double& x : neg_out) x = -x;
  m.aupr_out = 100.0 * average_precision(sweep(neg_out, neg_in), n_out);
  return m;
}

DetectionMetrics detection_metrics(std::span<const ScoredExample> scored, Orientation orientation) {
  std::vector<double> in, out;
  for (const auto& e : scored) (e.in_distribution ? in : out).push_back(e.score);
  return detection_metrics(in, out, orientation);
}

WilsonInterval wilson_interval(long successes, long trials, double z) {
  if (trials <= 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

bool CalibrationCurve::all_bins_cover() const {
  return std::all_of(bins.begin(), bins.end(), [](const CalibrationBin& b) { return b.covers_diagonal(); });
}

CalibrationCurve calibration_curve(std::span<const double> confidences, const std::vector<bool>& correct) {
  if (confidences.size() != correct.size()) throw ValidationError("calibration_curve: arrays must be aligned");
  CalibrationCurve curve;
  curve.bins.resize(kCalibrationBins);
  std::vector<double> conf_sum(kCalibrationBins, 0.0);
  std::vector<long> hits(kCalibrationBins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("calibration_curve: confidence outside [0, 1]");
    const int b = std::min(kCalibrationBins - 1, static_cast<int>(std::floor(c * kCalibrationBins)));
    curve.bins[b].count += 1;
    conf_sum[b] += c;
    hits[b] += correct[i] ? 1 : 0;
  }
  curve.total = static_cast<long>(confidences.size());
  for (int b = 0; b < kCalibrationBins; ++b) {
    CalibrationBin& bin = curve.bins[b];
    bin.lo = static_cast<double>(b) / kCalibrationBins;
    bin.hi = static_cast<double>(b + 1) / kCalibrationBins;
    if (bin.count == 0) continue;
    bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
    bin.accuracy = static_cast<double>(hits[b]) / static_cast<double>(bin.count);
    const WilsonInterval w = wilson_interval(hits[b], bin.count);
    bin.interval_lo = w.lo;
    bin.interval_hi = w.hi;
    curve.ece += static_cast<double>(bin.count) / static_cast<double>(curve.total) *
                 std::abs(bin.accuracy - bin.mean_confidence);
  }
  return curve;
}

CalibrationCurve calibration_curve(Model& model, const Dataset& data) {
  const Eigen::MatrixXd lp = model.class_log_probs(data.inputs);
  std::vector<double> conf(static_cast<std::size_t>(lp.rows()));
  std::vector<bool> correct(conf.size());
  for (Eigen::Index i = 0; i < lp.rows(); ++i) {
    Eigen::Index arg = 0;
    const double best = lp.row(i).maxCoeff(&arg);
    conf[static_cast<std::size_t>(i)] = std::min(1.0, std::exp(best));
    correct[static_cast<std::size_t>(i)] = arg == data.labels[static_cast<std::size_t>(i)];
  }
  return calibration_curve(conf, correct);
}

void MixtureSpec::validate() const {
  if (classes < 2) throw ValidationError("mixture: need at least two classes");
  if (per_class < 1) throw ValidationError("mixture: per_class must be positive");
  if (dim < 1) throw ValidationError("mixture: dim must be positive");
  if (!(separation > 0) || !std::isfinite(separation)) throw ValidationError("mixture: separation must be positive");
  if (!(label_noise >= 0 && label_noise <= 1)) throw ValidationError("mixture: label noise must lie in [0, 1]");
}

nlohmann::json MixtureSpec::to_json() const {
  return {{"type", "gaussian_mixture"}, {"classes", classes},         {"per_class", per_class},
          {"dim", dim},                 {"separation", separation}, {"label_noise", label_noise},
          {"mean_seed", mean_seed}};
}

MixtureSpec MixtureSpec::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"type", "classes", "per_class", "dim", "separation", "label_noise", "mean_seed"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("mixture spec: unknown key '" + key + "'");
  MixtureSpec s;
  try {
    s.classes = j.value("classes", s.classes);
    s.per_class = j.value("per_class", s.per_class);
    s.dim = j.value("dim", s.dim);
    s.separation = j.value("separation", s.separation);
    s.label_noise = j.value("label_noise", s.label_noise);
    s.mean_seed = j.value("mean_seed", s.mean_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("mixture spec: ") + e.what());
  }
  s.validate();
  return s;
}

Dataset gaussian_mixture_dataset(const MixtureSpec& spec, std::uint64_t seed) {
  spec.validate();
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(spec.classes, spec.dim);
  if (spec.dim >= spec.classes) {
    for (int c = 0; c < spec.classes; ++c) means(c, c) = spec.separation;
  } else {
    std::mt19937_64 mrng(spec.mean_seed);
    for (int c = 0; c < spec.classes; ++c) {
      Eigen::RowVectorXd v = nn::standard_normal(1, spec.dim, mrng);
      means.row(c) = spec.separation * v / v.norm();
    }
  }
  std::mt19937_64 rng(seed);
  const Eigen::Index n = static_cast<Eigen::Index>(spec.classes) * spec.per_class;
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i / spec.per_class);
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset d;
  const double bound = spec.domain_bound();
  d.inputs = nn::standard_normal(n, spec.dim, rng);
  for (Eigen::Index i = 0; i < n; ++i) d.inputs.row(i) += means.row(labels[static_cast<std::size_t>(i)]);
  d.inputs = d.inputs.cwiseMax(-bound).cwiseMin(bound);
  if (spec.label_noise > 0) {
    std::bernoulli_distribution flip(spec.label_noise);
    std::uniform_int_distribution<int> other(1, spec.classes - 1);
    for (int& y : labels)
      if (flip(rng)) y = (y + other(rng)) % spec.classes;
  }
  d.labels = std::move(labels);
  d.classes = spec.classes;
  d.domain_lo = -bound;
  d.domain_hi = bound;
  d.deterministic = spec.label_noise == 0.0;
  d.generator = spec.to_json();
  d.generator["seed"] = seed;
  return d;
}

Dataset random_label_dataset(const Eigen::MatrixXd& inputs, int classes, std::uint64_t seed, double domain_lo,
                             double domain_hi) {
  if (classes < 2) throw ValidationError("random_label_dataset: need at least two classes");
  std::vector<int> labels(static_cast<std::size_t>(inputs.rows()));
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  Dataset d;
  d.inputs = inputs;
  d.labels = std::move(labels);
  d.classes = classes;
  d.domain_lo = domain_lo;
  d.domain_hi = domain_hi;
  d.deterministic = false;
  d.generator = {{"type", "random_labels"}, {"classes", classes}, {"count", inputs.rows()}, {"seed", seed}};
  return d;
}

Dataset uniform_noise_dataset(Eigen::Index n, int dim, double lo, double hi, std::uint64_t seed) {
  if (!(hi > lo)) throw ValidationError("uniform_noise_dataset: empty domain");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(lo, hi);
  Dataset d;
  d.inputs.resize(n, dim);
  for (Eigen::Index i = 0; i < d.inputs.size(); ++i) d.inputs(i) = unif(rng);
  d.labels.assign(static_cast<std::size_t>(n), 0);
  d.classes = 1;
  d.domain_lo = lo;
  d.domain_hi = hi;
  d.generator = {{"type", "uniform_noise"}, {"count", n}, {"dim", dim}, {"seed", seed}};
  return d;
}

Dataset dataset_from_json(const nlohmann::json& spec, std::uint64_t seed) {
  const std::string type = spec.value("type", std::string("gaussian_mixture"));
  if (type == "gaussian_mixture") return gaussian_mixture_dataset(MixtureSpec::from_json(spec), seed);
  if (type == "random_labels") {
    for (const auto& [key, _] : spec.items())
      if (key != "type" && key != "classes" && key != "count" && key != "dim")
        throw ValidationError("random_labels spec: unknown key '" + key + "'");
    const int classes = spec.value("classes", 10);
    const int count = spec.value("count", 256);
    const int dim = spec.value("dim", 16);
    if (count < 1 || dim < 1) throw ValidationError("random_labels spec: count and dim must be positive");
    Dataset base = uniform_noise_dataset(count, dim, 0.0, 1.0, seed);
    Dataset d = random_label_dataset(base.inputs, classes, seed ^ 0x5bd1e995ULL, 0.0, 1.0);
    d.generator["dim"] = dim;
    return d;
  }
  throw ValidationError("unknown dataset type '" + type + "'");
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  for (int k = 0; k < data.dim(); ++k) out << 'x' << k << ',';
  out << "label\n";
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (int k = 0; k < data.dim(); ++k) out << data.inputs(i, k) << ',';
    out << data.labels[static_cast<std::size_t>(i)] << '\n';
  }
  out.precision(old);
}

void write_scores_csv(std::ostream& out, std::span<const ScoredExample> scored, Orientation orientation) {
  out << "# orientation=" << (orientation == Orientation::LowerIsIn ? "lower_is_in" : "higher_is_in") << '\n';
  out << "score,in_distribution\n";
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : scored) out << e.score << ',' << (e.in_distribution ? 1 : 0) << '\n';
  out.precision(old);
}

nlohmann::json detection_to_json(const DetectionMetrics& m) {
  return {{"fpr_at_95_tpr", m.fpr_at_95_tpr}, {"auroc", m.auroc}, {"aupr_in", m.aupr_in}, {"aupr_out", m.aupr_out}};
}

nlohmann::json calibration_to_json(const CalibrationCurve& c) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : c.bins)
    bins.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"count", b.count},
                    {"mean_confidence", b.mean_confidence},
                    {"accuracy", b.accuracy},
                    {"interval", {b.interval_lo, b.interval_hi}}});
  return {{"ece", c.ece}, {"total", c.total}, {"bins", bins}};
}

}  // namespace ceb
