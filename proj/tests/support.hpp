#pragma once

// Helpers shared by the unit and acceptance suites. Nothing here calls into
// the code under test beyond building models and evaluating their losses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ceb/model.hpp"

namespace ceb::testing {

inline constexpr double kFdStep = 1e-5;
// Relative error denominator floor; central differences at h = 1e-5 carry
// roughly 1e-10 of absolute rounding noise on O(1) losses.
inline constexpr double kRelFloor = 1e-3;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

inline double log_normal(double z, double mean, double log_var) {
  return -0.5 * (std::log(2.0 * M_PI) + log_var + (z - mean) * (z - mean) / std::exp(log_var));
}

/// Three well separated 2-D blobs with `per_class` points each.
inline obj::Batch separable_toy(int per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  const double centers[3][2] = {{-2.0, 0.0}, {2.0, 0.0}, {0.0, 2.5}};
  obj::Batch b;
  b.classes = 3;
  b.x.resize(3 * per_class, 2);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < per_class; ++i) {
      const int row = c * per_class + i;
      b.x(row, 0) = centers[c][0] + noise(rng);
      b.x(row, 1) = centers[c][1] + noise(rng);
      b.y.push_back(c);
    }
  return b;
}

/// A small random configuration of the given objective kind.
inline ModelConfig small_config(obj::Kind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelConfig cfg;
  cfg.objective.kind = kind;
  cfg.objective.rho = std::uniform_real_distribution<double>(-1.0, 2.0)(rng);
  cfg.objective.noise_lambda = 0.2;
  cfg.input_dim = 2;
  cfg.classes = 3;
  cfg.latent_dim = 2;
  cfg.encoder_hidden = {4};
  cfg.classifier_hidden = {3};
  cfg.mixture_components = 2;
  cfg.hier_layers = 2;
  cfg.domain_lo = -4.0;
  cfg.domain_hi = 4.0;
  if (seed % 3 == 1 && kind != obj::Kind::Determ) cfg.covariance = nn::Covariance::Full;
  return cfg;
}

/// Largest relative error between backprop and central differences over all
/// objective parameters of a freshly initialized model. The reparameterization
/// and input noise are replayed from `noise_seed` on every evaluation.
inline double model_gradient_error(const ModelConfig& cfg, std::uint64_t seed) {
  Model model(cfg, seed);
  obj::Batch batch = separable_toy(2, seed + 1000);
  const std::uint64_t noise_seed = seed * 7 + 3;
  auto evaluate = [&] {
    ad::Graph g;
    std::mt19937_64 rng(noise_seed);
    return model.loss(g, batch, rng).loss.scalar();
  };
  auto params = model.objective_parameters();
  for (auto* p : params) p->zero_grad();
  {
    ad::Graph g;
    std::mt19937_64 rng(noise_seed);
    g.backward(model.loss(g, batch, rng).loss);
  }
  double worst = 0;
  for (auto* p : params) {
    const ad::Matrix analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value(i);
      p->value(i) = keep + kFdStep;
      const double up = evaluate();
      p->value(i) = keep - kFdStep;
      const double down = evaluate();
      p->value(i) = keep;
      worst = std::max(worst, relative_error(analytic(i), (up - down) / (2 * kFdStep)));
    }
  }
  return worst;
}

struct DetectionOracle {
  double fpr_at_95_tpr = 0, auroc = 0, aupr_in = 0, aupr_out = 0;
};

/// Brute-force threshold enumeration with lower scores called in. Every
/// candidate threshold (each observed score, ascending) is counted from
/// scratch; AUROC comes from pairwise comparisons instead of the ROC curve.
inline DetectionOracle detection_oracle(const std::vector<double>& in, const std::vector<double>& out) {
  auto average_precision = [](const std::vector<double>& pos, const std::vector<double>& neg) {
    std::vector<double> candidates(pos);
    candidates.insert(candidates.end(), neg.begin(), neg.end());
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    double ap = 0;
    long prev = 0;
    for (double t : candidates) {
      long tp = 0, fp = 0;
      for (double v : pos) tp += v <= t;
      for (double v : neg) fp += v <= t;
      if (tp > prev)
        ap += (static_cast<double>(tp - prev) / static_cast<double>(pos.size())) *
              (static_cast<double>(tp) / static_cast<double>(tp + fp));
      prev = tp;
    }
    // Average precision is at most 1; the float sum can overshoot by an ulp.
    return 100.0 * std::min(ap, 1.0);
  };

  DetectionOracle o;
  std::vector<double> candidates(in);
  candidates.insert(candidates.end(), out.begin(), out.end());
  std::sort(candidates.begin(), candidates.end());
  for (double t : candidates) {
    long tp = 0, fp = 0;
    for (double v : in) tp += v <= t;
    for (double v : out) fp += v <= t;
    if (static_cast<double>(tp) >= 0.95 * static_cast<double>(in.size())) {
      o.fpr_at_95_tpr = 100.0 * static_cast<double>(fp) / static_cast<double>(out.size());
      break;
    }
  }
  long long twice_wins = 0;
  for (double a : in)
    for (double b : out) twice_wins += a < b ? 2 : (a == b ? 1 : 0);
  o.auroc = 100.0 * static_cast<double>(twice_wins) /
            (2.0 * static_cast<double>(in.size()) * static_cast<double>(out.size()));
  o.aupr_in = average_precision(in, out);
  std::vector<double> neg_in(in), neg_out(out);
  for (double& v : neg_in) v = -v;
  for (double& v : neg_out) v = -v;
  o.aupr_out = average_precision(neg_out, neg_in);
  return o;
}

/// Random score lists with deliberate ties (scores on a coarse grid).
inline std::pair<std::vector<double>, std::vector<double>> random_score_lists(std::mt19937_64& rng, int max_len) {
  std::uniform_int_distribution<int> len(1, max_len / 2);
  std::uniform_int_distribution<int> grid(0, 40);
  std::normal_distribution<double> shift(0.0, 5.0);
  const double offset = shift(rng);
  std::vector<double> in(static_cast<std::size_t>(len(rng))), out(static_cast<std::size_t>(len(rng)));
  for (double& v : in) v = 0.25 * grid(rng);
  for (double& v : out) v = 0.25 * grid(rng) + offset;
  return {in, out};
}

}  // namespace ceb::testing
