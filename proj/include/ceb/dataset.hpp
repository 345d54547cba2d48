#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace ceb {

/// Labelled inputs on a box domain [domain_lo, domain_hi]^d.
struct Dataset {
  Eigen::MatrixXd inputs;  // one row per example
  std::vector<int> labels;
  int classes = 0;
  double domain_lo = 0.0;
  double domain_hi = 1.0;
  bool deterministic = false;  // each input maps to exactly one label
  nlohmann::json generator;    // generator settings that produced it

  Eigen::Index size() const { return inputs.rows(); }
  int dim() const { return static_cast<int>(inputs.cols()); }
  Dataset subset(const std::vector<int>& rows) const;
  /// Empirical log p(y).
  Eigen::VectorXd log_label_prior() const;
};

}  // namespace ceb
