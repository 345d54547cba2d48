#include "ceb/dataset.hpp"

#include <cmath>

#include "ceb/error.hpp"

namespace ceb {

Dataset Dataset::subset(const std::vector<int>& rows) const {
  Dataset out;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= size()) throw ValidationError("Dataset::subset: row index out of range");
    out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(rows[i]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[i])]);
  }
  out.classes = classes;
  out.domain_lo = domain_lo;
  out.domain_hi = domain_hi;
  out.deterministic = deterministic;
  out.generator = generator;
  return out;
}

Eigen::VectorXd Dataset::log_label_prior() const {
  if (classes < 1 || labels.empty()) throw ValidationError("Dataset::log_label_prior: no labels");
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(classes);
  for (int y : labels) {
    if (y < 0 || y >= classes) throw ValidationError("Dataset::log_label_prior: label out of range");
    counts(y) += 1.0;
  }
  // Unseen classes get a tiny floor so the consistent classifier stays finite.
  counts = counts.cwiseMax(1e-12);
  return (counts / counts.sum()).array().log().matrix();
}

}  // namespace ceb
