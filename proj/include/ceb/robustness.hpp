#pragma once

// Projected gradient descent attacks and robustness metrics.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ceb/model.hpp"

namespace ceb {

enum class Norm { L2, Linf };

Norm parse_norm(const std::string& s);
std::string norm_name(Norm n);

struct AttackSpec {
  Norm norm = Norm::Linf;
  double epsilon = 0.0;
  std::optional<double> step_size;  // default epsilon * 2.5 / steps
  int steps = 7;
  std::optional<int> target;
  std::uint64_t seed = 0;
  bool random_start = false;

  double effective_step_size() const;
  void validate(int classes) const;
};

/// Differentiable class scores of a classifier; `noise` selects a sampled
/// forward pass (nullptr means deterministic).
using ScoreFunction = std::function<ad::Var(ad::Graph&, ad::Var, std::mt19937_64*)>;

ScoreFunction score_function(Model& model);

struct AttackResult {
  Eigen::MatrixXd x_adv;
  bool zero_gradient = false;  // the loss gradient vanished everywhere; x_adv == x
};

/// Untargeted: ascend the cross-entropy of the true label. Targeted: descend
/// the cross-entropy of the target class. Each step draws fresh encoder noise
/// when `stochastic` is set.
AttackResult pgd_attack(const ScoreFunction& scores, const Eigen::MatrixXd& x, const std::vector<int>& y_true,
                        const AttackSpec& spec, double domain_lo, double domain_hi, bool stochastic);
AttackResult pgd_attack(Model& model, const Eigen::MatrixXd& x, const std::vector<int>& y_true, const AttackSpec& spec);

/// #{clean correct, adversarial == target, label != target} / #{clean correct,
/// label != target}; absent when the denominator is zero.
std::optional<double> targeted_success_rate(const std::vector<int>& clean_pred, const std::vector<int>& adv_pred,
                                            const std::vector<int>& y_true, int target);
std::optional<double> targeted_success_rate(Model& model, const Eigen::MatrixXd& x_clean, const Eigen::MatrixXd& x_adv,
                                            const std::vector<int>& y_true, int target);

double accuracy_under_attack(Model& model, const Dataset& data, const AttackSpec& spec);
/// Adversarial examples crafted on `source`, scored on `target`.
double transfer_attack(Model& source, Model& target, const Dataset& data, const AttackSpec& spec);

struct AttackCurvePoint {
  double epsilon = 0;
  double accuracy = 0;
  std::optional<double> targeted_success;
  bool zero_gradient = false;
};

/// One attack per epsilon; `base` supplies everything but epsilon and step size.
std::vector<AttackCurvePoint> attack_curve(Model& model, const Dataset& data, const AttackSpec& base,
                                           const std::vector<double>& epsilons);
void write_attack_curve_csv(std::ostream& out, const std::vector<AttackCurvePoint>& curve);

/// Parses "a:b:n" into n evenly spaced values from a to b inclusive.
std::vector<double> parse_grid(const std::string& text);

}  // namespace ceb
