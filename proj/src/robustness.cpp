#include "ceb/robustness.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace ceb {

Norm parse_norm(const std::string& s) {
  if (s == "l2" || s == "L2") return Norm::L2;
  if (s == "linf" || s == "Linf" || s == "inf") return Norm::Linf;
  throw ValidationError("unknown norm '" + s + "'");
}

std::string norm_name(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

double AttackSpec::effective_step_size() const { return step_size.value_or(epsilon * 2.5 / steps); }

void AttackSpec::validate(int classes) const {
  if (!std::isfinite(epsilon) || epsilon < 0) throw ValidationError("attack: epsilon must be finite and non-negative");
  if (steps < 1) throw ValidationError("attack: steps must be at least 1");
  if (step_size && (!std::isfinite(*step_size) || *step_size <= 0))
    throw ValidationError("attack: step size must be finite and positive");
  if (target && (*target < 0 || *target >= classes)) throw ValidationError("attack: target class out of range");
}

ScoreFunction score_function(Model& model) {
  return [&model](ad::Graph& g, ad::Var x, std::mt19937_64* noise) { return model.class_scores(g, x, noise); };
}

namespace {

void project(Eigen::MatrixXd& x, const Eigen::MatrixXd& origin, Norm norm, double eps, double lo, double hi) {
  if (norm == Norm::Linf) {
    x = x.cwiseMax((origin.array() - eps).matrix()).cwiseMin((origin.array() + eps).matrix());
  } else {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double len = (x.row(i) - origin.row(i)).norm();
      if (len > eps) x.row(i) = origin.row(i) + (x.row(i) - origin.row(i)) * (eps / len);
    }
  }
  // Clipping to the domain only moves coordinates toward the (in-domain)
  // origin, so the norm constraint survives it.
  x = x.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace

AttackResult pgd_attack(const ScoreFunction& scores, const Eigen::MatrixXd& x, const std::vector<int>& y_true,
                        const AttackSpec& spec, double domain_lo, double domain_hi, bool stochastic) {
  if (static_cast<Eigen::Index>(y_true.size()) != x.rows()) throw ValidationError("pgd_attack: label count mismatch");
  if (!(domain_hi > domain_lo)) throw ValidationError("pgd_attack: empty domain");
  spec.validate(std::numeric_limits<int>::max());  // the class count is only known after a forward pass
  if (spec.epsilon == 0.0 || x.rows() == 0) return {x, false};
  std::mt19937_64 rng(spec.seed);
  const double step = spec.effective_step_size();
  Eigen::MatrixXd cur = x;
  if (spec.random_start) {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (Eigen::Index i = 0; i < cur.size(); ++i) cur(i) += spec.epsilon * unif(rng);
    project(cur, x, spec.norm, spec.epsilon, domain_lo, domain_hi);
  }
  const std::vector<int> aim = spec.target ? std::vector<int>(y_true.size(), *spec.target) : y_true;
  for (int s = 0; s < spec.steps; ++s) {
    ad::Graph g;
    ad::Var input = g.input(cur);
    ad::Var out = scores(g, input, stochastic ? &rng : nullptr);
    if (s == 0) spec.validate(static_cast<int>(out.cols()));
    ad::Var log_p = ad::sum(ad::pick(ad::log_softmax_rows(out), aim));
    g.backward(log_p);
    // Untargeted ascends -log p(y); targeted ascends log p(target).
    Eigen::MatrixXd dir = spec.target ? g.grad(input) : Eigen::MatrixXd(-g.grad(input));
    if (!dir.allFinite()) throw NumericalError("pgd_attack: non-finite input gradient");
    if ((dir.array() == 0.0).all()) {
      if (s == 0) return {x, true};
      break;
    }
    if (spec.norm == Norm::Linf) {
      cur += step * dir.array().sign().matrix();
    } else {
      for (Eigen::Index i = 0; i < cur.rows(); ++i) {
        const double len = dir.row(i).norm();
        if (len > 0) cur.row(i) += (step / len) * dir.row(i);
      }
    }
    project(cur, x, spec.norm, spec.epsilon, domain_lo, domain_hi);
  }
  return {cur, false};
}

AttackResult pgd_attack(Model& model, const Eigen::MatrixXd& x, const std::vector<int>& y_true, const AttackSpec& spec) {
  return pgd_attack(score_function(model), x, y_true, spec, model.config().domain_lo, model.config().domain_hi,
                    model.stochastic());
}

std::optional<double> targeted_success_rate(const std::vector<int>& clean_pred, const std::vector<int>& adv_pred,
                                            const std::vector<int>& y_true, int target) {
  if (clean_pred.size() != y_true.size() || adv_pred.size() != y_true.size())
    throw ValidationError("targeted_success_rate: arrays must be aligned");
  std::size_t hits = 0, denom = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] == target || clean_pred[i] != y_true[i]) continue;
    ++denom;
    hits += adv_pred[i] == target;
  }
  if (denom == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(denom);
}

std::optional<double> targeted_success_rate(Model& model, const Eigen::MatrixXd& x_clean, const Eigen::MatrixXd& x_adv,
                                            const std::vector<int>& y_true, int target) {
  return targeted_success_rate(model.predict(x_clean), model.predict(x_adv), y_true, target);
}

namespace {

double accuracy_on(Model& model, const Eigen::MatrixXd& x, const std::vector<int>& y) {
  if (y.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto pred = model.predict(x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

}  // namespace

double accuracy_under_attack(Model& model, const Dataset& data, const AttackSpec& spec) {
  return accuracy_on(model, pgd_attack(model, data.inputs, data.labels, spec).x_adv, data.labels);
}

double transfer_attack(Model& source, Model& target, const Dataset& data, const AttackSpec& spec) {
  if (source.config().input_dim != target.config().input_dim)
    throw ValidationError("transfer_attack: models do not share an input space");
  return accuracy_on(target, pgd_attack(source, data.inputs, data.labels, spec).x_adv, data.labels);
}

std::vector<AttackCurvePoint> attack_curve(Model& model, const Dataset& data, const AttackSpec& base,
                                           const std::vector<double>& epsilons) {
  std::vector<AttackCurvePoint> out;
  const auto clean = model.predict(data.inputs);
  for (double eps : epsilons) {
    AttackSpec spec = base;
    spec.epsilon = eps;
    AttackResult res = pgd_attack(model, data.inputs, data.labels, spec);
    const auto adv = model.predict(res.x_adv);
    AttackCurvePoint p;
    p.epsilon = eps;
    p.zero_gradient = res.zero_gradient;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < adv.size(); ++i) correct += adv[i] == data.labels[i];
    p.accuracy = adv.empty() ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(correct) / static_cast<double>(adv.size());
    if (spec.target) p.targeted_success = targeted_success_rate(clean, adv, data.labels, *spec.target);
    out.push_back(p);
  }
  return out;
}

void write_attack_curve_csv(std::ostream& out, const std::vector<AttackCurvePoint>& curve) {
  out << "epsilon,accuracy,targeted_success,zero_gradient\n";
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : curve) {
    out << p.epsilon << ',' << p.accuracy << ',';
    if (p.targeted_success) out << *p.targeted_success;
    out << ',' << (p.zero_gradient ? 1 : 0) << '\n';
  }
  out.precision(old);
}

std::vector<double> parse_grid(const std::string& text) {
  std::istringstream in(text);
  std::string a, b, n;
  if (!std::getline(in, a, ':') || !std::getline(in, b, ':') || !std::getline(in, n))
    throw ValidationError("grid must look like start:stop:count, got '" + text + "'");
  double lo = 0, hi = 0;
  long count = 0;
  try {
    lo = std::stod(a);
    hi = std::stod(b);
    count = std::stol(n);
  } catch (const std::exception&) {
    throw ValidationError("grid must look like start:stop:count, got '" + text + "'");
  }
  if (count < 1) throw ValidationError("grid count must be at least 1");
  std::vector<double> out;
  for (long i = 0; i < count; ++i)
    out.push_back(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
  return out;
}

}  // namespace ceb
