#include <doctest.h>

#include <cmath>
#include <random>

#include "ceb/evalkit.hpp"
#include "ceb/robustness.hpp"
#include "support.hpp"

using namespace ceb;
using Eigen::MatrixXd;

namespace {

ScoreFunction linear_scores(const MatrixXd& w, const MatrixXd& bias) {
  return [w, bias](ad::Graph& g, ad::Var x, std::mt19937_64*) {
    return ad::matmul(x, g.constant(w)) + g.constant(bias);
  };
}

// Softmax probabilities of a linear model, row by row.
MatrixXd linear_probs(const MatrixXd& x, const MatrixXd& w, const MatrixXd& bias) {
  MatrixXd logits = x * w;
  logits.rowwise() += bias.row(0);
  MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    double total = 0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) total += std::exp(logits(i, k) - top);
    for (Eigen::Index k = 0; k < logits.cols(); ++k) p(i, k) = std::exp(logits(i, k) - top) / total;
  }
  return p;
}

double cross_entropy(const MatrixXd& x, const MatrixXd& w, const MatrixXd& bias, int y) {
  return -std::log(linear_probs(x, w, bias)(0, y));
}

Dataset trained_toy_data(std::uint64_t seed) {
  MixtureSpec spec;
  spec.classes = 3;
  spec.per_class = 80;
  spec.dim = 4;
  spec.separation = 3.0;
  return gaussian_mixture_dataset(spec, seed);
}

Model trained_model(obj::Kind kind, const Dataset& data, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.objective.kind = kind;
  cfg.input_dim = data.dim();
  cfg.classes = data.classes;
  cfg.encoder_hidden = {16};
  cfg.classifier_hidden = {8};
  cfg.latent_dim = 2;
  cfg.mixture_components = 4;
  cfg.domain_lo = data.domain_lo;
  cfg.domain_hi = data.domain_hi;
  Model model(cfg, seed);
  TrainConfig tc;
  tc.steps = 300;
  tc.batch_size = 40;
  tc.learning_rate = 5e-3;
  tc.eval_every = 300;
  tc.eval_batches = 1;
  tc.seed = seed;
  train(model, data, nullptr, tc);
  return model;
}

}  // namespace

TEST_CASE("one-step linf attack matches the closed-form linear oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const MatrixXd w = nn::standard_normal(3, 4, rng), bias = nn::standard_normal(1, 4, rng);
    const MatrixXd x = MatrixXd::Random(5, 3);
    std::vector<int> y{0, 1, 2, 3, 1};
    AttackSpec spec;
    spec.epsilon = 0.05 + 0.01 * trial;
    spec.steps = 1;
    spec.step_size = 0.08;
    const auto got = pgd_attack(linear_scores(w, bias), x, y, spec, -1.0, 1.0, false);
    // d(-log p_y)/dx = W (p - e_y)
    const MatrixXd p = linear_probs(x, w, bias);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::RowVectorXd delta = p.row(i);
      delta(y[i]) -= 1.0;
      const Eigen::RowVectorXd grad = (w * delta.transpose()).transpose();
      for (Eigen::Index d = 0; d < x.cols(); ++d) {
        const double sign = grad(d) > 0 ? 1.0 : (grad(d) < 0 ? -1.0 : 0.0);
        const double expect = std::clamp(x(i, d) + std::min(*spec.step_size, spec.epsilon) * sign, -1.0, 1.0);
        CHECK(std::abs(got.x_adv(i, d) - expect) <= 1e-9);
      }
    }
  }
}

TEST_CASE("one-step l2 attack raises the loss by epsilon times the gradient norm") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd w = nn::standard_normal(4, 2, rng), bias = nn::standard_normal(1, 2, rng);
    const MatrixXd x = MatrixXd::Random(1, 4) * 0.5;
    const int y = trial % 2;
    AttackSpec spec;
    spec.norm = Norm::L2;
    spec.epsilon = 1e-4;
    spec.steps = 1;
    spec.step_size = spec.epsilon;
    const auto got = pgd_attack(linear_scores(w, bias), x, {y}, spec, -10.0, 10.0, false);
    const MatrixXd p = linear_probs(x, w, bias);
    Eigen::RowVectorXd delta = p.row(0);
    delta(y) -= 1.0;
    const double grad_norm = (w * delta.transpose()).norm();
    const double gain = cross_entropy(got.x_adv, w, bias, y) - cross_entropy(x, w, bias, y);
    CHECK(gain == doctest::Approx(spec.epsilon * grad_norm).epsilon(1e-3));
  }
}

TEST_CASE("attack constraints hold on random cases") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  long violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const MatrixXd w = nn::standard_normal(3, 3, rng) * 3.0, bias = nn::standard_normal(1, 3, rng);
    const double lo = -1.0 - unit(rng), hi = 1.0 + unit(rng);
    MatrixXd x = MatrixXd::Random(2, 3);
    AttackSpec spec;
    spec.norm = trial % 2 ? Norm::L2 : Norm::Linf;
    spec.epsilon = 2.0 * unit(rng);
    spec.steps = 1 + trial % 7;
    spec.random_start = trial % 3 == 0;
    spec.seed = static_cast<std::uint64_t>(trial);
    if (trial % 4 == 0) spec.target = trial % 3;
    const auto got = pgd_attack(linear_scores(w, bias), x, {0, 1}, spec, lo, hi, false);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::RowVectorXd diff = got.x_adv.row(i) - x.row(i);
      const double len = spec.norm == Norm::L2 ? diff.norm() : diff.cwiseAbs().maxCoeff();
      violations += len > spec.epsilon + 1e-6;
      violations += (got.x_adv.row(i).array() < lo).any() || (got.x_adv.row(i).array() > hi).any();
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("zero epsilon and zero gradient") {
  const MatrixXd x = MatrixXd::Random(3, 2);
  AttackSpec spec;
  const auto same = pgd_attack(linear_scores(MatrixXd::Ones(2, 2), MatrixXd::Zero(1, 2)), x, {0, 1, 0}, spec, -1, 1, false);
  CHECK(same.x_adv == x);

  spec.epsilon = 0.5;
  // Zero weights: the loss does not depend on x.
  const auto flat = pgd_attack(linear_scores(MatrixXd::Zero(2, 3), MatrixXd::Zero(1, 3)), x, {0, 1, 2}, spec, -1, 1, false);
  CHECK(flat.zero_gradient);
  CHECK(flat.x_adv == x);

  spec.target = 7;
  CHECK_THROWS_AS(pgd_attack(linear_scores(MatrixXd::Ones(2, 2), MatrixXd::Zero(1, 2)), x, {0, 1, 0}, spec, -1, 1, false),
                  ValidationError);
}

TEST_CASE("targeted attack moves toward the target") {
  std::mt19937_64 rng(4);
  const MatrixXd w = nn::standard_normal(3, 4, rng), bias = MatrixXd::Zero(1, 4);
  const MatrixXd x = MatrixXd::Random(6, 3) * 0.3;
  AttackSpec spec;
  spec.epsilon = 0.2;
  spec.target = 2;
  const auto got = pgd_attack(linear_scores(w, bias), x, {0, 1, 3, 0, 1, 3}, spec, -5, 5, false);
  const MatrixXd before = linear_probs(x, w, bias), after = linear_probs(got.x_adv, w, bias);
  for (Eigen::Index i = 0; i < x.rows(); ++i) CHECK(after(i, 2) > before(i, 2));
}

TEST_CASE("targeted success counting") {
  const std::vector<int> y{0, 1, 2, 1, 0, 2, 1, 0, 2, 1};
  const std::vector<int> clean{0, 1, 2, 0, 0, 2, 1, 1, 2, 1};
  const std::vector<int> adv{2, 2, 2, 2, 1, 2, 2, 2, 0, 1};
  // correct & label != 2: indices 0,1,4,6,9 -> adv==2 at 0,1,6
  CHECK(*targeted_success_rate(clean, adv, y, 2) == doctest::Approx(3.0 / 5.0));
  CHECK(*targeted_success_rate(clean, clean, y, 2) == 0.0);
  std::vector<int> all(y.size(), 2);
  CHECK(*targeted_success_rate(clean, all, y, 2) == 1.0);
  CHECK_FALSE(targeted_success_rate({2, 2}, {2, 2}, {2, 2}, 2).has_value());
  CHECK_THROWS_AS(targeted_success_rate({1}, {1, 2}, {1}, 0), ValidationError);
}

TEST_CASE("attacks on trained models") {
  const Dataset data = trained_toy_data(5);
  Model determ = trained_model(obj::Kind::Determ, data, 1);
  Model ceb = trained_model(obj::Kind::VCEB, data, 2);

  AttackSpec clean;
  CHECK(accuracy_under_attack(determ, data, clean) == doctest::Approx(determ.accuracy(data)));
  CHECK(transfer_attack(determ, ceb, data, clean) == doctest::Approx(ceb.accuracy(data)));

  AttackSpec spec;
  spec.epsilon = 1.0;
  spec.seed = 3;
  CHECK(transfer_attack(ceb, ceb, data, spec) == doctest::Approx(accuracy_under_attack(ceb, data, spec)));

  // Stochastic attacks replay the same noise from the seed.
  const auto a = pgd_attack(ceb, data.inputs, data.labels, spec);
  const auto b = pgd_attack(ceb, data.inputs, data.labels, spec);
  CHECK(a.x_adv == b.x_adv);

  std::vector<double> eps{0.0, 0.5, 1.0, 2.0, 4.0};
  const auto curve = attack_curve(determ, data, spec, eps);
  for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k].accuracy <= curve[k - 1].accuracy + 0.02);

  AttackSpec wide;
  wide.epsilon = data.domain_hi - data.domain_lo;
  CHECK(accuracy_under_attack(determ, data, wide) <= 1.0 / 3.0 + 0.1);
}

TEST_CASE("grid parsing") {
  const auto g = parse_grid("0:1:5");
  REQUIRE(g.size() == 5);
  CHECK(g[2] == doctest::Approx(0.5));
  CHECK(parse_grid("0.3:0.3:1") == std::vector<double>{0.3});
  CHECK_THROWS_AS(parse_grid("0:1"), ValidationError);
  CHECK_THROWS_AS(parse_norm("l3"), ValidationError);
}
