#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "ceb/evalkit.hpp"
#include "ceb/info.hpp"
#include "support.hpp"

using namespace ceb;

namespace {

// Smaller root of (1 + z^2/n) p^2 - (2 phat + z^2/n) p + phat^2 = 0 and the
// larger one: the Wilson bounds as the solutions of |phat - p| = z sd(p).
std::pair<double, double> wilson_by_quadratic(long k, long n, double z) {
  const double phat = static_cast<double>(k) / n, z2n = z * z / n;
  const double a = 1 + z2n, b = -(2 * phat + z2n), c = phat * phat;
  const double disc = std::sqrt(b * b - 4 * a * c);
  return {(-b - disc) / (2 * a), (-b + disc) / (2 * a)};
}

ad::Parameter* find_param(Model& model, const std::string& name) {
  for (auto* p : model.objective_parameters())
    if (p->name == name) return p;
  FAIL("no parameter " << name);
  return nullptr;
}

}  // namespace

TEST_CASE("detection metrics on separated and identical lists") {
  const std::vector<double> in{0.1, 0.2, 0.3}, out{1.0, 2.0};
  const auto m = detection_metrics(in, out);
  CHECK(m.fpr_at_95_tpr == 0.0);
  CHECK(m.auroc == 100.0);
  CHECK(m.aupr_in == 100.0);
  CHECK(m.aupr_out == 100.0);

  const auto flipped = detection_metrics(std::vector<double>{-0.1, -0.2}, std::vector<double>{-1.0},
                                         Orientation::HigherIsIn);
  CHECK(flipped.auroc == 100.0);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  std::vector<double> a(10000), b(10000);
  for (double& v : a) v = n01(rng);
  for (double& v : b) v = n01(rng);
  CHECK(std::abs(detection_metrics(a, b).auroc - 50.0) <= 2.0);

  CHECK_THROWS_AS(detection_metrics(std::vector<double>{}, out), ValidationError);
  CHECK_THROWS_AS(detection_metrics(std::vector<double>{std::nan("")}, out), ValidationError);
}

TEST_CASE("detection metrics match brute-force threshold enumeration") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto [in, out] = testing::random_score_lists(rng, trial < 50 ? 20 : 400);
    if (trial % 5 == 0) {
      std::normal_distribution<double> n01;
      for (double& v : in) v = n01(rng);
      for (double& v : out) v = n01(rng) + 0.7;
    }
    const auto got = detection_metrics(in, out);
    const auto want = testing::detection_oracle(in, out);
    CHECK(got.fpr_at_95_tpr == want.fpr_at_95_tpr);
    CHECK(got.auroc == want.auroc);
    CHECK(got.aupr_in == want.aupr_in);
    CHECK(got.aupr_out == want.aupr_out);
    for (double v : {got.fpr_at_95_tpr, got.auroc, got.aupr_in, got.aupr_out}) CHECK((v >= 0 && v <= 100));

    // Strictly monotone transforms leave AUROC unchanged.
    std::vector<double> ti(in), to(out);
    for (double& v : ti) v = std::exp(0.3 * v) + 2.0;
    for (double& v : to) v = std::exp(0.3 * v) + 2.0;
    CHECK(detection_metrics(ti, to).auroc == got.auroc);
  }
}

TEST_CASE("scored examples overload") {
  const std::vector<ScoredExample> scored{{0.1, true}, {0.5, false}, {0.3, true}, {0.2, false}};
  const auto a = detection_metrics(scored);
  const auto b = detection_metrics(std::vector<double>{0.1, 0.3}, std::vector<double>{0.5, 0.2});
  CHECK(a.auroc == b.auroc);
  CHECK(a.aupr_in == b.aupr_in);
}

TEST_CASE("wilson interval") {
  for (auto [k, n] : {std::pair<long, long>{0, 10}, {5, 10}, {9, 10}, {10, 10}, {37, 120}}) {
    const auto w = wilson_interval(k, n);
    const auto [lo, hi] = wilson_by_quadratic(k, n, kWilsonZ90);
    CHECK(w.lo == doctest::Approx(lo).epsilon(1e-12));
    CHECK(w.hi == doctest::Approx(hi).epsilon(1e-12));
  }
  const auto empty = wilson_interval(0, 0);
  CHECK(empty.lo == 0.0);
  CHECK(empty.hi == 1.0);
}

TEST_CASE("calibration curve") {
  std::vector<double> ones(7, 1.0);
  const auto perfect = calibration_curve(ones, std::vector<bool>(7, true));
  CHECK(perfect.ece == 0.0);
  CHECK(perfect.bins.back().count == 7);
  CHECK(perfect.bins.back().accuracy == 1.0);
  CHECK(perfect.bins.back().mean_confidence == 1.0);

  // Hand count: bins of width 0.05.
  const std::vector<double> conf{0.02, 0.04, 0.51, 0.53, 0.54, 0.97, 0.99, 1.0, 0.33, 0.3};
  const std::vector<bool> hit{false, true, true, false, true, true, true, true, false, false};
  const auto c = calibration_curve(conf, hit);
  CHECK(c.total == 10);
  CHECK(c.bins[0].count == 2);
  CHECK(c.bins[0].accuracy == 0.5);
  CHECK(c.bins[0].mean_confidence == doctest::Approx(0.03));
  CHECK(c.bins[10].count == 3);
  CHECK(c.bins[10].accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(c.bins[19].count == 3);
  CHECK(c.bins[6].count == 2);
  CHECK(c.bins[6].accuracy == 0.0);
  long total = 0;
  for (const auto& b : c.bins) total += b.count;
  CHECK(total == 10);
  const double ece = 0.2 * std::abs(0.5 - 0.03) + 0.3 * std::abs(2.0 / 3.0 - 0.5266666666666667) +
                     0.3 * std::abs(1.0 - (0.97 + 0.99 + 1.0) / 3) + 0.2 * std::abs(0.0 - 0.315);
  CHECK(c.ece == doctest::Approx(ece).epsilon(1e-12));

  CHECK_THROWS_AS(calibration_curve(std::vector<double>{1.2}, std::vector<bool>{true}), ValidationError);
}

TEST_CASE("bernoulli-calibrated data lands inside the intervals at the nominal rate") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  long covered = 0, occupied = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> conf(2000);
    std::vector<bool> hit(conf.size());
    for (std::size_t i = 0; i < conf.size(); ++i) {
      conf[i] = unit(rng);
      hit[i] = unit(rng) < conf[i];
    }
    const auto curve = calibration_curve(conf, hit);
    for (const auto& b : curve.bins) {
      if (b.count == 0) continue;
      ++occupied;
      covered += b.covers_diagonal();
    }
    CHECK(curve.ece < 0.05);
  }
  // Per-bin coverage should sit near the 90% nominal level.
  CHECK(static_cast<double>(covered) / occupied >= 0.85);
}

TEST_CASE("ood scores") {
  ModelConfig cfg;
  cfg.objective.kind = obj::Kind::Determ;
  cfg.input_dim = 3;
  cfg.classes = 10;
  cfg.encoder_hidden = {4};
  cfg.classifier_hidden = {};
  Model model(cfg, 0);
  auto* w = find_param(model, "c.w0");
  auto* b = find_param(model, "c.b0");
  w->value.setZero();
  b->value.setZero();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 3);
  const auto uniform = ood_scores(model, x, false);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(uniform.entropy(i) == doctest::Approx(std::log(10.0)));
  CHECK_FALSE(uniform.rate.has_value());
  CHECK(uniform.orientation == Orientation::LowerIsIn);
  b->value(0, 3) = 800.0;
  const auto onehot = ood_scores(model, x, false);
  CHECK(onehot.entropy.cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(ood_scores(model, x, true), CapabilityError);
}

TEST_CASE("rate separates in-distribution data from uniform noise") {
  MixtureSpec spec;
  spec.classes = 3;
  spec.per_class = 100;
  spec.dim = 4;
  const Dataset data = gaussian_mixture_dataset(spec, 7);
  ModelConfig cfg;
  cfg.objective.kind = obj::Kind::VCEB;
  cfg.input_dim = 4;
  cfg.classes = 3;
  cfg.encoder_hidden = {16};
  cfg.classifier_hidden = {8};
  cfg.latent_dim = 2;
  cfg.mixture_components = 4;
  cfg.domain_lo = data.domain_lo;
  cfg.domain_hi = data.domain_hi;
  Model model(cfg, 1);
  TrainConfig tc;
  tc.steps = 2000;
  tc.batch_size = 50;
  tc.learning_rate = 5e-3;
  tc.eval_every = 2000;
  tc.eval_batches = 1;
  train(model, data, nullptr, tc);
  const Dataset noise = uniform_noise_dataset(300, 4, data.domain_lo, data.domain_hi, 8);
  const auto in = ood_scores(model, data.inputs, true), out = ood_scores(model, noise.inputs, true);
  const std::vector<double> rin(in.rate->data(), in.rate->data() + in.rate->size());
  const std::vector<double> rout(out.rate->data(), out.rate->data() + out.rate->size());
  const auto m = detection_metrics(rin, rout);
  MESSAGE("rate detection: fpr95=" << m.fpr_at_95_tpr << " auroc=" << m.auroc << " aupr_in=" << m.aupr_in);
  CHECK(out.rate->mean() > in.rate->mean());
  CHECK(m.auroc > 50.0);
}

TEST_CASE("gaussian mixture generator") {
  MixtureSpec spec;
  spec.classes = 10;
  spec.per_class = 30;
  const Dataset d = gaussian_mixture_dataset(spec, 1);
  CHECK(d.deterministic);
  CHECK(d.size() == 300);
  std::vector<int> counts(10, 0);
  for (int y : d.labels) ++counts[y];
  CHECK(std::all_of(counts.begin(), counts.end(), [](int c) { return c == 30; }));
  CHECK(d.inputs.maxCoeff() <= spec.domain_bound());
  CHECK(d.inputs.minCoeff() >= -spec.domain_bound());
  CHECK(gaussian_mixture_dataset(spec, 1).inputs == d.inputs);

  // Empirical joint over (distinct input, label) has I(X;Y) = H(Y) = ln 10.
  Mat<double> joint = Mat<double>::Zero(d.size(), 10);
  for (Eigen::Index i = 0; i < d.size(); ++i) joint(i, d.labels[i]) = 1.0 / d.size();
  CHECK(mutual_information(DiscreteJoint<double>(joint)) == doctest::Approx(std::log(10.0)));

  // Discretize to the argmax coordinate and compare with a direct count.
  Mat<double> coarse = Mat<double>::Zero(spec.dim, 10);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    Eigen::Index arg = 0;
    d.inputs.row(i).maxCoeff(&arg);
    coarse(arg, d.labels[i]) += 1.0 / d.size();
  }
  double oracle = 0;
  for (Eigen::Index a = 0; a < coarse.rows(); ++a)
    for (Eigen::Index y = 0; y < coarse.cols(); ++y)
      if (coarse(a, y) > 0)
        oracle += coarse(a, y) * std::log(coarse(a, y) / (coarse.row(a).sum() * coarse.col(y).sum()));
  CHECK(mutual_information(DiscreteJoint<double>(coarse)) == doctest::Approx(oracle).epsilon(1e-12));

  spec.label_noise = 0.2;
  CHECK_FALSE(gaussian_mixture_dataset(spec, 1).deterministic);

  // With vanishing separation nothing beats chance.
  MixtureSpec flat;
  flat.per_class = 500;
  flat.separation = 1e-3;
  const Dataset f = gaussian_mixture_dataset(flat, 2);
  long correct = 0;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    Eigen::Index arg = 0;
    f.inputs.row(i).maxCoeff(&arg);  // nearest class mean along the axes
    correct += arg == f.labels[i];
  }
  CHECK(static_cast<double>(correct) / f.size() == doctest::Approx(0.1).epsilon(0.3));

  spec.separation = 0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  CHECK(MixtureSpec::from_json(flat.to_json()).separation == flat.separation);
  nlohmann::json bad = flat.to_json();
  bad["bogus"] = 1;
  CHECK_THROWS_AS(MixtureSpec::from_json(bad), ValidationError);
}

TEST_CASE("random label generator") {
  const Eigen::MatrixXd inputs = Eigen::MatrixXd::Random(100, 3);
  const Dataset a = random_label_dataset(inputs, 10, 4), b = random_label_dataset(inputs, 10, 4);
  CHECK(a.labels == b.labels);
  CHECK(a.labels != random_label_dataset(inputs, 10, 5).labels);
  CHECK_FALSE(a.deterministic);
  std::map<int, int> counts;
  for (int y : a.labels) ++counts[y];
  for (const auto& [y, c] : counts) CHECK(c == 10);

  // Labels ignore the inputs: a between-class statistic on the first input
  // coordinate yields permutation p-values that are not concentrated near 0.
  auto statistic = [&](const std::vector<int>& labels) {
    std::vector<double> sum(10, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) sum[labels[i]] += inputs(static_cast<Eigen::Index>(i), 0);
    double s = 0;
    for (double v : sum) s += v * v;
    return s;
  };
  int small = 0;
  const int seeds = 100;
  for (int seed = 0; seed < seeds; ++seed) {
    const auto labels = random_label_dataset(inputs, 10, 1000 + seed).labels;
    const double observed = statistic(labels);
    std::mt19937_64 rng(seed);
    int above = 0;
    std::vector<int> shuffled = labels;
    for (int perm = 0; perm < 99; ++perm) {
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      above += statistic(shuffled) >= observed;
    }
    small += (above + 1) / 100.0 <= 0.1;
  }
  CHECK(small <= 20);
  CHECK_THROWS_AS(random_label_dataset(inputs, 1, 0), ValidationError);
}

TEST_CASE("dataset json and csv output") {
  const Dataset r = dataset_from_json({{"type", "random_labels"}, {"classes", 4}, {"count", 12}, {"dim", 3}}, 2);
  CHECK(r.size() == 12);
  CHECK(r.dim() == 3);
  CHECK(r.inputs.minCoeff() >= 0.0);
  CHECK(r.inputs.maxCoeff() <= 1.0);
  CHECK_THROWS_AS(dataset_from_json({{"type", "mnist"}}, 0), ValidationError);

  std::ostringstream os;
  write_scores_csv(os, std::vector<ScoredExample>{{0.5, true}}, Orientation::LowerIsIn);
  CHECK(os.str().rfind("# orientation=", 0) == 0);
  const auto j = detection_to_json(DetectionMetrics{1, 2, 3, 4});
  CHECK(j["auroc"] == 2);
}
