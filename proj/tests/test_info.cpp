#include <doctest.h>

#include <cmath>
#include <random>

#include "ceb/info.hpp"
#include "ceb/joint_io.hpp"

using namespace ceb;

namespace {

Mat<double> random_table(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::exponential_distribution<double> draw(1.0);
  Mat<double> t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = draw(rng);
  return t / t.sum();
}

Mat<double> random_stochastic(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  Mat<double> t = random_table(rows, cols, rng);
  for (Eigen::Index r = 0; r < rows; ++r) t.row(r) /= t.row(r).sum();
  return t;
}

// Straight double sum, written without any of the library helpers.
double mi_oracle(const Mat<double>& t) {
  double total = 0;
  for (Eigen::Index x = 0; x < t.rows(); ++x)
    for (Eigen::Index y = 0; y < t.cols(); ++y) {
      double px = 0, py = 0;
      for (Eigen::Index k = 0; k < t.cols(); ++k) px += t(x, k);
      for (Eigen::Index k = 0; k < t.rows(); ++k) py += t(k, y);
      if (t(x, y) > 0) total += t(x, y) * std::log(t(x, y) / (px * py));
    }
  return total;
}

// I(A;B|C) by triple sum over an explicit x-major array.
double cmi_oracle(const std::vector<double>& p, int nx, int ny, int nz, int conditioned) {
  const int dims[3] = {nx, ny, nz};
  const int a = conditioned == 0 ? 1 : 0;
  const int b = conditioned == 2 ? 1 : 2;
  std::vector<double> pac(dims[a] * dims[conditioned]), pbc(dims[b] * dims[conditioned]),
      pc(dims[conditioned]);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) {
        const int idx[3] = {x, y, z};
        const double v = p[(x * ny + y) * nz + z];
        pac[idx[a] * dims[conditioned] + idx[conditioned]] += v;
        pbc[idx[b] * dims[conditioned] + idx[conditioned]] += v;
        pc[idx[conditioned]] += v;
      }
  double total = 0;
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) {
        const int idx[3] = {x, y, z};
        const double v = p[(x * ny + y) * nz + z];
        if (v <= 0) continue;
        const int c = idx[conditioned];
        total += v * std::log(v * pc[c] /
                              (pac[idx[a] * dims[conditioned] + c] * pbc[idx[b] * dims[conditioned] + c]));
      }
  return total;
}

}  // namespace

TEST_CASE("entropy of reference distributions") {
  CHECK(entropy(ProbVector<double>(Vec<double>::Constant(10, 0.1))) == doctest::Approx(std::log(10.0)));
  CHECK(entropy(ProbVector<double>(Vec<double>::Constant(10, 0.1))) == doctest::Approx(2.3026).epsilon(1e-4));
  Vec<double> delta = Vec<double>::Zero(5);
  delta(2) = 1.0;
  CHECK(entropy(ProbVector<double>(delta)) == 0.0);
  CHECK(entropy(ProbVector<double>(Vec<double>::Constant(2, 0.5))) == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("probability validation") {
  CHECK_THROWS_AS(ProbVector<double>(Vec<double>::Constant(3, 0.3)), ValidationError);
  Vec<double> neg(2);
  neg << 1.5, -0.5;
  CHECK_THROWS_AS(ProbVector<double>{neg}, ValidationError);
  CHECK_THROWS_AS(DiscreteJoint<double>(Mat<double>::Constant(2, 2, 0.3)), ValidationError);
  Mat<double> enc(2, 2);
  enc << 0.5, 0.5, 0.2, 0.7;
  CHECK_THROWS_AS(EncoderTable<double>{enc}, ValidationError);
}

TEST_CASE("mutual information examples") {
  Vec<double> px(3), py(4);
  px << 0.2, 0.3, 0.5;
  py << 0.1, 0.2, 0.3, 0.4;
  CHECK(std::abs(mutual_information(DiscreteJoint<double>(px * py.transpose()))) < 1e-12);
  CHECK(mutual_information(DiscreteJoint<double>(Mat<double>::Identity(4, 4) / 4.0)) ==
        doctest::Approx(std::log(4.0)));

  Mat<double> t(3, 3);
  t << 0.10, 0.05, 0.07, 0.02, 0.20, 0.08, 0.11, 0.03, 0.34;
  CHECK(mutual_information(DiscreteJoint<double>(t)) == doctest::Approx(mi_oracle(t)).epsilon(1e-12));
}

TEST_CASE("mutual information matches the summation oracle up to 16x16") {
  std::mt19937_64 rng(7);
  for (int rows = 1; rows <= 16; rows += 3)
    for (int cols = 1; cols <= 16; cols += 5) {
      Mat<double> t = random_table(rows, cols, rng);
      if (rows > 2) t.row(1).setZero();  // exercise zero-mass rows
      t /= t.sum();
      const DiscreteJoint<double> j(t);
      const double mi = mutual_information(j);
      CHECK(std::abs(mi - mi_oracle(t)) < 1e-12);
      CHECK(mi >= -1e-9);
      CHECK(mi <= std::min(entropy_of(j.marginal_x()), entropy_of(j.marginal_y())) + 1e-9);
    }
}

TEST_CASE("conditional mutual information") {
  std::mt19937_64 rng(11);
  SUBCASE("triple-sum oracle on random tables") {
    for (int trial = 0; trial < 20; ++trial) {
      const int nx = 2 + trial % 3, ny = 2 + trial % 2, nz = 3;
      Vec<double> data = random_table(nx * ny * nz, 1, rng);
      const ThreeWayJoint<double> j(nx, ny, nz, data);
      std::vector<double> raw(data.data(), data.data() + data.size());
      for (int axis = 0; axis < 3; ++axis) {
        const double got = conditional_mi(j, static_cast<Axis>(axis));
        CHECK(got == doctest::Approx(cmi_oracle(raw, nx, ny, nz, axis)).epsilon(1e-10));
        CHECK(got >= -1e-9);
      }
    }
  }
  SUBCASE("markov chain identities") {
    for (int trial = 0; trial < 50; ++trial) {
      const DiscreteJoint<double> pxy(random_table(4, 3, rng));
      const EncoderTable<double> enc(random_stochastic(4, 5, rng));
      const auto j = ThreeWayJoint<double>::from_markov(pxy, enc);
      CHECK(j.markov());
      const auto [i_xz, i_yz] = information_plane(pxy, enc);
      CHECK(std::abs(conditional_mi(j, Axis::X)) < 1e-9);
      CHECK(std::abs(conditional_mi(j, Axis::Y) - (i_xz - i_yz)) < 1e-9);
      CHECK(i_yz <= mutual_information(pxy) + 1e-9);
      CHECK(i_yz <= i_xz + 1e-9);
    }
  }
  SUBCASE("invalid axis") {
    const ThreeWayJoint<double> j(1, 1, 1, Vec<double>::Ones(1));
    CHECK_THROWS_AS(conditional_mi(j, static_cast<Axis>(3)), ValidationError);
  }
}

TEST_CASE("consistency metric") {
  CHECK(consistency_metric({2.0, 1.0, 2.3026, 1.3026}) == doctest::Approx(0.0));
  CHECK(consistency_metric({2.0, 1.0, 2.3026, 1.5}) == doctest::Approx(0.1974));
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat<double> pyz = random_table(3 + trial % 4, 2 + trial % 5, rng);
    CHECK(consistency_metric(exact_entropies(pyz)) < 1e-12);
  }
}

TEST_CASE("mni gaps") {
  CHECK(mni_gaps(2.3026, 2.3026, 2.3026).at_mni_point());
  const MniGaps g = mni_gaps(3.0, 2.0, 2.3026);
  CHECK(g.residual == doctest::Approx(1.0));
  CHECK(g.necessity_gap == doctest::Approx(0.3026));
  CHECK_FALSE(g.at_mni_point());
  CHECK(mni_gaps(0, 0, 0).at_mni_point());
  CHECK_THROWS_AS(mni_gaps(-1, 0, 0), ValidationError);
}

TEST_CASE("eta ratio") {
  const DiscreteJoint<double> det = deterministic_joint(4, 2);
  Mat<double> copy_y = Mat<double>::Zero(8, 4);
  for (int x = 0; x < 8; ++x) copy_y(x, x / 2) = 1.0;
  CHECK(eta_ratio(det, EncoderTable<double>(copy_y)) == doctest::Approx(1.0));

  std::mt19937_64 rng(5);
  Vec<double> px(4), py(3);
  px << 0.1, 0.2, 0.3, 0.4;
  py << 0.5, 0.25, 0.25;
  const DiscreteJoint<double> indep(px * py.transpose());
  CHECK(eta_ratio(indep, EncoderTable<double>(random_stochastic(4, 3, rng))) < 1e-12);

  Mat<double> noisy = Mat<double>::Constant(4, 4, 0.02);
  noisy.diagonal().setConstant(0.19);
  noisy /= noisy.sum();
  const DiscreteJoint<double> nj(noisy);
  double best = 0;
  for (int trial = 0; trial < 1000; ++trial)
    best = std::max(best, eta_ratio(nj, EncoderTable<double>(random_stochastic(4, 1 + trial % 4, rng))));
  CHECK(best < 1.0);
  CHECK(best > 0.0);
}
