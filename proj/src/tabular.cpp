#include "ceb/tabular.hpp"

#include <limits>
#include <sstream>

namespace ceb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Marginals {
  Vec<double> qz;        // |Z|
  Mat<double> qy_given_z;  // |Y| x |Z|
};

Marginals remarginalize(const DiscreteJoint<double>& joint, const Mat<double>& enc) {
  Marginals m;
  m.qz = enc.transpose() * joint.marginal_x();
  m.qy_given_z = joint.table().transpose() * enc;
  for (Eigen::Index z = 0; z < enc.cols(); ++z) {
    if (m.qz(z) > kZeroProb)
      m.qy_given_z.col(z) /= m.qz(z);
    else
      m.qy_given_z.col(z).setZero();
  }
  return m;
}

SolveStep evaluate(const DiscreteJoint<double>& joint, const Mat<double>& enc, double beta) {
  SolveStep s;
  s.i_xz = mutual_information_of(Mat<double>(joint.marginal_x().asDiagonal() * enc));
  s.i_yz = mutual_information_of(Mat<double>(joint.table().transpose() * enc));
  s.objective = s.i_xz - beta * s.i_yz;
  return s;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the three words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

Mat<double> self_consistent_update(const DiscreteJoint<double>& joint, double beta, const Mat<double>& encoder) {
  const Marginals m = remarginalize(joint, encoder);
  const Mat<double> py_given_x = joint.conditional_y_given_x();
  const Vec<double> px = joint.marginal_x();
  const Eigen::Index nx = encoder.rows(), nz = encoder.cols(), ny = joint.cols();

  Mat<double> next(nx, nz);
  for (Eigen::Index x = 0; x < nx; ++x) {
    Vec<double> logits(nz);
    for (Eigen::Index z = 0; z < nz; ++z) {
      if (m.qz(z) <= kZeroProb) {
        logits(z) = -kInf;
        continue;
      }
      double kl = 0;
      if (px(x) > kZeroProb) {
        for (Eigen::Index y = 0; y < ny; ++y) {
          const double p = py_given_x(x, y);
          if (p < kZeroProb) continue;
          const double q = m.qy_given_z(y, z);
          if (q < kZeroProb) {
            kl = kInf;
            break;
          }
          kl += p * std::log(p / q);
        }
      }
      logits(z) = kl == kInf ? -kInf : std::log(m.qz(z)) - beta * kl;
    }
    const double top = logits.maxCoeff();
    if (!std::isfinite(top)) {
      next.row(x).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    Vec<double> w = (logits.array() - top).exp();
    next.row(x) = (w / w.sum()).transpose();
  }
  return next;
}

SolveResult ib_solve(const DiscreteJoint<double>& joint, double beta, const EncoderTable<double>& init,
                     const SolveOptions& options) {
  if (!(beta > 0) || !std::isfinite(beta)) throw ValidationError("ib_solve: beta must be finite and > 0");
  if (init.x_cardinality() != joint.rows()) throw ValidationError("ib_solve: init rows do not match |X|");
  if (options.max_iters < 1 || !(options.tol > 0)) throw ValidationError("ib_solve: bad tol/max_iters");

  SolveTrace trace;
  Mat<double> enc = init.table();
  trace.steps.push_back(evaluate(joint, enc, beta));
  for (int it = 1; it <= options.max_iters; ++it) {
    Mat<double> next = self_consistent_update(joint, beta, enc);
    if (!next.allFinite()) {
      std::ostringstream os;
      os << "ib_solve: non-finite encoder at iteration " << it;
      throw NumericalError(os.str());
    }
    const double change = (next - enc).cwiseAbs().maxCoeff();
    enc = std::move(next);
    trace.steps.push_back(evaluate(joint, enc, beta));
    trace.iterations = it;
    trace.last_change = change;
    if (!std::isfinite(trace.steps.back().objective)) {
      std::ostringstream os;
      os << "ib_solve: non-finite objective at iteration " << it;
      throw NumericalError(os.str());
    }
    if (change <= options.tol) {
      trace.converged = true;
      break;
    }
  }
  // Rows are normalized to rounding; restore exact row sums before wrapping.
  for (Eigen::Index x = 0; x < enc.rows(); ++x) enc.row(x) /= enc.row(x).sum();
  return {EncoderTable<double>(std::move(enc)), std::move(trace)};
}

SolveResult ceb_solve(const DiscreteJoint<double>& joint, double rho, const EncoderTable<double>& init,
                      const SolveOptions& options) {
  if (!std::isfinite(rho)) throw ValidationError("ceb_solve: rho must be finite");
  return ib_solve(joint, beta_from_rho(rho), init, options);
}

EncoderTable<double> random_encoder(Eigen::Index x_cardinality, Eigen::Index z_cardinality,
                                    std::mt19937_64& rng) {
  if (x_cardinality < 1 || z_cardinality < 1) throw ValidationError("random_encoder: sizes must be >= 1");
  std::gamma_distribution<double> gamma(1.0, 1.0);
  Mat<double> t(x_cardinality, z_cardinality);
  for (Eigen::Index x = 0; x < x_cardinality; ++x) {
    for (Eigen::Index z = 0; z < z_cardinality; ++z) t(x, z) = gamma(rng) + 1e-300;
    t.row(x) /= t.row(x).sum();
  }
  return EncoderTable<double>(std::move(t));
}

TabularObjective parse_tabular_objective(const std::string& name) {
  if (name == "ib") return TabularObjective::IB;
  if (name == "ceb") return TabularObjective::CEB;
  throw ValidationError("unknown tabular objective '" + name + "' (expected ib or ceb)");
}

std::vector<PlanePoint> plane_sweep(const DiscreteJoint<double>& joint, const std::vector<double>& rhos,
                                    TabularObjective objective, const SweepOptions& options) {
  if (rhos.empty()) throw ValidationError("plane_sweep: rho list is empty");
  if (options.restarts < 1) throw ValidationError("plane_sweep: restarts must be >= 1");
  const Eigen::Index nz = options.z_cardinality > 0 ? options.z_cardinality : joint.cols();

  std::vector<PlanePoint> points;
  points.reserve(rhos.size());
  for (std::size_t p = 0; p < rhos.size(); ++p) {
    PlanePoint best;
    best.rho = rhos[p];
    best.failed = true;
    bool have = false;
    for (int r = 0; r < options.restarts; ++r) {
      std::mt19937_64 rng(derive_seed(options.seed, p, static_cast<std::uint64_t>(r)));
      try {
        const auto init = random_encoder(joint.rows(), nz, rng);
        const SolveResult res = ceb_solve(joint, rhos[p], init, options.solve);
        const SolveStep& last = res.trace.steps.back();
        // Both objectives share I(X;Z) - beta I(Y;Z) up to the labelling of
        // the compression term; report each in its own form.
        const double value = objective == TabularObjective::IB
                                 ? last.objective
                                 : (last.i_xz - last.i_yz) - gamma_from_rho(rhos[p]) * last.i_yz;
        if (!have || value < best.objective) {
          best = PlanePoint{rhos[p], last.i_xz, last.i_yz, value, res.trace.converged, false, {}};
          have = true;
        }
      } catch (const std::exception& e) {
        if (!have) best.error = e.what();
      }
    }
    points.push_back(best);
  }
  return points;
}

}  // namespace ceb
