#pragma once

// Exact information quantities on finite discrete distributions. Everything
// is in nats. Probabilities below kZeroProb are treated as exact zeros inside
// logarithms so that 0 log 0 = 0 and no -inf leaks into sums.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <vector>

#include "ceb/error.hpp"

namespace ceb {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kZeroProb = 1e-15;
inline constexpr double kNormTol = 1e-9;

namespace detail {

template <typename Scalar>
Scalar xlogx_ratio(Scalar p, Scalar q) {
  if (p < Scalar(kZeroProb)) return Scalar(0);
  return p * std::log(p / q);
}

template <typename Derived>
void check_probabilities(const Eigen::MatrixBase<Derived>& values, const char* what) {
  using Scalar = typename Derived::Scalar;
  if (values.size() == 0) throw ValidationError(std::string(what) + ": empty table");
  if (!values.allFinite()) throw ValidationError(std::string(what) + ": non-finite entry");
  if ((values.array() < Scalar(0)).any())
    throw ValidationError(std::string(what) + ": negative entry");
  const Scalar total = values.sum();
  if (std::abs(total - Scalar(1)) > Scalar(kNormTol)) {
    std::ostringstream os;
    os << what << ": entries sum to " << static_cast<double>(total) << ", expected 1";
    throw ValidationError(os.str());
  }
}

}  // namespace detail

/// A normalized probability vector.
template <typename Scalar = double>
class ProbVector {
 public:
  explicit ProbVector(Vec<Scalar> probs) : probs_(std::move(probs)) {
    detail::check_probabilities(probs_, "ProbVector");
  }

  const Vec<Scalar>& probs() const { return probs_; }
  Eigen::Index size() const { return probs_.size(); }

 private:
  Vec<Scalar> probs_;
};

/// p(x, y) as an |X| x |Y| table; rows index x, columns index y.
template <typename Scalar = double>
class DiscreteJoint {
 public:
  explicit DiscreteJoint(Mat<Scalar> table) : table_(std::move(table)) {
    detail::check_probabilities(table_, "DiscreteJoint");
  }

  const Mat<Scalar>& table() const { return table_; }
  Eigen::Index rows() const { return table_.rows(); }
  Eigen::Index cols() const { return table_.cols(); }
  Vec<Scalar> marginal_x() const { return table_.rowwise().sum(); }
  Vec<Scalar> marginal_y() const { return table_.colwise().sum().transpose(); }

  /// p(y|x) with rows of zero mass left as zeros.
  Mat<Scalar> conditional_y_given_x() const {
    Mat<Scalar> out = table_;
    const Vec<Scalar> px = marginal_x();
    for (Eigen::Index x = 0; x < out.rows(); ++x) {
      if (px(x) > Scalar(kZeroProb))
        out.row(x) /= px(x);
      else
        out.row(x).setZero();
    }
    return out;
  }

  DiscreteJoint transposed() const { return DiscreteJoint(table_.transpose()); }

 private:
  Mat<Scalar> table_;
};

/// q(z|x) as a row-stochastic |X| x |Z| table.
template <typename Scalar = double>
class EncoderTable {
 public:
  explicit EncoderTable(Mat<Scalar> table) : table_(std::move(table)) {
    if (table_.size() == 0) throw ValidationError("EncoderTable: empty table");
    if (!table_.allFinite() || (table_.array() < Scalar(0)).any())
      throw ValidationError("EncoderTable: entries must be finite and non-negative");
    for (Eigen::Index x = 0; x < table_.rows(); ++x) {
      if (std::abs(table_.row(x).sum() - Scalar(1)) > Scalar(kNormTol)) {
        std::ostringstream os;
        os << "EncoderTable: row " << x << " sums to " << static_cast<double>(table_.row(x).sum());
        throw ValidationError(os.str());
      }
    }
  }

  const Mat<Scalar>& table() const { return table_; }
  Eigen::Index x_cardinality() const { return table_.rows(); }
  Eigen::Index z_cardinality() const { return table_.cols(); }

 private:
  Mat<Scalar> table_;
};

enum class Axis { X = 0, Y = 1, Z = 2 };

/// p(x, y, z) over |X| x |Y| x |Z|, stored x-major.
template <typename Scalar = double>
class ThreeWayJoint {
 public:
  ThreeWayJoint(Eigen::Index nx, Eigen::Index ny, Eigen::Index nz, Vec<Scalar> data,
                bool markov = false)
      : nx_(nx), ny_(ny), nz_(nz), data_(std::move(data)), markov_(markov) {
    if (nx < 1 || ny < 1 || nz < 1 || data_.size() != nx * ny * nz)
      throw ValidationError("ThreeWayJoint: data size does not match dimensions");
    detail::check_probabilities(data_, "ThreeWayJoint");
  }

  /// p(x,y)·q(z|x): the joint induced by a representation channel Z <- X.
  static ThreeWayJoint from_markov(const DiscreteJoint<Scalar>& pxy, const EncoderTable<Scalar>& enc) {
    if (enc.x_cardinality() != pxy.rows())
      throw ValidationError("ThreeWayJoint: encoder rows do not match |X|");
    const Eigen::Index nx = pxy.rows(), ny = pxy.cols(), nz = enc.z_cardinality();
    Vec<Scalar> data(nx * ny * nz);
    for (Eigen::Index x = 0; x < nx; ++x)
      for (Eigen::Index y = 0; y < ny; ++y)
        for (Eigen::Index z = 0; z < nz; ++z)
          data((x * ny + y) * nz + z) = pxy.table()(x, y) * enc.table()(x, z);
    // Row sums of the encoder are 1 only to kNormTol; renormalize away the drift.
    data /= data.sum();
    return ThreeWayJoint(nx, ny, nz, std::move(data), true);
  }

  Scalar operator()(Eigen::Index x, Eigen::Index y, Eigen::Index z) const {
    return data_((x * ny_ + y) * nz_ + z);
  }
  Eigen::Index dim(Axis a) const { return a == Axis::X ? nx_ : a == Axis::Y ? ny_ : nz_; }
  bool markov() const { return markov_; }

  /// Marginal over the pair (a, b), a != b, as a dim(a) x dim(b) table.
  Mat<Scalar> pair_marginal(Axis a, Axis b) const {
    Mat<Scalar> out = Mat<Scalar>::Zero(dim(a), dim(b));
    for (Eigen::Index x = 0; x < nx_; ++x)
      for (Eigen::Index y = 0; y < ny_; ++y)
        for (Eigen::Index z = 0; z < nz_; ++z) {
          const Eigen::Index idx[3] = {x, y, z};
          out(idx[static_cast<int>(a)], idx[static_cast<int>(b)]) += (*this)(x, y, z);
        }
    return out;
  }

 private:
  Eigen::Index nx_, ny_, nz_;
  Vec<Scalar> data_;
  bool markov_;
};

/// The four entropies entering the consistency metric, in nats.
struct EntropyEstimates {
  double h_z = 0;
  double h_z_given_y = 0;
  double h_y = 0;
  double h_y_given_z = 0;
};

struct MniGaps {
  double residual = 0;       // I(X;Z) - I(Y;Z) = I(X;Z|Y)
  double necessity_gap = 0;  // I(X;Y) - I(Y;Z)
  bool at_mni_point(double tol = 1e-6) const {
    return std::abs(residual) <= tol && std::abs(necessity_gap) <= tol;
  }
};

template <typename Scalar>
Scalar entropy(const ProbVector<Scalar>& p) {
  Scalar h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const Scalar v = p.probs()(i);
    if (v >= Scalar(kZeroProb)) h -= v * std::log(v);
  }
  return std::max(h, Scalar(0));
}

/// Entropy of an unvalidated non-negative vector (used on marginals that are
/// already known to be normalized).
template <typename Derived>
typename Derived::Scalar entropy_of(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const Scalar v = p(i);
    if (v >= Scalar(kZeroProb)) h -= v * std::log(v);
  }
  return h;
}

template <typename Derived>
typename Derived::Scalar mutual_information_of(const Eigen::MatrixBase<Derived>& table) {
  using Scalar = typename Derived::Scalar;
  const Vec<Scalar> px = table.rowwise().sum();
  const Vec<Scalar> py = table.colwise().sum().transpose();
  Scalar mi = 0;
  for (Eigen::Index x = 0; x < table.rows(); ++x)
    for (Eigen::Index y = 0; y < table.cols(); ++y)
      mi += detail::xlogx_ratio(table(x, y), px(x) * py(y));
  return mi;
}

template <typename Scalar>
Scalar mutual_information(const DiscreteJoint<Scalar>& j) {
  return mutual_information_of(j.table());
}

/// I(A;B|C) where C is `conditioned` and A, B are the two remaining axes.
template <typename Scalar>
Scalar conditional_mi(const ThreeWayJoint<Scalar>& j, Axis conditioned) {
  const int c = static_cast<int>(conditioned);
  if (c < 0 || c > 2) throw ValidationError("conditional_mi: invalid axis");
  const Axis a = c == 0 ? Axis::Y : Axis::X;
  const Axis b = c == 2 ? Axis::Y : Axis::Z;
  const Mat<Scalar> pac = j.pair_marginal(a, conditioned);
  const Mat<Scalar> pbc = j.pair_marginal(b, conditioned);
  const Vec<Scalar> pc = pac.colwise().sum().transpose();
  Scalar cmi = 0;
  for (Eigen::Index x = 0; x < j.dim(Axis::X); ++x)
    for (Eigen::Index y = 0; y < j.dim(Axis::Y); ++y)
      for (Eigen::Index z = 0; z < j.dim(Axis::Z); ++z) {
        const Eigen::Index idx[3] = {x, y, z};
        const Eigen::Index ia = idx[static_cast<int>(a)], ib = idx[static_cast<int>(b)], ic = idx[c];
        const Scalar p = j(x, y, z);
        if (p < Scalar(kZeroProb)) continue;
        cmi += p * std::log(p * pc(ic) / (pac(ia, ic) * pbc(ib, ic)));
      }
  return cmi;
}

inline double consistency_metric(const EntropyEstimates& e) {
  return std::abs(e.h_z - e.h_z_given_y - e.h_y + e.h_y_given_z);
}

inline MniGaps mni_gaps(double i_xz, double i_yz, double i_xy) {
  if (i_xz < 0 || i_yz < 0 || i_xy < 0) throw ValidationError("mni_gaps: informations must be >= 0");
  return {i_xz - i_yz, i_xy - i_yz};
}

/// p(x, z) = p(x) q(z|x).
template <typename Scalar>
Mat<Scalar> joint_xz(const DiscreteJoint<Scalar>& j, const EncoderTable<Scalar>& enc) {
  return j.marginal_x().asDiagonal() * enc.table();
}

/// p(y, z) = sum_x p(x, y) q(z|x).
template <typename Scalar>
Mat<Scalar> joint_yz(const DiscreteJoint<Scalar>& j, const EncoderTable<Scalar>& enc) {
  return j.table().transpose() * enc.table();
}

/// Plane coordinates (I(X;Z), I(Y;Z)) of an encoder on a joint.
template <typename Scalar>
std::pair<Scalar, Scalar> information_plane(const DiscreteJoint<Scalar>& j,
                                            const EncoderTable<Scalar>& enc) {
  if (enc.x_cardinality() != j.rows())
    throw ValidationError("information_plane: encoder rows do not match |X|");
  return {mutual_information_of(joint_xz(j, enc)), mutual_information_of(joint_yz(j, enc))};
}

/// I(Y;Z)/I(X;Z) for one channel; 0 when I(X;Z) vanishes.
template <typename Scalar>
Scalar eta_ratio(const DiscreteJoint<Scalar>& j, const EncoderTable<Scalar>& enc) {
  const auto [i_xz, i_yz] = information_plane(j, enc);
  if (i_xz <= Scalar(1e-12)) return Scalar(0);
  return i_yz / i_xz;
}

/// Exact entropies of one joint p(y, z) (rows y, columns z), consistent by
/// construction.
template <typename Scalar>
EntropyEstimates exact_entropies(const Mat<Scalar>& pyz) {
  const Vec<Scalar> py = pyz.rowwise().sum();
  const Vec<Scalar> pz = pyz.colwise().sum().transpose();
  Vec<Scalar> flat = Eigen::Map<const Vec<Scalar>>(pyz.data(), pyz.size());
  const Scalar h_yz = entropy_of(flat);
  EntropyEstimates e;
  e.h_y = static_cast<double>(entropy_of(py));
  e.h_z = static_cast<double>(entropy_of(pz));
  e.h_z_given_y = static_cast<double>(h_yz - entropy_of(py));
  e.h_y_given_z = static_cast<double>(h_yz - entropy_of(pz));
  return e;
}

}  // namespace ceb
