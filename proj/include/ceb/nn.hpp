#pragma once

// Dense networks, Gaussian distribution heads, Gaussian mixtures and Adam,
// all on top of ceb::ad.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceb/autodiff.hpp"

namespace ceb::nn {

using ad::Graph;
using ad::Index;
using ad::Matrix;
using ad::Parameter;
using ad::Var;

inline constexpr double kLogVarianceMin = -10.0;
inline constexpr double kLogVarianceMax = 10.0;
inline constexpr double kCholeskyFloor = 1e-6;
inline constexpr int kMaxFullCovarianceDim = 8;

enum class Activation { ELU, Identity };

class DenseNet {
 public:
  DenseNet() = default;
  /// widths = {input, hidden..., output}; the activation applies between
  /// layers, never after the last one.
  DenseNet(std::string name, std::vector<int> widths, std::mt19937_64& rng, Activation act = Activation::ELU);

  Var forward(Graph& g, Var x);
  Matrix forward(const Matrix& x);

  const std::vector<int>& widths() const { return widths_; }
  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  Activation activation() const { return activation_; }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;

  std::vector<Parameter> weights;  // layer l: widths[l] x widths[l+1]
  std::vector<Parameter> biases;   // layer l: 1 x widths[l+1]

 private:
  std::vector<int> widths_;
  Activation activation_ = Activation::ELU;
};

enum class Covariance { Diagonal, Full };

/// Number of raw outputs a network must produce for a D-dimensional head.
int head_width(int dim, Covariance cov);
/// Number of lower-triangular entries of a D x D factor.
inline int tril_size(int dim) { return dim * (dim + 1) / 2; }

/// A batch of Gaussians: one row per distribution. Diagonal heads use
/// `log_variance`; full heads use `cholesky_raw`, laid out as D raw diagonal
/// entries (mapped through softplus) followed by the strict lower triangle in
/// row-major order.
struct GaussianHead {
  Var mean;
  Var log_variance;
  std::optional<Var> cholesky_raw;

  Index dim() const { return mean.cols(); }
  Index batch() const { return mean.rows(); }
  bool full() const { return cholesky_raw.has_value(); }
};

/// Slices a network output into a head; clamps log-variance to
/// [kLogVarianceMin, kLogVarianceMax].
GaussianHead head_from_output(Var out, int dim, Covariance cov);
GaussianHead diagonal_head(Var mean, Var log_variance);

/// Per-row log-density (Nx1). A head with one row broadcasts over all z rows.
Var gaussian_log_prob(const GaussianHead& head, Var z);
/// z = mean + scale(eps), eps a standard-normal NxD matrix.
Var reparam_sample(const GaussianHead& head, const Matrix& eps);
/// (i, k) -> log head_k(z_i).
Var pairwise_log_prob(const GaussianHead& head, Var z);
/// KL[a || b] per row for diagonal heads.
Var kl_diagonal(const GaussianHead& a, const GaussianHead& b);
/// Lower-triangular factors of each row of a full head (for inspection/tests).
std::vector<Matrix> cholesky_factors(const GaussianHead& head);

class MixtureGaussian {
 public:
  MixtureGaussian() = default;
  MixtureGaussian(std::string name, int components, int dim, Covariance cov, std::mt19937_64& rng,
                  double init_scale = 1.0);

  /// Component parameters as a head with one row per component.
  GaussianHead components(Graph& g);
  /// log sum_m softmax(logits)_m N(z; component m), Nx1.
  Var log_prob(Graph& g, Var z);
  Matrix log_prob(const Matrix& z);

  int component_count() const { return static_cast<int>(means.value.rows()); }
  int dim() const { return static_cast<int>(means.value.cols()); }
  Covariance covariance() const { return cov_; }
  std::vector<Parameter*> parameters();

  Parameter means;
  Parameter scales;  // log-variances (diagonal) or raw Cholesky entries (full)
  Parameter logits;  // 1 x M

 private:
  Covariance cov_ = Covariance::Diagonal;
};

class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  /// Applies one update from the accumulated gradients, then clears them.
  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Writes <prefix>.json (manifest) and <prefix>.bin (little-endian float32).
void save_checkpoint(const std::string& prefix, const std::vector<const Parameter*>& params,
                     const nlohmann::json& meta);
/// Reads the manifest written by save_checkpoint and fills params by name.
nlohmann::json load_checkpoint(const std::string& prefix, const std::vector<Parameter*>& params);

Matrix standard_normal(Index rows, Index cols, std::mt19937_64& rng);

}  // namespace ceb::nn
