#pragma once

// Variational objectives and information estimators. Every loss is a mean
// over the minibatch of per-example terms; all values are in nats.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ceb/nn.hpp"

namespace ceb::obj {

using ad::Graph;
using ad::Matrix;
using ad::Var;
using nn::Covariance;
using nn::DenseNet;
using nn::GaussianHead;
using nn::MixtureGaussian;

enum class Kind { VCEB, VIB, Determ, Bidir, CatGenBidir, Hier, Denoise };

Kind parse_kind(const std::string& name);
std::string kind_name(Kind k);

/// Objective selection plus its trade-off parameters. gamma = exp(rho) and
/// beta = exp(rho) + 1 share the same rho.
struct ObjectiveSpec {
  Kind kind = Kind::VCEB;
  double rho = 0.0;
  std::optional<double> rho_x;  // bidirectional: defaults to rho
  std::optional<double> rho_y;
  double noise_lambda = 0.1;    // denoising only
  bool noising_only = false;    // denoising: keep the first three terms

  double gamma() const { return std::exp(rho); }
  double beta() const { return std::exp(rho) + 1.0; }
  double gamma_x() const { return std::exp(rho_x.value_or(rho)); }
  double gamma_y() const { return std::exp(rho_y.value_or(rho)); }
  void validate() const;
};

struct BatchMetrics {
  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  double loss = kNaN;
  double accuracy = kNaN;
  double residual = kNaN;          // mean Re_X
  double rate = kNaN;              // mean R (needs a marginal)
  double rate_lower_bound = kNaN;  // R_X
  double log_c = kNaN;             // mean log c(y|z)
  double consistency = kNaN;
};

struct LossResult {
  Var loss;
  BatchMetrics metrics;
  Var z;  // the representation sample the loss was evaluated at
};

struct Batch {
  Matrix x;
  std::vector<int> y;
  int classes = 0;

  Eigen::Index size() const { return x.rows(); }
  Matrix one_hot() const;
};

/// A network producing a Gaussian over a `dim`-dimensional space.
class StochasticEncoder {
 public:
  StochasticEncoder() = default;
  StochasticEncoder(std::string name, std::vector<int> hidden, int input_dim, int dim, Covariance cov,
                    std::mt19937_64& rng);

  GaussianHead head(Graph& g, Var input);
  int dim() const { return dim_; }
  Covariance covariance() const { return cov_; }
  std::vector<ad::Parameter*> parameters() { return net.parameters(); }

  DenseNet net;

 private:
  int dim_ = 0;
  Covariance cov_ = Covariance::Diagonal;
};

Var cross_entropy_terms(Var logits, const std::vector<int>& labels);  // Nx1 log c(y|z)
double accuracy_of(const Matrix& scores, const std::vector<int>& labels);

/// log e(z|x) - log b(z|y), per example.
Var residual_info(const GaussianHead& e, const GaussianHead& b, Var z);
/// log e(z|x) - log m(z), per example.
Var rate(const GaussianHead& e, MixtureGaussian& m, Var z);
/// mean_i [log e(z_i|x_i) - log(1/K sum_k e(z_i|x_k))] <= log K.
Var rate_lower_bound(const GaussianHead& e, Var z);
/// log b(z_i|y_i) - log sum_k b(z_i|y_k), per example.
Var catgen_log_prob(const GaussianHead& b, Var z);
/// Class log-posteriors log softmax_c [log b(z|y_c) + log p(y_c)]; `class_heads`
/// holds one row per class.
Var consistent_classifier(const GaussianHead& class_heads, Var z, const Eigen::VectorXd& log_prior);

/// mean[log e - log b] - gamma mean[log c].
LossResult vceb_loss(Graph& g, const Batch& batch, StochasticEncoder& e, StochasticEncoder& b, DenseNet& c,
                     double rho, const Matrix& eps);
/// mean[log e - log m] - beta mean[log c], beta = exp(rho) + 1.
LossResult vib_loss(Graph& g, const Batch& batch, StochasticEncoder& e, MixtureGaussian& m, DenseNet& c, double rho,
                    const Matrix& eps);
/// Mean negative log-softmax at the true label; z = encoder(x).
LossResult determ_ce_loss(Graph& g, const Batch& batch, DenseNet& encoder, DenseNet& classifier);

/// Prediction side of a bidirectional model: either a dedicated network or the
/// CatGen softmax over the minibatch.
struct BidirHeads {
  DenseNet* classifier = nullptr;        // c(y|z_X); nullptr selects CatGen with b
  StochasticEncoder* decoder = nullptr;  // d(x|z_Y) Gaussian over x; nullptr selects CatGen with e
};

LossResult bidir_ceb_loss(Graph& g, const Batch& batch, StochasticEncoder& e, StochasticEncoder& b,
                          const BidirHeads& heads, double rho_x, double rho_y, const Matrix& eps_x,
                          const Matrix& eps_y);

struct HierLayer {
  StochasticEncoder* encoder;   // e_i(z_i | z_{i-1}), z_0 = x
  StochasticEncoder* backward;  // b_i(z_i | y)
  DenseNet* classifier;         // c_i(y | z_i)
};

/// sum_i mean[log e_i - log b_i] - mean[log c_i]; eps[i] drives layer i.
LossResult hier_ceb_loss(Graph& g, const Batch& batch, const std::vector<HierLayer>& layers,
                         const std::vector<Matrix>& eps);

/// clip(x + lambda * u * (hi - lo), lo, hi); u in [-1, 1].
Matrix noise_fn(const Matrix& x, double lambda, const Matrix& u, double lo, double hi);

struct DenoisingParts {
  StochasticEncoder* encoder;          // e(z_X | x)
  StochasticEncoder* backward;         // b(z_X' | x')
  StochasticEncoder* noisy_decoder;    // d'(x' | z_X)
  StochasticEncoder* clean_decoder;    // d(x | z_X'); unused when noising_only
};

LossResult denoising_ceb_loss(Graph& g, const Matrix& x, const Matrix& x_noisy, const DenoisingParts& parts,
                              double rho, const Matrix& eps_x, const Matrix& eps_noisy, bool noising_only);

/// Label entropy of a batch, in nats.
double label_entropy(const std::vector<int>& labels, int classes);

}  // namespace ceb::obj
