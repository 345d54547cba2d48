#pragma once

// Trainable classifiers for every objective kind, their training loop and the
// per-step TrainingTrace.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceb/dataset.hpp"
#include "ceb/objectives.hpp"

namespace ceb {

struct ModelConfig {
  obj::ObjectiveSpec objective;
  int input_dim = 0;
  int classes = 0;
  int latent_dim = 4;
  std::vector<int> encoder_hidden{64, 64};
  std::vector<int> classifier_hidden{32};
  nn::Covariance covariance = nn::Covariance::Diagonal;
  int mixture_components = 32;
  int hier_layers = 2;
  double domain_lo = 0.0;
  double domain_hi = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  obj::Kind kind() const { return config_.objective.kind; }
  bool stochastic() const { return kind() != obj::Kind::Determ; }
  bool classifies() const { return kind() != obj::Kind::Denoise; }
  bool has_rate() const { return stochastic(); }

  /// Class scores (log-posteriors for the consistent classifier, logits
  /// otherwise) as a differentiable function of x. With `noise` the encoder is
  /// sampled once per row; without it the encoder mean is used.
  ad::Var class_scores(ad::Graph& g, ad::Var x, std::mt19937_64* noise = nullptr);

  /// log softmax of the class scores at the encoder mean.
  Eigen::MatrixXd class_log_probs(const Eigen::MatrixXd& x);
  std::vector<int> predict(const Eigen::MatrixXd& x);
  double accuracy(const Dataset& data);
  /// Per-example rate log e(z|x) - log m(z) at z = encoder mean.
  Eigen::VectorXd rate(const Eigen::MatrixXd& x);

  /// The training objective on one batch with fresh reparameterization noise.
  obj::LossResult loss(ad::Graph& g, const obj::Batch& batch, std::mt19937_64& rng);

  std::vector<ad::Parameter*> objective_parameters();
  /// Parameters of the auxiliary marginal that is fitted with its own
  /// optimizer (empty for VIB, where m(z) is part of the objective, and for
  /// deterministic models).
  std::vector<ad::Parameter*> auxiliary_parameters();
  nn::MixtureGaussian* marginal() { return marginal_.get(); }

  void set_label_prior(Eigen::VectorXd log_prior) { log_prior_ = std::move(log_prior); }
  const Eigen::VectorXd& label_prior() const { return log_prior_; }

  /// `extra` is stored next to the model config in the manifest meta.
  void save(const std::string& prefix, const nlohmann::json& extra = nlohmann::json::object()) const;
  static Model load(const std::string& prefix);
  /// The meta object of a saved checkpoint without loading the tensors.
  static nlohmann::json read_meta(const std::string& prefix);

 private:
  std::vector<const ad::Parameter*> all_parameters() const;
  nn::GaussianHead encode(ad::Graph& g, ad::Var x, ad::Var* z, std::mt19937_64* noise);

  ModelConfig config_;
  Eigen::VectorXd log_prior_;
  // Component slots; which ones exist depends on the kind.
  std::unique_ptr<nn::DenseNet> determ_encoder_;
  std::vector<obj::StochasticEncoder> encoders_;   // e (one per hierarchy layer)
  std::vector<obj::StochasticEncoder> backwards_;  // b
  std::vector<nn::DenseNet> classifiers_;          // c
  std::vector<obj::StochasticEncoder> decoders_;   // d(x|z) for bidir; d', d for denoise
  std::unique_ptr<nn::MixtureGaussian> marginal_;
};

struct TrainConfig {
  int steps = 5000;
  int batch_size = 100;
  double learning_rate = 1e-3;
  int eval_every = 100;
  int eval_batches = 10;  // K-sized probe batches averaged per evaluation
  int train_eval_examples = 1000;
  std::uint64_t seed = 0;

  void validate(const ModelConfig& model) const;
};

struct TraceRow {
  int step = 0;
  double loss = 0;
  double train_acc = 0;
  double test_acc = 0;
  double rate = 0;
  double residual = 0;
  double rate_lower_bound = 0;
  double consistency = 0;
};

struct TrainingTrace {
  std::vector<TraceRow> rows;

  /// Largest R_X over evaluations after training started (step > 0).
  double max_rate_lower_bound() const;
  static const char* csv_header();
  void write_csv(std::ostream& out, bool header = true) const;
};

using EvalCallback = std::function<void(const TraceRow&)>;

/// Adam on the objective; a separate Adam fits the auxiliary marginal to
/// detached representation samples. Evaluates at step 0, every `eval_every`
/// steps and at the final step.
TrainingTrace train(Model& model, const Dataset& train_set, const Dataset* test_set, const TrainConfig& config,
                    const EvalCallback& on_eval = {});

}  // namespace ceb
