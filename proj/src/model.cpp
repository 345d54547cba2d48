#include "ceb/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace ceb {

namespace {

using nlohmann::json;
using obj::Kind;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string covariance_name(nn::Covariance c) { return c == nn::Covariance::Full ? "full" : "diagonal"; }

nn::Covariance parse_covariance(const std::string& s) {
  if (s == "diagonal") return nn::Covariance::Diagonal;
  if (s == "full") return nn::Covariance::Full;
  throw ValidationError("unknown covariance '" + s + "'");
}

std::vector<int> reversed(std::vector<int> v) {
  std::reverse(v.begin(), v.end());
  return v;
}

void append(std::vector<ad::Parameter*>& out, std::vector<ad::Parameter*> more) {
  out.insert(out.end(), more.begin(), more.end());
}

}  // namespace

void ModelConfig::validate() const {
  objective.validate();
  if (input_dim < 1) throw ValidationError("model: input_dim must be positive");
  if (objective.kind != Kind::Denoise && classes < 2) throw ValidationError("model: need at least two classes");
  if (latent_dim < 1) throw ValidationError("model: latent_dim must be positive");
  if (covariance == nn::Covariance::Full && latent_dim > nn::kMaxFullCovarianceDim)
    throw ValidationError("model: full covariance supports at most " + std::to_string(nn::kMaxFullCovarianceDim) +
                          " latent dimensions");
  for (int w : encoder_hidden)
    if (w < 1) throw ValidationError("model: hidden widths must be positive");
  for (int w : classifier_hidden)
    if (w < 1) throw ValidationError("model: hidden widths must be positive");
  if (mixture_components < 1) throw ValidationError("model: mixture needs at least one component");
  if (objective.kind == Kind::Hier && hier_layers < 1) throw ValidationError("model: hier needs at least one layer");
  if (!(domain_hi > domain_lo)) throw ValidationError("model: empty input domain");
}

json ModelConfig::to_json() const {
  json j{{"kind", obj::kind_name(objective.kind)},
         {"rho", objective.rho},
         {"noise_lambda", objective.noise_lambda},
         {"noising_only", objective.noising_only},
         {"input_dim", input_dim},
         {"classes", classes},
         {"latent_dim", latent_dim},
         {"encoder_hidden", encoder_hidden},
         {"classifier_hidden", classifier_hidden},
         {"covariance", covariance_name(covariance)},
         {"mixture_components", mixture_components},
         {"hier_layers", hier_layers},
         {"domain", {domain_lo, domain_hi}}};
  if (objective.rho_x) j["rho_x"] = *objective.rho_x;
  if (objective.rho_y) j["rho_y"] = *objective.rho_y;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  static const std::vector<std::string> known{
      "kind",          "rho",        "rho_x",      "rho_y",          "noise_lambda",       "noising_only",
      "input_dim",     "classes",    "latent_dim", "encoder_hidden", "classifier_hidden",  "covariance",
      "mixture_components", "hier_layers", "domain"};
  if (!j.is_object()) throw ValidationError("model config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("model config: unknown key '" + key + "'");
  ModelConfig c;
  try {
    c.objective.kind = obj::parse_kind(j.value("kind", std::string("vceb")));
    c.objective.rho = j.value("rho", 0.0);
    if (j.contains("rho_x")) c.objective.rho_x = j.at("rho_x").get<double>();
    if (j.contains("rho_y")) c.objective.rho_y = j.at("rho_y").get<double>();
    c.objective.noise_lambda = j.value("noise_lambda", c.objective.noise_lambda);
    c.objective.noising_only = j.value("noising_only", false);
    c.input_dim = j.value("input_dim", 0);
    c.classes = j.value("classes", 0);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
    c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
    c.covariance = parse_covariance(j.value("covariance", std::string("diagonal")));
    c.mixture_components = j.value("mixture_components", c.mixture_components);
    c.hier_layers = j.value("hier_layers", c.hier_layers);
    if (j.contains("domain")) {
      const auto& d = j.at("domain");
      if (!d.is_array() || d.size() != 2) throw ValidationError("model config: domain must be [lo, hi]");
      c.domain_lo = d[0].get<double>();
      c.domain_hi = d[1].get<double>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int in = config_.input_dim;
  const int d = config_.latent_dim;
  const int classes = config_.classes;
  const auto cov = config_.covariance;
  auto classifier = [&](const std::string& name) {
    std::vector<int> widths{d};
    widths.insert(widths.end(), config_.classifier_hidden.begin(), config_.classifier_hidden.end());
    widths.push_back(classes);
    return nn::DenseNet(name, widths, rng);
  };

  switch (kind()) {
    case Kind::Determ: {
      std::vector<int> widths{in};
      widths.insert(widths.end(), config_.encoder_hidden.begin(), config_.encoder_hidden.end());
      widths.push_back(d);
      determ_encoder_ = std::make_unique<nn::DenseNet>("enc", widths, rng);
      classifiers_.push_back(classifier("c"));
      break;
    }
    case Kind::VCEB:
    case Kind::VIB:
    case Kind::Bidir:
    case Kind::CatGenBidir:
      encoders_.emplace_back("e", config_.encoder_hidden, in, d, cov, rng);
      if (kind() != Kind::VIB) backwards_.emplace_back("b", std::vector<int>{}, classes, d, cov, rng);
      if (kind() != Kind::CatGenBidir) classifiers_.push_back(classifier("c"));
      if (kind() == Kind::Bidir)
        decoders_.emplace_back("d", reversed(config_.encoder_hidden), d, in, nn::Covariance::Diagonal, rng);
      break;
    case Kind::Hier:
      for (int l = 0; l < config_.hier_layers; ++l) {
        const std::string s = std::to_string(l);
        encoders_.emplace_back("e" + s, config_.encoder_hidden, l == 0 ? in : d, d, cov, rng);
        backwards_.emplace_back("b" + s, std::vector<int>{}, classes, d, cov, rng);
        classifiers_.push_back(classifier("c" + s));
      }
      break;
    case Kind::Denoise:
      encoders_.emplace_back("e", config_.encoder_hidden, in, d, cov, rng);
      backwards_.emplace_back("b", config_.encoder_hidden, in, d, cov, rng);
      decoders_.emplace_back("d_noisy", reversed(config_.encoder_hidden), d, in, nn::Covariance::Diagonal, rng);
      decoders_.emplace_back("d_clean", reversed(config_.encoder_hidden), d, in, nn::Covariance::Diagonal, rng);
      break;
  }
  if (stochastic()) marginal_ = std::make_unique<nn::MixtureGaussian>("m", config_.mixture_components, d, cov, rng);
  if (classes > 0) log_prior_ = Eigen::VectorXd::Constant(classes, -std::log(static_cast<double>(classes)));
}

nn::GaussianHead Model::encode(ad::Graph& g, ad::Var x, ad::Var* z, std::mt19937_64* noise) {
  nn::GaussianHead h = encoders_.front().head(g, x);
  if (z) *z = noise ? nn::reparam_sample(h, nn::standard_normal(h.batch(), h.dim(), *noise)) : h.mean;
  return h;
}

ad::Var Model::class_scores(ad::Graph& g, ad::Var x, std::mt19937_64* noise) {
  if (!classifies()) throw CapabilityError("model: a denoising autoencoder has no classifier");
  if (x.cols() != config_.input_dim) throw ValidationError("model: input width does not match the model");
  if (kind() == Kind::Determ) return classifiers_.front().forward(g, determ_encoder_->forward(g, x));
  auto draw = [&](const nn::GaussianHead& h) {
    return noise ? nn::reparam_sample(h, nn::standard_normal(h.batch(), h.dim(), *noise)) : h.mean;
  };
  if (kind() == Kind::Hier) {
    ad::Var z = x;
    for (auto& e : encoders_) z = draw(e.head(g, z));
    return classifiers_.back().forward(g, z);
  }
  ad::Var z = draw(encoders_.front().head(g, x));
  if (kind() == Kind::CatGenBidir) {
    nn::GaussianHead per_class = backwards_.front().head(g, g.constant(Eigen::MatrixXd::Identity(config_.classes, config_.classes)));
    return obj::consistent_classifier(per_class, z, log_prior_);
  }
  return classifiers_.front().forward(g, z);
}

Eigen::MatrixXd Model::class_log_probs(const Eigen::MatrixXd& x) {
  ad::Graph g;
  return ad::log_softmax_rows(class_scores(g, g.constant(x))).value();
}

std::vector<int> Model::predict(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd lp = class_log_probs(x);
  std::vector<int> out(static_cast<std::size_t>(lp.rows()));
  for (Eigen::Index i = 0; i < lp.rows(); ++i) {
    Eigen::Index arg = 0;
    lp.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

double Model::accuracy(const Dataset& data) {
  if (data.size() == 0) return kNaN;
  const auto pred = predict(data.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

Eigen::VectorXd Model::rate(const Eigen::MatrixXd& x) {
  if (!has_rate() || !marginal_) throw CapabilityError("model: a deterministic model has no rate");
  ad::Graph g;
  ad::Var z;
  nn::GaussianHead h = encode(g, g.constant(x), &z, nullptr);
  return obj::rate(h, *marginal_, z).value().col(0);
}

obj::LossResult Model::loss(ad::Graph& g, const obj::Batch& batch, std::mt19937_64& rng) {
  const auto n = batch.size();
  const int d = config_.latent_dim;
  const auto& spec = config_.objective;
  switch (kind()) {
    case Kind::Determ:
      return obj::determ_ce_loss(g, batch, *determ_encoder_, classifiers_.front());
    case Kind::VCEB:
      return obj::vceb_loss(g, batch, encoders_.front(), backwards_.front(), classifiers_.front(), spec.rho,
                            nn::standard_normal(n, d, rng));
    case Kind::VIB:
      return obj::vib_loss(g, batch, encoders_.front(), *marginal_, classifiers_.front(), spec.rho,
                           nn::standard_normal(n, d, rng));
    case Kind::Bidir:
    case Kind::CatGenBidir: {
      obj::BidirHeads heads;
      if (kind() == Kind::Bidir) {
        heads.classifier = &classifiers_.front();
        heads.decoder = &decoders_.front();
      }
      Eigen::MatrixXd eps_x = nn::standard_normal(n, d, rng);
      Eigen::MatrixXd eps_y = nn::standard_normal(n, d, rng);
      return obj::bidir_ceb_loss(g, batch, encoders_.front(), backwards_.front(), heads,
                                 spec.rho_x.value_or(spec.rho), spec.rho_y.value_or(spec.rho), eps_x, eps_y);
    }
    case Kind::Hier: {
      std::vector<obj::HierLayer> layers;
      std::vector<Eigen::MatrixXd> eps;
      for (std::size_t l = 0; l < encoders_.size(); ++l) {
        layers.push_back({&encoders_[l], &backwards_[l], &classifiers_[l]});
        eps.push_back(nn::standard_normal(n, d, rng));
      }
      return obj::hier_ceb_loss(g, batch, layers, eps);
    }
    case Kind::Denoise: {
      std::uniform_real_distribution<double> unif(-1.0, 1.0);
      Eigen::MatrixXd u(n, batch.x.cols());
      for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = unif(rng);
      Eigen::MatrixXd x_noisy = obj::noise_fn(batch.x, spec.noise_lambda, u, config_.domain_lo, config_.domain_hi);
      obj::DenoisingParts parts{&encoders_.front(), &backwards_.front(), &decoders_[0], &decoders_[1]};
      Eigen::MatrixXd eps_x = nn::standard_normal(n, d, rng);
      Eigen::MatrixXd eps_n = nn::standard_normal(n, d, rng);
      return obj::denoising_ceb_loss(g, batch.x, x_noisy, parts, spec.rho, eps_x, eps_n, spec.noising_only);
    }
  }
  throw ValidationError("model: unknown kind");
}

std::vector<ad::Parameter*> Model::objective_parameters() {
  std::vector<ad::Parameter*> out;
  if (determ_encoder_) append(out, determ_encoder_->parameters());
  for (auto& e : encoders_) append(out, e.parameters());
  for (auto& b : backwards_) append(out, b.parameters());
  for (auto& c : classifiers_) append(out, c.parameters());
  for (auto& d : decoders_) append(out, d.parameters());
  if (kind() == Kind::VIB) append(out, marginal_->parameters());
  return out;
}

std::vector<ad::Parameter*> Model::auxiliary_parameters() {
  if (!marginal_ || kind() == Kind::VIB) return {};
  return marginal_->parameters();
}

std::vector<const ad::Parameter*> Model::all_parameters() const {
  auto& self = const_cast<Model&>(*this);
  std::vector<const ad::Parameter*> out;
  for (auto* p : self.objective_parameters()) out.push_back(p);
  for (auto* p : self.auxiliary_parameters()) out.push_back(p);
  return out;
}

void Model::save(const std::string& prefix, const json& extra) const {
  json meta = extra.is_object() ? extra : json::object();
  meta["model"] = config_.to_json();
  meta["log_prior"] = std::vector<double>(log_prior_.data(), log_prior_.data() + log_prior_.size());
  nn::save_checkpoint(prefix, all_parameters(), meta);
}

json Model::read_meta(const std::string& prefix) {
  std::ifstream in(prefix + ".json");
  if (!in) throw ValidationError("cannot open checkpoint manifest " + prefix + ".json");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ValidationError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (!manifest.contains("meta") || !manifest["meta"].contains("model"))
    throw ValidationError("checkpoint manifest has no model config");
  return manifest["meta"];
}

Model Model::load(const std::string& prefix) {
  Model m(ModelConfig::from_json(read_meta(prefix)["model"]), 0);
  std::vector<ad::Parameter*> params = m.objective_parameters();
  append(params, m.auxiliary_parameters());
  json meta = nn::load_checkpoint(prefix, params);
  if (meta.contains("log_prior")) {
    auto lp = meta["log_prior"].get<std::vector<double>>();
    if (static_cast<int>(lp.size()) == m.config_.classes)
      m.log_prior_ = Eigen::Map<Eigen::VectorXd>(lp.data(), static_cast<Eigen::Index>(lp.size()));
  }
  return m;
}

void TrainConfig::validate(const ModelConfig& model) const {
  if (steps < 0) throw ValidationError("train: steps must be non-negative");
  if (batch_size < 1) throw ValidationError("train: batch size must be positive");
  if (model.objective.kind != Kind::Determ && batch_size < 2)
    throw ValidationError("train: minibatch estimators need a batch size of at least 2");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ValidationError("train: learning rate must be positive");
  if (eval_every < 1) throw ValidationError("train: eval_every must be positive");
  if (eval_batches < 1) throw ValidationError("train: eval_batches must be positive");
  if (train_eval_examples < 1) throw ValidationError("train: train_eval_examples must be positive");
}

double TrainingTrace::max_rate_lower_bound() const {
  double best = kNaN;
  for (const auto& r : rows)
    if (r.step > 0 && std::isfinite(r.rate_lower_bound) && !(r.rate_lower_bound <= best)) best = r.rate_lower_bound;
  return best;
}

const char* TrainingTrace::csv_header() { return "step,loss,train_acc,test_acc,R,Re_X,R_X,consistency"; }

void TrainingTrace::write_csv(std::ostream& out, bool header) const {
  if (header) out << csv_header() << '\n';
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : rows)
    out << r.step << ',' << r.loss << ',' << r.train_acc << ',' << r.test_acc << ',' << r.rate << ',' << r.residual
        << ',' << r.rate_lower_bound << ',' << r.consistency << '\n';
  out.precision(old);
}

namespace {

obj::Batch make_batch(const Dataset& data, const std::vector<int>& rows) {
  obj::Batch b;
  b.x.resize(static_cast<Eigen::Index>(rows.size()), data.inputs.cols());
  b.y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.x.row(static_cast<Eigen::Index>(i)) = data.inputs.row(rows[i]);
    b.y.push_back(data.labels.empty() ? 0 : data.labels[static_cast<std::size_t>(rows[i])]);
  }
  b.classes = std::max(data.classes, 1);
  return b;
}

/// Cycles through shuffled epochs of row indices.
class BatchSampler {
 public:
  BatchSampler(Eigen::Index n, std::mt19937_64& rng) : order_(static_cast<std::size_t>(n)), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<int> next(int k) {
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(k));
    while (static_cast<int>(rows.size()) < k) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      rows.push_back(order_[pos_++]);
    }
    return rows;
  }

 private:
  std::vector<int> order_;
  std::size_t pos_ = 0;
  std::mt19937_64& rng_;
};

/// Batch metrics averaged over `probes` (each of which sees fresh noise) plus
/// accuracies on the fixed evaluation sets.
TraceRow evaluate(Model& model, const Dataset* test_set, const Dataset& train_eval, const std::vector<obj::Batch>& probes,
                  std::mt19937_64& probe_rng, int step) {
  TraceRow row;
  row.step = step;
  const double n = static_cast<double>(probes.size());
  row.rate = 0;
  for (const auto& probe : probes) {
    ad::Graph g;
    const obj::BatchMetrics m = model.loss(g, probe, probe_rng).metrics;
    row.loss += m.loss / n;
    row.residual += m.residual / n;
    row.rate_lower_bound += m.rate_lower_bound / n;
    row.consistency += m.consistency / n;
    if (model.has_rate()) row.rate += model.rate(probe.x).mean() / n;
  }
  if (!model.has_rate()) row.rate = kNaN;
  row.train_acc = model.classifies() ? model.accuracy(train_eval) : kNaN;
  row.test_acc = model.classifies() && test_set && test_set->size() > 0 ? model.accuracy(*test_set) : kNaN;
  return row;
}

}  // namespace

TrainingTrace train(Model& model, const Dataset& train_set, const Dataset* test_set, const TrainConfig& config,
                    const EvalCallback& on_eval) {
  config.validate(model.config());
  if (train_set.size() == 0) throw ValidationError("train: empty training set");
  if (train_set.dim() != model.config().input_dim) throw ValidationError("train: input width does not match the model");
  if (model.classifies() && train_set.classes != model.config().classes)
    throw ValidationError("train: class count does not match the model");
  if (model.kind() == Kind::CatGenBidir) model.set_label_prior(train_set.log_label_prior());

  std::mt19937_64 rng(config.seed);
  std::mt19937_64 probe_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  BatchSampler sampler(train_set.size(), rng);

  const int eval_n = static_cast<int>(std::min<Eigen::Index>(config.train_eval_examples, train_set.size()));
  std::vector<int> eval_rows(static_cast<std::size_t>(eval_n));
  std::iota(eval_rows.begin(), eval_rows.end(), 0);
  const Dataset train_eval = train_set.subset(eval_rows);

  nn::Adam adam(model.objective_parameters(), config.learning_rate);
  std::vector<ad::Parameter*> aux = model.auxiliary_parameters();
  std::unique_ptr<nn::Adam> aux_adam;
  if (!aux.empty()) aux_adam = std::make_unique<nn::Adam>(aux, config.learning_rate);

  std::vector<int> all_rows(static_cast<std::size_t>(train_set.size()));
  std::iota(all_rows.begin(), all_rows.end(), 0);
  TrainingTrace trace;
  auto record = [&](int step) {
    // Each probe is K distinct training examples.
    std::vector<obj::Batch> probes;
    for (int b = 0; b < config.eval_batches; ++b) {
      std::shuffle(all_rows.begin(), all_rows.end(), probe_rng);
      const auto k = static_cast<std::ptrdiff_t>(std::min<Eigen::Index>(config.batch_size, train_set.size()));
      probes.push_back(make_batch(train_set, std::vector<int>(all_rows.begin(), all_rows.begin() + k)));
    }
    trace.rows.push_back(evaluate(model, test_set, train_eval, probes, probe_rng, step));
    if (on_eval) on_eval(trace.rows.back());
  };

  record(0);
  for (int step = 1; step <= config.steps; ++step) {
    const obj::Batch batch = make_batch(train_set, sampler.next(config.batch_size));
    Eigen::MatrixXd z_sample;
    {
      ad::Graph g;
      obj::LossResult res = model.loss(g, batch, rng);
      g.backward(res.loss);
      adam.step();
      if (aux_adam) z_sample = res.z.value();
    }
    if (aux_adam) {
      ad::Graph g;
      ad::Var nll = -ad::mean(model.marginal()->log_prob(g, g.constant(z_sample)));
      if (!std::isfinite(nll.scalar())) throw NumericalError("train: non-finite auxiliary marginal loss");
      g.backward(nll);
      aux_adam->step();
    }
    if (step % config.eval_every == 0 || step == config.steps) record(step);
  }
  return trace;
}

}  // namespace ceb
