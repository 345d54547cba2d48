#include "ceb/objectives.hpp"

#include "ceb/info.hpp"

#include <algorithm>
#include <cmath>

namespace ceb::obj {

namespace {

void require_finite(const char* where, const char* term, Var v) {
  if (!v.value().allFinite())
    throw NumericalError(std::string(where) + ": non-finite " + term + " term");
}

void check_batch(const char* where, const Batch& batch) {
  if (batch.size() == 0) throw ValidationError(std::string(where) + ": empty batch");
  if (static_cast<Eigen::Index>(batch.y.size()) != batch.size())
    throw ValidationError(std::string(where) + ": label count does not match batch size");
  for (int y : batch.y)
    if (y < 0 || y >= batch.classes) throw ValidationError(std::string(where) + ": label out of range");
}

/// Minibatch-marginal entropy estimate -mean_i log(1/K sum_k e(z_i|x_k)).
double minibatch_marginal_entropy(const GaussianHead& e, Var z) {
  GaussianHead frozen;
  frozen.mean = ad::detach(e.mean);
  if (e.full())
    frozen.cholesky_raw = ad::detach(*e.cholesky_raw);
  else
    frozen.log_variance = ad::detach(e.log_variance);
  Var pair = nn::pairwise_log_prob(frozen, ad::detach(z));
  const double log_k = std::log(static_cast<double>(z.rows()));
  return -(ad::logsumexp_rows(pair).value().array() - log_k).mean();
}

double detached_rate_lower_bound(const GaussianHead& e, Var z) {
  GaussianHead frozen;
  frozen.mean = ad::detach(e.mean);
  if (e.full())
    frozen.cholesky_raw = ad::detach(*e.cholesky_raw);
  else
    frozen.log_variance = ad::detach(e.log_variance);
  return rate_lower_bound(frozen, ad::detach(z)).scalar();
}

/// Log-posteriors over all classes from b evaluated at every one-hot label.
Var catgen_class_scores(Graph& g, StochasticEncoder& b, int classes, Var z) {
  GaussianHead per_class = b.head(g, g.constant(Matrix::Identity(classes, classes)));
  return consistent_classifier(per_class, z, Eigen::VectorXd::Constant(classes, -std::log(double(classes))));
}

}  // namespace

Kind parse_kind(const std::string& name) {
  if (name == "vceb" || name == "ceb") return Kind::VCEB;
  if (name == "vib") return Kind::VIB;
  if (name == "determ") return Kind::Determ;
  if (name == "bidir") return Kind::Bidir;
  if (name == "catgen_bidir" || name == "catgen") return Kind::CatGenBidir;
  if (name == "hier") return Kind::Hier;
  if (name == "denoise") return Kind::Denoise;
  throw ValidationError("unknown objective kind '" + name + "'");
}

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::VCEB: return "vceb";
    case Kind::VIB: return "vib";
    case Kind::Determ: return "determ";
    case Kind::Bidir: return "bidir";
    case Kind::CatGenBidir: return "catgen_bidir";
    case Kind::Hier: return "hier";
    case Kind::Denoise: return "denoise";
  }
  return "unknown";
}

void ObjectiveSpec::validate() const {
  if (!std::isfinite(rho)) throw ValidationError("objective: rho must be finite");
  if (rho_x && !std::isfinite(*rho_x)) throw ValidationError("objective: rho_x must be finite");
  if (rho_y && !std::isfinite(*rho_y)) throw ValidationError("objective: rho_y must be finite");
  if (!(gamma() > 0) || !(beta() > 1)) throw ValidationError("objective: rho out of representable range");
  if (noise_lambda < 0 || noise_lambda > 1) throw ValidationError("objective: noise lambda must lie in [0, 1]");
}

Matrix Batch::one_hot() const {
  Matrix m = Matrix::Zero(size(), classes);
  for (Eigen::Index i = 0; i < size(); ++i) m(i, y[i]) = 1.0;
  return m;
}

StochasticEncoder::StochasticEncoder(std::string name, std::vector<int> hidden, int input_dim, int dim,
                                     Covariance cov, std::mt19937_64& rng)
    : dim_(dim), cov_(cov) {
  std::vector<int> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(nn::head_width(dim, cov));
  net = DenseNet(std::move(name), std::move(widths), rng);
}

GaussianHead StochasticEncoder::head(Graph& g, Var input) { return nn::head_from_output(net.forward(g, input), dim_, cov_); }

Var cross_entropy_terms(Var logits, const std::vector<int>& labels) {
  return ad::pick(ad::log_softmax_rows(logits), labels);
}

double accuracy_of(const Matrix& scores, const std::vector<int>& labels) {
  if (scores.rows() == 0) return BatchMetrics::kNaN;
  int correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    correct += arg == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

Var residual_info(const GaussianHead& e, const GaussianHead& b, Var z) {
  return nn::gaussian_log_prob(e, z) - nn::gaussian_log_prob(b, z);
}

Var rate(const GaussianHead& e, MixtureGaussian& m, Var z) {
  return nn::gaussian_log_prob(e, z) - m.log_prob(*z.graph(), z);
}

Var rate_lower_bound(const GaussianHead& e, Var z) {
  if (z.rows() != e.batch()) throw ValidationError("rate_lower_bound: z and encoder batch differ");
  Var pair = nn::pairwise_log_prob(e, z);
  std::vector<int> diag(static_cast<std::size_t>(z.rows()));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  const double log_k = std::log(static_cast<double>(z.rows()));
  return ad::mean(ad::pick(pair, diag) - ad::logsumexp_rows(pair)) + log_k;
}

Var catgen_log_prob(const GaussianHead& b, Var z) {
  if (z.rows() != b.batch()) throw ValidationError("catgen_log_prob: z and backward-encoder batch differ");
  Var pair = nn::pairwise_log_prob(b, z);
  std::vector<int> diag(static_cast<std::size_t>(z.rows()));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  return ad::pick(pair, diag) - ad::logsumexp_rows(pair);
}

Var consistent_classifier(const GaussianHead& class_heads, Var z, const Eigen::VectorXd& log_prior) {
  if (log_prior.size() != class_heads.batch())
    throw ValidationError("consistent_classifier: prior size does not match class count");
  Graph& g = *z.graph();
  Var scores = nn::pairwise_log_prob(class_heads, z) + g.constant(log_prior.transpose());
  return ad::log_softmax_rows(scores);
}

LossResult vceb_loss(Graph& g, const Batch& batch, StochasticEncoder& e, StochasticEncoder& b, DenseNet& c,
                     double rho, const Matrix& eps) {
  check_batch("vceb_loss", batch);
  const double gamma = std::exp(rho);
  GaussianHead eh = e.head(g, g.constant(batch.x));
  Var z = nn::reparam_sample(eh, eps);
  GaussianHead bh = b.head(g, g.constant(batch.one_hot()));
  Var logits = c.forward(g, z);
  Var res = ad::mean(residual_info(eh, bh, z));
  Var log_c_terms = cross_entropy_terms(logits, batch.y);
  Var log_c = ad::mean(log_c_terms);
  require_finite("vceb_loss", "residual", res);
  require_finite("vceb_loss", "classifier", log_c);
  Var loss = res - gamma * log_c;

  LossResult out{loss, {}, z};
  out.metrics.loss = loss.scalar();
  out.metrics.accuracy = accuracy_of(logits.value(), batch.y);
  out.metrics.residual = res.scalar();
  out.metrics.log_c = log_c.scalar();
  out.metrics.rate_lower_bound = detached_rate_lower_bound(eh, z);
  EntropyEstimates est;
  est.h_z = minibatch_marginal_entropy(eh, z);
  est.h_z_given_y = -nn::gaussian_log_prob(bh, z).value().mean();
  est.h_y = label_entropy(batch.y, batch.classes);
  est.h_y_given_z = -log_c.scalar();
  out.metrics.consistency = consistency_metric(est);
  return out;
}

LossResult vib_loss(Graph& g, const Batch& batch, StochasticEncoder& e, MixtureGaussian& m, DenseNet& c, double rho,
                    const Matrix& eps) {
  check_batch("vib_loss", batch);
  const double beta = std::exp(rho) + 1.0;
  GaussianHead eh = e.head(g, g.constant(batch.x));
  Var z = nn::reparam_sample(eh, eps);
  Var r = ad::mean(rate(eh, m, z));
  Var logits = c.forward(g, z);
  Var log_c = ad::mean(cross_entropy_terms(logits, batch.y));
  require_finite("vib_loss", "rate", r);
  require_finite("vib_loss", "classifier", log_c);
  Var loss = r - beta * log_c;

  LossResult out{loss, {}, z};
  out.metrics.loss = loss.scalar();
  out.metrics.accuracy = accuracy_of(logits.value(), batch.y);
  out.metrics.rate = r.scalar();
  out.metrics.log_c = log_c.scalar();
  out.metrics.rate_lower_bound = detached_rate_lower_bound(eh, z);
  return out;
}

LossResult determ_ce_loss(Graph& g, const Batch& batch, DenseNet& encoder, DenseNet& classifier) {
  check_batch("determ_ce_loss", batch);
  Var z = encoder.forward(g, g.constant(batch.x));
  Var logits = classifier.forward(g, z);
  require_finite("determ_ce_loss", "logit", logits);
  Var log_c = ad::mean(cross_entropy_terms(logits, batch.y));
  Var loss = -log_c;
  LossResult out{loss, {}, z};
  out.metrics.loss = loss.scalar();
  out.metrics.accuracy = accuracy_of(logits.value(), batch.y);
  out.metrics.log_c = log_c.scalar();
  return out;
}

LossResult bidir_ceb_loss(Graph& g, const Batch& batch, StochasticEncoder& e, StochasticEncoder& b,
                          const BidirHeads& heads, double rho_x, double rho_y, const Matrix& eps_x,
                          const Matrix& eps_y) {
  check_batch("bidir_ceb_loss", batch);
  const double gamma_x = std::exp(rho_x), gamma_y = std::exp(rho_y);
  Var x = g.constant(batch.x);
  GaussianHead eh = e.head(g, x);
  GaussianHead bh = b.head(g, g.constant(batch.one_hot()));
  Var z_x = nn::reparam_sample(eh, eps_x);
  Var z_y = nn::reparam_sample(bh, eps_y);

  Var forward_res = ad::mean(residual_info(eh, bh, z_x));
  Var backward_res = ad::mean(residual_info(bh, eh, z_y));
  Var class_scores;
  Var log_c;
  if (heads.classifier) {
    class_scores = heads.classifier->forward(g, z_x);
    log_c = ad::mean(cross_entropy_terms(class_scores, batch.y));
  } else {
    log_c = ad::mean(catgen_log_prob(bh, z_x));
    class_scores = catgen_class_scores(g, b, batch.classes, ad::detach(z_x));
  }
  Var log_d;
  if (heads.decoder)
    log_d = ad::mean(nn::gaussian_log_prob(heads.decoder->head(g, z_y), x));
  else
    log_d = ad::mean(catgen_log_prob(eh, z_y));
  require_finite("bidir_ceb_loss", "forward residual", forward_res);
  require_finite("bidir_ceb_loss", "backward residual", backward_res);
  require_finite("bidir_ceb_loss", "classifier", log_c);
  require_finite("bidir_ceb_loss", "decoder", log_d);
  Var loss = (forward_res - gamma_x * log_c) + (backward_res - gamma_y * log_d);

  LossResult out{loss, {}, z_x};
  out.metrics.loss = loss.scalar();
  out.metrics.accuracy = accuracy_of(class_scores.value(), batch.y);
  out.metrics.residual = forward_res.scalar();
  out.metrics.log_c = log_c.scalar();
  out.metrics.rate_lower_bound = detached_rate_lower_bound(eh, z_x);
  EntropyEstimates est;
  est.h_z = minibatch_marginal_entropy(eh, z_x);
  est.h_z_given_y = -nn::gaussian_log_prob(bh, z_x).value().mean();
  est.h_y = label_entropy(batch.y, batch.classes);
  est.h_y_given_z = -log_c.scalar();
  out.metrics.consistency = consistency_metric(est);
  return out;
}

LossResult hier_ceb_loss(Graph& g, const Batch& batch, const std::vector<HierLayer>& layers,
                         const std::vector<Matrix>& eps) {
  check_batch("hier_ceb_loss", batch);
  if (layers.empty()) throw ValidationError("hier_ceb_loss: needs at least one layer");
  if (eps.size() != layers.size()) throw ValidationError("hier_ceb_loss: one noise matrix per layer required");
  Var prev = g.constant(batch.x);
  Var y = g.constant(batch.one_hot());
  Var loss;
  Var last_logits;
  Var first_z;
  double residual_sum = 0;
  double log_c_last = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    GaussianHead eh = layers[i].encoder->head(g, prev);
    Var z = nn::reparam_sample(eh, eps[i]);
    GaussianHead bh = layers[i].backward->head(g, y);
    Var res = ad::mean(residual_info(eh, bh, z));
    last_logits = layers[i].classifier->forward(g, z);
    Var log_c = ad::mean(cross_entropy_terms(last_logits, batch.y));
    require_finite("hier_ceb_loss", "residual", res);
    require_finite("hier_ceb_loss", "classifier", log_c);
    Var term = res - log_c;
    loss = i == 0 ? term : loss + term;
    residual_sum += res.scalar();
    log_c_last = log_c.scalar();
    if (i == 0) first_z = z;
    prev = z;
  }
  LossResult out{loss, {}, first_z};
  out.metrics.loss = loss.scalar();
  out.metrics.accuracy = accuracy_of(last_logits.value(), batch.y);
  out.metrics.residual = residual_sum;
  out.metrics.log_c = log_c_last;
  return out;
}

Matrix noise_fn(const Matrix& x, double lambda, const Matrix& u, double lo, double hi) {
  if (!(lambda >= 0 && lambda <= 1)) throw ValidationError("noise_fn: lambda must lie in [0, 1]");
  if (!(hi > lo)) throw ValidationError("noise_fn: empty domain");
  if (u.rows() != x.rows() || u.cols() != x.cols()) throw ValidationError("noise_fn: noise shape mismatch");
  return (x + lambda * (hi - lo) * u).cwiseMax(lo).cwiseMin(hi);
}

LossResult denoising_ceb_loss(Graph& g, const Matrix& x, const Matrix& x_noisy, const DenoisingParts& parts,
                              double rho, const Matrix& eps_x, const Matrix& eps_noisy, bool noising_only) {
  if (x.rows() == 0 || x.rows() != x_noisy.rows() || x.cols() != x_noisy.cols())
    throw ValidationError("denoising_ceb_loss: clean and noisy batches must match and be non-empty");
  if (!noising_only && !parts.clean_decoder) throw ValidationError("denoising_ceb_loss: clean decoder required");
  const double gamma = std::exp(rho);
  Var xc = g.constant(x);
  Var xn = g.constant(x_noisy);
  GaussianHead eh = parts.encoder->head(g, xc);
  GaussianHead bh = parts.backward->head(g, xn);
  Var z_x = nn::reparam_sample(eh, eps_x);
  Var forward_res = ad::mean(residual_info(eh, bh, z_x));
  Var log_noisy = ad::mean(nn::gaussian_log_prob(parts.noisy_decoder->head(g, z_x), xn));
  require_finite("denoising_ceb_loss", "forward residual", forward_res);
  require_finite("denoising_ceb_loss", "noisy decoder", log_noisy);
  Var loss = forward_res - gamma * log_noisy;
  double residual = forward_res.scalar();
  if (!noising_only) {
    Var z_n = nn::reparam_sample(bh, eps_noisy);
    Var backward_res = ad::mean(residual_info(bh, eh, z_n));
    Var log_clean = ad::mean(nn::gaussian_log_prob(parts.clean_decoder->head(g, z_n), xc));
    require_finite("denoising_ceb_loss", "backward residual", backward_res);
    require_finite("denoising_ceb_loss", "clean decoder", log_clean);
    loss = loss + (backward_res - gamma * log_clean);
  }
  LossResult out{loss, {}, z_x};
  out.metrics.loss = loss.scalar();
  out.metrics.residual = residual;
  out.metrics.rate_lower_bound = detached_rate_lower_bound(eh, z_x);
  return out;
}

double label_entropy(const std::vector<int>& labels, int classes) {
  if (labels.empty()) return 0.0;
  std::vector<double> counts(static_cast<std::size_t>(std::max(classes, 1)), 0.0);
  for (int y : labels) counts.at(static_cast<std::size_t>(y)) += 1.0;
  double h = 0;
  for (double c : counts)
    if (c > 0) {
      const double p = c / static_cast<double>(labels.size());
      h -= p * std::log(p);
    }
  return h;
}

}  // namespace ceb::obj
