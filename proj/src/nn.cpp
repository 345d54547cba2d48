#include "ceb/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <unordered_map>

namespace ceb::nn {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Index offdiag_index(Index dim, Index i, Index j) { return dim + i * (i - 1) / 2 + j; }

}  // namespace

Matrix standard_normal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

DenseNet::DenseNet(std::string name, std::vector<int> widths, std::mt19937_64& rng, Activation act)
    : widths_(std::move(widths)), activation_(act) {
  if (widths_.size() < 2) throw ValidationError("DenseNet: needs at least input and output widths");
  for (int w : widths_)
    if (w < 1) throw ValidationError("DenseNet: widths must be >= 1");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const double limit = std::sqrt(6.0 / (widths_[l] + widths_[l + 1]));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix w(widths_[l], widths_[l + 1]);
    for (Index c = 0; c < w.cols(); ++c)
      for (Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    weights.emplace_back(name + ".w" + std::to_string(l), std::move(w));
    biases.emplace_back(name + ".b" + std::to_string(l), Matrix::Zero(1, widths_[l + 1]));
  }
}

Var DenseNet::forward(Graph& g, Var x) {
  if (x.cols() != widths_.front())
    throw ValidationError("DenseNet: input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(widths_.front()));
  Var h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = ad::matmul(h, g.parameter(weights[l])) + g.parameter(biases[l]);
    if (l + 1 < weights.size() && activation_ == Activation::ELU) h = ad::elu(h);
  }
  return h;
}

Matrix DenseNet::forward(const Matrix& x) {
  if (x.cols() != widths_.front()) throw ValidationError("DenseNet: input width mismatch");
  Matrix h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = (h * weights[l].value).rowwise() + biases[l].value.row(0);
    if (l + 1 < weights.size() && activation_ == Activation::ELU)
      h = h.unaryExpr([](double v) { return v > 0 ? v : std::expm1(v); });
  }
  return h;
}

std::vector<Parameter*> DenseNet::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  return out;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].value.size() + biases[l].value.size();
  return n;
}

int head_width(int dim, Covariance cov) {
  if (dim < 1) throw ValidationError("Gaussian head: dimension must be >= 1");
  if (cov == Covariance::Full && dim > kMaxFullCovarianceDim)
    throw ValidationError("Gaussian head: full covariance supports D <= 8");
  return cov == Covariance::Diagonal ? 2 * dim : dim + tril_size(dim);
}

GaussianHead head_from_output(Var out, int dim, Covariance cov) {
  if (out.cols() != head_width(dim, cov))
    throw ValidationError("Gaussian head: network output width does not match head width");
  GaussianHead h;
  h.mean = ad::slice_cols(out, 0, dim);
  if (cov == Covariance::Diagonal) {
    h.log_variance = ad::clamp(ad::slice_cols(out, dim, dim), kLogVarianceMin, kLogVarianceMax);
  } else {
    h.cholesky_raw = ad::slice_cols(out, dim, tril_size(dim));
  }
  return h;
}

GaussianHead diagonal_head(Var mean, Var log_variance) {
  GaussianHead h;
  h.mean = mean;
  h.log_variance = log_variance;
  return h;
}

namespace {

Var cholesky_diag(const GaussianHead& head, Index i) {
  return ad::softplus(ad::slice_cols(*head.cholesky_raw, i, 1)) + kCholeskyFloor;
}

Var full_log_prob(const GaussianHead& head, Var z) {
  const Index d = head.dim();
  Var r = z - head.mean;
  std::vector<Var> w;
  Var log_det;
  for (Index i = 0; i < d; ++i) {
    Var acc = ad::slice_cols(r, i, 1);
    for (Index j = 0; j < i; ++j) acc = acc - ad::slice_cols(*head.cholesky_raw, offdiag_index(d, i, j), 1) * w[j];
    Var lii = cholesky_diag(head, i);
    w.push_back(acc / lii);
    log_det = i == 0 ? ad::log(lii) : log_det + ad::log(lii);
  }
  Var quad = ad::row_sum(ad::square(ad::concat_cols(w)));
  return (-0.5 * quad - log_det) - 0.5 * static_cast<double>(d) * kLog2Pi;
}

}  // namespace

Var gaussian_log_prob(const GaussianHead& head, Var z) {
  if (z.cols() != head.dim()) throw ValidationError("gaussian_log_prob: dimension mismatch");
  if (head.full()) return full_log_prob(head, z);
  Var diff = z - head.mean;
  Var quad = ad::row_sum(ad::square(diff) * ad::exp(-head.log_variance));
  Var log_norm = ad::row_sum(head.log_variance) + static_cast<double>(head.dim()) * kLog2Pi;
  return -0.5 * (quad + log_norm);
}

Var reparam_sample(const GaussianHead& head, const Matrix& eps) {
  if (eps.cols() != head.dim()) throw ValidationError("reparam_sample: eps dimension mismatch");
  Graph& g = *head.mean.graph();
  Var e = g.constant(eps);
  if (!head.full()) return head.mean + ad::exp(0.5 * head.log_variance) * e;
  const Index d = head.dim();
  std::vector<Var> cols;
  for (Index i = 0; i < d; ++i) {
    Var acc = ad::slice_cols(head.mean, i, 1) + cholesky_diag(head, i) * ad::slice_cols(e, i, 1);
    for (Index j = 0; j < i; ++j)
      acc = acc + ad::slice_cols(*head.cholesky_raw, offdiag_index(d, i, j), 1) * ad::slice_cols(e, j, 1);
    cols.push_back(acc);
  }
  return ad::concat_cols(cols);
}

Var pairwise_log_prob(const GaussianHead& head, Var z) {
  if (z.cols() != head.dim()) throw ValidationError("pairwise_log_prob: dimension mismatch");
  if (!head.full()) return ad::pairwise_diag_gaussian_log_prob(z, head.mean, head.log_variance);
  std::vector<Var> cols;
  for (Index k = 0; k < head.batch(); ++k) {
    GaussianHead one;
    one.mean = ad::gather_rows(head.mean, {static_cast<int>(k)});
    one.cholesky_raw = ad::gather_rows(*head.cholesky_raw, {static_cast<int>(k)});
    cols.push_back(full_log_prob(one, z));
  }
  return ad::concat_cols(cols);
}

Var kl_diagonal(const GaussianHead& a, const GaussianHead& b) {
  if (a.full() || b.full()) throw ValidationError("kl_diagonal: both heads must be diagonal");
  Var term = b.log_variance - a.log_variance +
             (ad::exp(a.log_variance) + ad::square(a.mean - b.mean)) * ad::exp(-b.log_variance) - 1.0;
  return 0.5 * ad::row_sum(term);
}

std::vector<Matrix> cholesky_factors(const GaussianHead& head) {
  if (!head.full()) throw ValidationError("cholesky_factors: head is diagonal");
  const Matrix& raw = head.cholesky_raw->value();
  const Index d = head.dim();
  std::vector<Matrix> out;
  for (Index n = 0; n < raw.rows(); ++n) {
    Matrix l = Matrix::Zero(d, d);
    for (Index i = 0; i < d; ++i) {
      const double v = raw(n, i);
      l(i, i) = (v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v))) + kCholeskyFloor;
      for (Index j = 0; j < i; ++j) l(i, j) = raw(n, offdiag_index(d, i, j));
    }
    out.push_back(std::move(l));
  }
  return out;
}

MixtureGaussian::MixtureGaussian(std::string name, int components, int dim, Covariance cov, std::mt19937_64& rng,
                                 double init_scale)
    : cov_(cov) {
  if (components < 1) throw ValidationError("MixtureGaussian: needs at least one component");
  head_width(dim, cov);
  means = Parameter(name + ".means", standard_normal(components, dim, rng) * init_scale);
  const int scale_cols = cov == Covariance::Diagonal ? dim : tril_size(dim);
  Matrix scale = Matrix::Zero(components, scale_cols);
  if (cov == Covariance::Full) scale.leftCols(dim).setConstant(std::log(std::expm1(1.0)));  // softplus^-1(1)
  scales = Parameter(name + ".scales", std::move(scale));
  logits = Parameter(name + ".logits", Matrix::Zero(1, components));
}

GaussianHead MixtureGaussian::components(Graph& g) {
  GaussianHead h;
  h.mean = g.parameter(means);
  if (cov_ == Covariance::Diagonal)
    h.log_variance = ad::clamp(g.parameter(scales), kLogVarianceMin, kLogVarianceMax);
  else
    h.cholesky_raw = g.parameter(scales);
  return h;
}

Var MixtureGaussian::log_prob(Graph& g, Var z) {
  Var comp = pairwise_log_prob(components(g), z);
  return ad::logsumexp_rows(comp + ad::log_softmax_rows(g.parameter(logits)));
}

Matrix MixtureGaussian::log_prob(const Matrix& z) {
  Graph g;
  return log_prob(g, g.constant(z)).value();
}

std::vector<Parameter*> MixtureGaussian::parameters() { return {&means, &scales, &logits}; }

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.grad.size() != p.value.size()) p.zero_grad();
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * p.grad;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
    p.zero_grad();
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void save_checkpoint(const std::string& prefix, const std::vector<const Parameter*>& params,
                     const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw ValidationError("cannot write checkpoint blob " + prefix + ".bin");
  std::size_t offset = 0;
  for (const Parameter* p : params) {
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"offset", offset}});
    // Row-major order, little-endian IEEE float32.
    for (Index r = 0; r < p->value.rows(); ++r)
      for (Index c = 0; c < p->value.cols(); ++c) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(p->value(r, c)));
        const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                               static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
        blob.write(bytes, 4);
      }
    offset += static_cast<std::size_t>(p->value.size());
  }
  nlohmann::json manifest = {{"format", "ceb-checkpoint"},
                             {"version", 1},
                             {"dtype", "float32-le"},
                             {"blob", std::filesystem::path(prefix + ".bin").filename().string()},
                             {"tensors", tensors},
                             {"meta", meta}};
  std::ofstream out(prefix + ".json");
  if (!out) throw ValidationError("cannot write checkpoint manifest " + prefix + ".json");
  out << manifest.dump(2) << '\n';
}

nlohmann::json load_checkpoint(const std::string& prefix, const std::vector<Parameter*>& params) {
  std::ifstream in(prefix + ".json");
  if (!in) throw ValidationError("cannot open checkpoint manifest " + prefix + ".json");
  const nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "ceb-checkpoint" || manifest.value("version", 0) != 1)
    throw ValidationError("checkpoint: unsupported manifest format");
  std::ifstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw ValidationError("cannot open checkpoint blob " + prefix + ".bin");
  std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

  std::unordered_map<std::string, const nlohmann::json*> index;
  for (const auto& t : manifest["tensors"]) index[t["name"].get<std::string>()] = &t;
  for (Parameter* p : params) {
    auto it = index.find(p->name);
    if (it == index.end()) throw ValidationError("checkpoint: missing tensor " + p->name);
    const auto& t = *it->second;
    const Index rows = t["rows"].get<Index>(), cols = t["cols"].get<Index>();
    if (rows != p->value.rows() || cols != p->value.cols())
      throw ValidationError("checkpoint: shape mismatch for " + p->name);
    const std::size_t offset = t["offset"].get<std::size_t>();
    if ((offset + static_cast<std::size_t>(rows * cols)) * 4 > bytes.size())
      throw ValidationError("checkpoint: blob too short for " + p->name);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) {
        const std::size_t at = (offset + static_cast<std::size_t>(r * cols + c)) * 4;
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(bytes[at + b]);
        p->value(r, c) = static_cast<double>(std::bit_cast<float>(bits));
      }
    p->zero_grad();
  }
  return manifest.value("meta", nlohmann::json::object());
}

}  // namespace ceb::nn
