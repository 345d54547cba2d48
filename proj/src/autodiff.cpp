#include "ceb/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace ceb::ad {

namespace {

Graph* same_graph(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph())
    throw ValidationError("autodiff: operands belong to different graphs");
  return a.graph();
}

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Index broadcast_dim(Index a, Index b, const Matrix& ma, const Matrix& mb) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ValidationError("autodiff: cannot broadcast " + shape_str(ma) + " with " + shape_str(mb));
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

/// Sum a broadcast gradient back down to the operand's shape.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

template <typename Forward, typename GradA, typename GradB>
Var broadcast_binary(Var a, Var b, Forward fwd, GradA ga, GradB gb) {
  Graph* g = same_graph(a, b);
  const Matrix& va = a.value();
  const Matrix& vb = b.value();
  const Index rows = broadcast_dim(va.rows(), vb.rows(), va, vb);
  const Index cols = broadcast_dim(va.cols(), vb.cols(), va, vb);
  Matrix ea = expand(va, rows, cols);
  Matrix eb = expand(vb, rows, cols);
  Matrix out = fwd(ea, eb);
  const int ia = a.id(), ib = b.id();
  const bool need = g->needs_grad(ia) || g->needs_grad(ib);
  return g->record(std::move(out), need,
                   [ia, ib, ea = std::move(ea), eb = std::move(eb), ga, gb](Graph& gr, const Matrix& up) {
                     if (gr.needs_grad(ia)) {
                       const Matrix& v = gr.value(ia);
                       gr.accumulate(ia, reduce_to(ga(up, ea, eb), v.rows(), v.cols()));
                     }
                     if (gr.needs_grad(ib)) {
                       const Matrix& v = gr.value(ib);
                       gr.accumulate(ib, reduce_to(gb(up, ea, eb), v.rows(), v.cols()));
                     }
                   });
}

template <typename Forward, typename Derivative>
Var unary(Var a, Forward fwd, Derivative deriv) {
  Graph* g = a.graph();
  Matrix out = fwd(a.value());
  const int ia = a.id();
  return g->record(std::move(out), g->needs_grad(ia), [ia, deriv](Graph& gr, const Matrix& up) {
    gr.accumulate(ia, deriv(up, gr.value(ia)));
  });
}

Var constant_like(Var a, double c) { return a.graph()->constant(Matrix::Constant(1, 1, c)); }

}  // namespace

const Matrix& Var::value() const {
  if (!graph_) throw ValidationError("autodiff: use of an empty Var");
  return graph_->value(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ValidationError("autodiff: scalar() on a " + shape_str(v) + " value");
  return v(0, 0);
}

Var Graph::record(Matrix value, bool needs_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Graph::input(Matrix value) { return record(std::move(value), true, nullptr); }

Var Graph::parameter(Parameter& p) {
  Var v = record(p.value, true, nullptr);
  nodes_[v.id()].param = &p;
  return v;
}

void Graph::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw ValidationError("autodiff: loss belongs to another graph");
  if (loss.value().size() != 1)
    throw ValidationError("autodiff: backward() needs a scalar loss, got " + shape_str(loss.value()));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param) {
      if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols())
        n.param->grad.setZero(n.value.rows(), n.value.cols());
      n.param->grad += n.grad;
    }
    if (n.backward) {
      // The callback may grow no nodes, so the reference stays valid.
      const Matrix upstream = n.grad;
      n.backward(*this, upstream);
    }
  }
}

Matrix Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var operator+(Var a, Var b) {
  return broadcast_binary(
      a, b, [](const Matrix& x, const Matrix& y) { return Matrix(x + y); },
      [](const Matrix& up, const Matrix&, const Matrix&) { return up; },
      [](const Matrix& up, const Matrix&, const Matrix&) { return up; });
}

Var operator-(Var a, Var b) {
  return broadcast_binary(
      a, b, [](const Matrix& x, const Matrix& y) { return Matrix(x - y); },
      [](const Matrix& up, const Matrix&, const Matrix&) { return up; },
      [](const Matrix& up, const Matrix&, const Matrix&) { return Matrix(-up); });
}

Var operator*(Var a, Var b) {
  return broadcast_binary(
      a, b, [](const Matrix& x, const Matrix& y) { return Matrix(x.cwiseProduct(y)); },
      [](const Matrix& up, const Matrix&, const Matrix& y) { return Matrix(up.cwiseProduct(y)); },
      [](const Matrix& up, const Matrix& x, const Matrix&) { return Matrix(up.cwiseProduct(x)); });
}

Var operator/(Var a, Var b) {
  return broadcast_binary(
      a, b, [](const Matrix& x, const Matrix& y) { return Matrix(x.cwiseQuotient(y)); },
      [](const Matrix& up, const Matrix&, const Matrix& y) { return Matrix(up.cwiseQuotient(y)); },
      [](const Matrix& up, const Matrix& x, const Matrix& y) {
        return Matrix(-(up.array() * x.array() / (y.array() * y.array())).matrix());
      });
}

Var operator-(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(-x); }, [](const Matrix& up, const Matrix&) { return Matrix(-up); });
}

Var operator+(Var a, double c) { return a + constant_like(a, c); }
Var operator+(double c, Var a) { return a + constant_like(a, c); }
Var operator-(Var a, double c) { return a - constant_like(a, c); }
Var operator-(double c, Var a) { return constant_like(a, c) - a; }
Var operator*(Var a, double c) {
  return unary(
      a, [c](const Matrix& x) { return Matrix(x * c); }, [c](const Matrix& up, const Matrix&) { return Matrix(up * c); });
}
Var operator*(double c, Var a) { return a * c; }

Var exp(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().exp().matrix()); },
      [](const Matrix& up, const Matrix& x) { return Matrix(up.array() * x.array().exp()); });
}

Var log(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().log().matrix()); },
      [](const Matrix& up, const Matrix& x) { return Matrix(up.array() / x.array()); });
}

Var square(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().square().matrix()); },
      [](const Matrix& up, const Matrix& x) { return Matrix(2.0 * up.array() * x.array()); });
}

Var elu(Var a) {
  return unary(
      a,
      [](const Matrix& x) { return Matrix(x.unaryExpr([](double v) { return v > 0 ? v : std::expm1(v); })); },
      [](const Matrix& up, const Matrix& x) {
        return Matrix(up.array() * x.unaryExpr([](double v) { return v > 0 ? 1.0 : std::exp(v); }).array());
      });
}

Var softplus(Var a) {
  return unary(
      a,
      [](const Matrix& x) {
        return Matrix(x.unaryExpr([](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }));
      },
      [](const Matrix& up, const Matrix& x) {
        return Matrix(up.array() * x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }).array());
      });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](const Matrix& x) { return Matrix(x.cwiseMax(lo).cwiseMin(hi)); },
      [lo, hi](const Matrix& up, const Matrix& x) {
        return Matrix(up.array() * ((x.array() >= lo) && (x.array() <= hi)).cast<double>());
      });
}

Var matmul(Var a, Var b) {
  Graph* g = same_graph(a, b);
  if (a.cols() != b.rows())
    throw ValidationError("autodiff: matmul shape mismatch " + shape_str(a.value()) + " * " + shape_str(b.value()));
  const int ia = a.id(), ib = b.id();
  return g->record(a.value() * b.value(), g->needs_grad(ia) || g->needs_grad(ib),
                   [ia, ib](Graph& gr, const Matrix& up) {
                     if (gr.needs_grad(ia)) gr.accumulate(ia, up * gr.value(ib).transpose());
                     if (gr.needs_grad(ib)) gr.accumulate(ib, gr.value(ia).transpose() * up);
                   });
}

Var transpose(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.transpose()); },
      [](const Matrix& up, const Matrix&) { return Matrix(up.transpose()); });
}

Var sum(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix::Constant(1, 1, x.sum()); },
      [](const Matrix& up, const Matrix& x) { return Matrix::Constant(x.rows(), x.cols(), up(0, 0)); });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ValidationError("autodiff: mean of an empty value");
  return unary(
      a, [](const Matrix& x) { return Matrix::Constant(1, 1, x.mean()); },
      [n](const Matrix& up, const Matrix& x) { return Matrix::Constant(x.rows(), x.cols(), up(0, 0) / n); });
}

Var row_sum(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.rowwise().sum()); },
      [](const Matrix& up, const Matrix& x) { return Matrix(up.replicate(1, x.cols())); });
}

Var logsumexp_rows(Var a) {
  return unary(
      a,
      [](const Matrix& x) {
        Eigen::VectorXd top = x.rowwise().maxCoeff();
        Matrix out(x.rows(), 1);
        for (Index i = 0; i < x.rows(); ++i)
          out(i, 0) = top(i) + std::log((x.row(i).array() - top(i)).exp().sum());
        return out;
      },
      [](const Matrix& up, const Matrix& x) {
        Matrix soft(x.rows(), x.cols());
        for (Index i = 0; i < x.rows(); ++i) {
          const double top = x.row(i).maxCoeff();
          Eigen::RowVectorXd w = (x.row(i).array() - top).exp();
          soft.row(i) = w / w.sum() * up(i, 0);
        }
        return soft;
      });
}

Var log_softmax_rows(Var a) {
  return a - logsumexp_rows(a);
}

Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw ValidationError("autodiff: column slice out of range");
  Graph* g = a.graph();
  const int ia = a.id();
  return g->record(a.value().middleCols(start, count), g->needs_grad(ia),
                   [ia, start, count](Graph& gr, const Matrix& up) {
                     const Matrix& v = gr.value(ia);
                     Matrix full = Matrix::Zero(v.rows(), v.cols());
                     full.middleCols(start, count) = up;
                     gr.accumulate(ia, full);
                   });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("autodiff: concat of nothing");
  Graph* g = parts.front().graph();
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool need = false;
  std::vector<int> ids;
  std::vector<Index> widths;
  for (const Var& p : parts) {
    if (p.graph() != g) throw ValidationError("autodiff: concat across graphs");
    if (p.rows() != rows) throw ValidationError("autodiff: concat row mismatch");
    cols += p.cols();
    need = need || g->needs_grad(p.id());
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return g->record(std::move(out), need, [ids, widths](Graph& gr, const Matrix& up) {
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      gr.accumulate(ids[k], up.middleCols(off, widths[k]));
      off += widths[k];
    }
  });
}

Var gather_rows(Var a, const std::vector<int>& rows) {
  Graph* g = a.graph();
  const Matrix& v = a.value();
  Matrix out(static_cast<Index>(rows.size()), v.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= v.rows()) throw ValidationError("autodiff: gather index out of range");
    out.row(r) = v.row(rows[r]);
  }
  const int ia = a.id();
  return g->record(std::move(out), g->needs_grad(ia), [ia, rows](Graph& gr, const Matrix& up) {
    const Matrix& src = gr.value(ia);
    Matrix acc = Matrix::Zero(src.rows(), src.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) acc.row(rows[r]) += up.row(r);
    gr.accumulate(ia, acc);
  });
}

Var pick(Var a, const std::vector<int>& columns) {
  Graph* g = a.graph();
  const Matrix& v = a.value();
  if (static_cast<Index>(columns.size()) != v.rows()) throw ValidationError("autodiff: pick needs one index per row");
  Matrix out(v.rows(), 1);
  for (Index i = 0; i < v.rows(); ++i) {
    if (columns[i] < 0 || columns[i] >= v.cols()) throw ValidationError("autodiff: pick index out of range");
    out(i, 0) = v(i, columns[i]);
  }
  const int ia = a.id();
  return g->record(std::move(out), g->needs_grad(ia), [ia, columns](Graph& gr, const Matrix& up) {
    const Matrix& src = gr.value(ia);
    Matrix acc = Matrix::Zero(src.rows(), src.cols());
    for (Index i = 0; i < src.rows(); ++i) acc(i, columns[i]) = up(i, 0);
    gr.accumulate(ia, acc);
  });
}

Var detach(Var a) { return a.graph()->constant(a.value()); }

Var pairwise_diag_gaussian_log_prob(Var z, Var mean, Var log_variance) {
  Graph* g = same_graph(z, mean);
  same_graph(mean, log_variance);
  const Matrix& zv = z.value();
  const Matrix& mv = mean.value();
  const Matrix& lv = log_variance.value();
  if (zv.cols() != mv.cols() || mv.rows() != lv.rows() || mv.cols() != lv.cols())
    throw ValidationError("autodiff: pairwise log-prob shape mismatch");
  const Index n = zv.rows(), k = mv.rows(), d = zv.cols();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const Matrix inv_var = (-lv.array()).exp().matrix();
  const Eigen::VectorXd log_norm = (lv.rowwise().sum().array() + d * log2pi).matrix();
  Matrix out(n, k);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < k; ++j) {
      const double quad = ((zv.row(i) - mv.row(j)).array().square() * inv_var.row(j).array()).sum();
      out(i, j) = -0.5 * (quad + log_norm(j));
    }
  const int iz = z.id(), im = mean.id(), il = log_variance.id();
  const bool need = g->needs_grad(iz) || g->needs_grad(im) || g->needs_grad(il);
  return g->record(std::move(out), need, [iz, im, il, inv_var](Graph& gr, const Matrix& up) {
    const Matrix& zv = gr.value(iz);
    const Matrix& mv = gr.value(im);
    const Index n = zv.rows(), k = mv.rows(), d = zv.cols();
    Matrix gz = Matrix::Zero(n, d), gm = Matrix::Zero(k, d), gl = Matrix::Zero(k, d);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < k; ++j) {
        const double w = up(i, j);
        if (w == 0) continue;
        const Eigen::RowVectorXd diff = zv.row(i) - mv.row(j);
        const Eigen::RowVectorXd scaled = diff.cwiseProduct(inv_var.row(j));
        gz.row(i) -= w * scaled;
        gm.row(j) += w * scaled;
        gl.row(j) += 0.5 * w * (diff.cwiseProduct(scaled).array() - 1.0).matrix();
      }
    gr.accumulate(iz, gz);
    gr.accumulate(im, gm);
    gr.accumulate(il, gl);
  });
}

}  // namespace ceb::ad
