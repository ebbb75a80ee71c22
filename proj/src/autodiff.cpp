#include "rhymelm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rhymelm::ad {

namespace {

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw NonFiniteError(std::string(op) + ": non-finite value produced");
}

ShapeError shape_error(const char* op, const Matrix& a, const Matrix& b) {
  return ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                    shape_string(b));
}

}  // namespace

Activation parse_activation(std::string_view text) {
  if (text == "gelu") return Activation::kGelu;
  if (text == "relu") return Activation::kRelu;
  if (text == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation: " + std::string(text));
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kGelu: return "gelu";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

// Exact (erf) GELU.
double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::kGelu: return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
  }
  return x;
}

double activate_derivative(Activation kind, double x) {
  switch (kind) {
    case Activation::kGelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

std::string shape_string(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

const Graph::Node& Graph::node(Var v) const {
  if (v.index_ >= nodes_.size()) throw std::out_of_range("Var does not belong to this graph");
  return nodes_[v.index_];
}

Var Graph::push(const char* op, Matrix value, bool requires_grad,
                std::function<void(Graph&, const Node&)> backward) {
  if (checked_) check_finite(value, op);
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

void Graph::accumulate(std::size_t index, const Matrix& g) {
  Node& n = nodes_[index];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Graph::accumulate_block(std::size_t index, std::size_t row0, std::size_t col0, const Matrix& g) {
  Node& n = nodes_[index];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  n.grad.block(static_cast<Eigen::Index>(row0), static_cast<Eigen::Index>(col0), g.rows(), g.cols()) += g;
}

Var Graph::input(Matrix value, bool requires_grad) {
  return push("input", std::move(value), requires_grad, [](Graph&, const Node&) {});
}

Var Graph::param(const Parameter& p) {
  Var v = push("param", p.value, true, [](Graph&, const Node&) {});
  param_leaves_[&p].push_back(v.index_);
  return v;
}

Var Graph::matmul(Var a, Var b) {
  const Matrix& A = node(a).value;
  const Matrix& B = node(b).value;
  if (A.cols() != B.rows()) throw shape_error("matmul", A, B);
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::size_t ia = a.index_, ib = b.index_;
  return push("matmul", A * B, rg, [ia, ib](Graph& g, const Node& self) {
    if (g.nodes_[ia].requires_grad) g.accumulate(ia, self.grad * g.nodes_[ib].value.transpose());
    if (g.nodes_[ib].requires_grad) g.accumulate(ib, g.nodes_[ia].value.transpose() * self.grad);
  });
}

Var Graph::add(Var a, Var b) {
  const Matrix& A = node(a).value;
  const Matrix& B = node(b).value;
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::size_t ia = a.index_, ib = b.index_;
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    return push("add", A + B, rg, [ia, ib](Graph& g, const Node& self) {
      g.accumulate(ia, self.grad);
      g.accumulate(ib, self.grad);
    });
  }
  if (B.rows() == 1 && B.cols() == A.cols()) {
    Matrix out = A.rowwise() + B.row(0);
    return push("add", std::move(out), rg, [ia, ib](Graph& g, const Node& self) {
      g.accumulate(ia, self.grad);
      if (g.nodes_[ib].requires_grad) g.accumulate(ib, self.grad.colwise().sum());
    });
  }
  throw shape_error("add", A, B);
}

Var Graph::mul(Var a, Var b) {
  const Matrix& A = node(a).value;
  const Matrix& B = node(b).value;
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::size_t ia = a.index_, ib = b.index_;
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    return push("mul", A.cwiseProduct(B), rg, [ia, ib](Graph& g, const Node& self) {
      if (g.nodes_[ia].requires_grad) g.accumulate(ia, self.grad.cwiseProduct(g.nodes_[ib].value));
      if (g.nodes_[ib].requires_grad) g.accumulate(ib, self.grad.cwiseProduct(g.nodes_[ia].value));
    });
  }
  if (B.rows() == 1 && B.cols() == A.cols()) {
    Matrix out = A.array().rowwise() * B.row(0).array();
    return push("mul", std::move(out), rg, [ia, ib](Graph& g, const Node& self) {
      const Matrix& Av = g.nodes_[ia].value;
      const Matrix& Bv = g.nodes_[ib].value;
      if (g.nodes_[ia].requires_grad) {
        Matrix ga = self.grad.array().rowwise() * Bv.row(0).array();
        g.accumulate(ia, ga);
      }
      if (g.nodes_[ib].requires_grad) g.accumulate(ib, self.grad.cwiseProduct(Av).colwise().sum());
    });
  }
  throw shape_error("mul", A, B);
}

Var Graph::scale(Var a, double factor) {
  const std::size_t ia = a.index_;
  return push("scale", node(a).value * factor, node(a).requires_grad,
              [ia, factor](Graph& g, const Node& self) { g.accumulate(ia, self.grad * factor); });
}

Var Graph::sum(Var a) {
  const std::size_t ia = a.index_;
  Matrix out(1, 1);
  out(0, 0) = node(a).value.sum();
  return push("sum", std::move(out), node(a).requires_grad, [ia](Graph& g, const Node& self) {
    const Matrix& A = g.nodes_[ia].value;
    g.accumulate(ia, Matrix::Constant(A.rows(), A.cols(), self.grad(0, 0)));
  });
}

Var Graph::embedding(Var table, std::span<const int> ids) {
  const Matrix& T = node(table).value;
  Matrix out(static_cast<Eigen::Index>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table " +
                              shape_string(T));
    }
    out.row(static_cast<Eigen::Index>(i)) = T.row(ids[i]);
  }
  const std::size_t it = table.index_;
  std::vector<int> idv(ids.begin(), ids.end());
  return push("embedding", std::move(out), node(table).requires_grad,
              [it, idv = std::move(idv)](Graph& g, const Node& self) {
                Node& t = g.nodes_[it];
                if (!t.has_grad) {
                  t.grad = Matrix::Zero(t.value.rows(), t.value.cols());
                  t.has_grad = true;
                }
                for (std::size_t i = 0; i < idv.size(); ++i) {
                  t.grad.row(idv[i]) += self.grad.row(static_cast<Eigen::Index>(i));
                }
              });
}

Var Graph::softmax(Var a, bool causal) {
  const Matrix& A = node(a).value;
  if (causal && A.rows() > A.cols()) {
    throw ShapeError("softmax: causal mask needs cols >= rows, got " + shape_string(A));
  }
  Matrix out = Matrix::Zero(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const Eigen::Index width = causal ? r + 1 : A.cols();
    const double mx = A.row(r).head(width).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < width; ++c) {
      out(r, c) = std::exp(A(r, c) - mx);
      total += out(r, c);
    }
    out.row(r).head(width) /= total;
  }
  const std::size_t ia = a.index_;
  return push("softmax", std::move(out), node(a).requires_grad, [ia](Graph& g, const Node& self) {
    const Matrix& Y = self.value;
    // dx = y * (dy - <dy, y>) per row; masked entries have y = 0.
    Matrix gx = Y.cwiseProduct(self.grad);
    const Eigen::VectorXd dots = gx.rowwise().sum();
    gx -= Y.cwiseProduct(dots.replicate(1, Y.cols()));
    g.accumulate(ia, gx);
  });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& X = node(x).value;
  const Matrix& G = node(gain).value;
  const Matrix& B = node(bias).value;
  if (G.rows() != 1 || G.cols() != X.cols()) throw shape_error("layer_norm(gain)", X, G);
  if (B.rows() != 1 || B.cols() != X.cols()) throw shape_error("layer_norm(bias)", X, B);
  const Eigen::Index n = X.cols();
  Matrix xhat(X.rows(), X.cols());
  Eigen::VectorXd inv_std(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mean = X.row(r).mean();
    const double var = (X.row(r).array() - mean).square().sum() / static_cast<double>(n);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  const bool rg = node(x).requires_grad || node(gain).requires_grad || node(bias).requires_grad;
  const std::size_t ix = x.index_, igain = gain.index_, ib = bias.index_;
  return push("layer_norm", std::move(out), rg,
              [ix, igain, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                  Graph& g, const Node& self) {
                const Matrix& G = g.nodes_[igain].value;
                if (g.nodes_[igain].requires_grad) {
                  g.accumulate(igain, self.grad.cwiseProduct(xhat).colwise().sum());
                }
                if (g.nodes_[ib].requires_grad) g.accumulate(ib, self.grad.colwise().sum());
                if (!g.nodes_[ix].requires_grad) return;
                const auto cols = static_cast<double>(xhat.cols());
                Matrix dxhat = self.grad.array().rowwise() * G.row(0).array();
                Matrix dx(xhat.rows(), xhat.cols());
                for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                  const double mean_d = dxhat.row(r).sum() / cols;
                  const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / cols;
                  dx.row(r) = (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx) *
                              inv_std(r);
                }
                g.accumulate(ix, dx);
              });
}

Var Graph::activation(Var x, Activation kind) {
  const Matrix& X = node(x).value;
  Matrix out = X.unaryExpr([kind](double v) { return activate(kind, v); });
  const std::size_t ix = x.index_;
  return push("activation", std::move(out), node(x).requires_grad,
              [ix, kind](Graph& g, const Node& self) {
                const Matrix& Xv = g.nodes_[ix].value;
                Matrix d = Xv.unaryExpr([kind](double v) { return activate_derivative(kind, v); });
                g.accumulate(ix, d.cwiseProduct(self.grad));
              });
}

Var Graph::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Eigen::Index rows = node(parts[0]).value.rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    const Matrix& P = node(p).value;
    if (P.rows() != rows) throw shape_error("concat", node(parts[0]).value, P);
    cols += P.cols();
    rg = rg || node(p).requires_grad;
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> idx;
  Eigen::Index offset = 0;
  for (Var p : parts) {
    const Matrix& P = node(p).value;
    out.middleCols(offset, P.cols()) = P;
    offset += P.cols();
    idx.push_back(p.index_);
  }
  return push("concat", std::move(out), rg, [idx = std::move(idx)](Graph& g, const Node& self) {
    Eigen::Index off = 0;
    for (std::size_t i : idx) {
      const Eigen::Index w = g.nodes_[i].value.cols();
      if (g.nodes_[i].requires_grad) g.accumulate(i, self.grad.middleCols(off, w));
      off += w;
    }
  });
}

Var Graph::slice(Var a, std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols) {
  const Matrix& A = node(a).value;
  if (row0 + rows > static_cast<std::size_t>(A.rows()) ||
      col0 + cols > static_cast<std::size_t>(A.cols())) {
    throw ShapeError("slice: rows [" + std::to_string(row0) + "," + std::to_string(row0 + rows) +
                     ") cols [" + std::to_string(col0) + "," + std::to_string(col0 + cols) +
                     ") outside " + shape_string(A));
  }
  Matrix out = A.block(static_cast<Eigen::Index>(row0), static_cast<Eigen::Index>(col0),
                       static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const std::size_t ia = a.index_;
  return push("slice", std::move(out), node(a).requires_grad,
              [ia, row0, col0](Graph& g, const Node& self) {
                g.accumulate_block(ia, row0, col0, self.grad);
              });
}

Var Graph::transpose(Var a) {
  const std::size_t ia = a.index_;
  Matrix out = node(a).value.transpose();
  return push("transpose", std::move(out), node(a).requires_grad,
              [ia](Graph& g, const Node& self) { g.accumulate(ia, self.grad.transpose()); });
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets, std::span<const double> mask,
                         std::optional<double> denominator) {
  const Matrix& L = node(logits).value;
  const auto rows = static_cast<std::size_t>(L.rows());
  if (targets.size() != rows || mask.size() != rows) {
    throw ShapeError("cross_entropy: logits " + shape_string(L) + " vs " +
                     std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                     " mask entries");
  }
  double denom = 0.0;
  for (double m : mask) denom += m;
  if (denominator) denom = *denominator;

  Matrix probs = Matrix::Zero(L.rows(), L.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask[r] == 0.0) continue;
    if (targets[r] < 0 || targets[r] >= L.cols()) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) +
                              " outside " + std::to_string(L.cols()) + " classes");
    }
    const auto ri = static_cast<Eigen::Index>(r);
    const double mx = L.row(ri).maxCoeff();
    const double lse = mx + std::log((L.row(ri).array() - mx).exp().sum());
    total += mask[r] * (lse - L(ri, targets[r]));
    probs.row(ri) = (L.row(ri).array() - lse).exp();
  }
  Matrix out(1, 1);
  out(0, 0) = denom == 0.0 ? 0.0 : total / denom;

  const std::size_t il = logits.index_;
  std::vector<int> tv(targets.begin(), targets.end());
  std::vector<double> mv(mask.begin(), mask.end());
  return push("cross_entropy", std::move(out), node(logits).requires_grad,
              [il, denom, probs = std::move(probs), tv = std::move(tv), mv = std::move(mv)](
                  Graph& g, const Node& self) {
                Matrix gl = Matrix::Zero(probs.rows(), probs.cols());
                if (denom != 0.0) {
                  const double upstream = self.grad(0, 0) / denom;
                  for (std::size_t r = 0; r < mv.size(); ++r) {
                    if (mv[r] == 0.0) continue;
                    const auto ri = static_cast<Eigen::Index>(r);
                    gl.row(ri) = probs.row(ri) * (mv[r] * upstream);
                    gl(ri, tv[r]) -= mv[r] * upstream;
                  }
                }
                g.accumulate(il, gl);
              });
}

Matrix Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  return Matrix::Zero(n.value.rows(), n.value.cols());
}

void Graph::backward(Var root) {
  const Node& r = node(root);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + shape_string(r.value));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  if (!r.requires_grad) return;
  accumulate(root.index_, Matrix::Ones(1, 1));
  for (std::size_t i = root.index_ + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.requires_grad && n.has_grad && n.backward) n.backward(*this, n);
  }
}

std::optional<Matrix> Graph::param_grad(const Parameter& p) const {
  const auto it = param_leaves_.find(&p);
  if (it == param_leaves_.end()) return std::nullopt;
  Matrix total = Matrix::Zero(p.value.rows(), p.value.cols());
  for (std::size_t i : it->second) {
    if (nodes_[i].has_grad) total += nodes_[i].grad;
  }
  return total;
}

GradCheckReport grad_check(const ParamFunction& f, std::span<Parameter* const> params, double eps,
                           double tol) {
  GradCheckReport report;
  std::vector<Matrix> analytic;
  {
    Graph g;
    const Var out = f(g);
    if (g.value(out).rows() != 1 || g.value(out).cols() != 1) {
      throw ShapeError("grad_check: function output must be scalar, got " +
                       shape_string(g.value(out)));
    }
    g.backward(out);
    for (Parameter* p : params) {
      auto pg = g.param_grad(*p);
      analytic.push_back(pg ? std::move(*pg) : Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  const auto evaluate = [&f]() {
    Graph g;
    return g.value(f(g))(0, 0);
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Matrix numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = evaluate();
      x = saved - eps;
      const double down = evaluate();
      x = saved;
      numeric.data()[i] = (up - down) / (2.0 * eps);
    }
    const Matrix& a = analytic[k];
    const double max_abs = (a - numeric).cwiseAbs().maxCoeff();
    const double scale = std::max(a.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
    const double rel = scale > 0.0 ? max_abs / scale : 0.0;
    report.entries.push_back({p.name, rel, max_abs});
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

GradCheckReport grad_check(const InputFunction& f, std::vector<Matrix> inputs, double eps, double tol) {
  std::vector<Parameter> params;
  params.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    params.push_back({"input" + std::to_string(i), std::move(inputs[i])});
  }
  std::vector<Parameter*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  return grad_check(
      [&](Graph& g) {
        std::vector<Var> vars;
        for (auto& p : params) vars.push_back(g.param(p));
        return f(g, vars);
      },
      ptrs, eps, tol);
}

}  // namespace rhymelm::ad
