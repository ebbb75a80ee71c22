#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rhymelm::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { kGelu, kRelu, kTanh };

Activation parse_activation(std::string_view text);
std::string_view to_string(Activation a);

double activate(Activation kind, double x);
double activate_derivative(Activation kind, double x);

// A named trainable tensor. Gradients live in the Graph, not here, so several
// graphs may read the same parameters at once.
struct Parameter {
  std::string name;
  Matrix value;
};

// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  std::size_t index() const { return index_; }

 private:
  friend class Graph;
  explicit Var(std::size_t i) : index_(i) {}
  std::size_t index_ = static_cast<std::size_t>(-1);
};

// Reverse-mode tape over 2-D matrices. Nodes are recorded in execution order
// and backward() visits them in exact reverse; gradients reaching a node from
// several consumers are summed.
class Graph {
 public:
  // In checked mode every forward value is tested for NaN/Inf and the first
  // offending op throws NonFiniteError.
  explicit Graph(bool checked = true) : checked_(checked) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Matrix value, bool requires_grad = false);
  Var param(const Parameter& p);

  Var matmul(Var a, Var b);
  // Same shape, or b a single row broadcast over a's rows.
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var sum(Var a);
  // Gathers rows of `table`.
  Var embedding(Var table, std::span<const int> ids);
  // Row-wise softmax. With `causal`, entry (q, p) for p > q is exactly 0.
  Var softmax(Var a, bool causal = false);
  // Row-wise normalization followed by gain and bias (1 x cols each).
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var activation(Var x, Activation kind);
  // Concatenation along the last axis.
  Var concat(std::span<const Var> parts);
  Var slice(Var a, std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols);
  Var transpose(Var a);
  // sum_i mask_i * (-log softmax(logits_i)[target_i]) / denominator, where the
  // denominator defaults to sum(mask). A zero denominator yields loss 0.
  Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> mask,
                    std::optional<double> denominator = std::nullopt);

  const Matrix& value(Var v) const { return node(v).value; }
  // Gradient after backward(); a zero matrix if nothing flowed into v.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // `root` must be 1 x 1.
  void backward(Var root);

  // Sum of gradients over every leaf created from `p`; empty if p was unused.
  std::optional<Matrix> param_grad(const Parameter& p) const;

  std::size_t size() const { return nodes_.size(); }
  bool checked() const { return checked_; }

 private:
  struct Node {
    const char* op = "";
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Graph&, const Node&)> backward;
  };

  const Node& node(Var v) const;
  Var push(const char* op, Matrix value, bool requires_grad,
           std::function<void(Graph&, const Node&)> backward = {});
  void accumulate(std::size_t index, const Matrix& g);
  void accumulate_block(std::size_t index, std::size_t row0, std::size_t col0, const Matrix& g);

  bool checked_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::vector<std::size_t>> param_leaves_;
};

std::string shape_string(const Matrix& m);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;  // max |a - n| / max(max|a|, max|n|) over the tensor
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Builds a scalar (1 x 1) from the parameters on a fresh graph.
using ParamFunction = std::function<Var(Graph&)>;

// Compares analytic gradients against central differences
// (f(x + eps) - f(x - eps)) / (2 eps), perturbing every entry of every
// parameter in turn. Parameters are restored before returning.
GradCheckReport grad_check(const ParamFunction& f, std::span<Parameter* const> params, double eps,
                           double tol);

using InputFunction = std::function<Var(Graph&, std::span<const Var>)>;

GradCheckReport grad_check(const InputFunction& f, std::vector<Matrix> inputs, double eps, double tol);

}  // namespace rhymelm::ad
