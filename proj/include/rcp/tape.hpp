#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rcp/matrix.hpp"

namespace rcp {

using NodeId = std::size_t;

// Operation tags accepted by Tape::forward. Beyond the core set, four tags
// (transpose, elementwise-multiply, elementwise-divide, elementwise-log) are
// needed to express cross-entropy, score products and quantile normalization
// as tape programs.
enum class OpTag {
  kConstant,
  kParameter,
  kMatMul,
  kAdd,
  kSubtract,
  kScaleByConstant,
  kDivideByConstant,
  kRowSoftmax,
  kElementwiseSigmoid,
  kRelu,
  kMaxWithZero,  // same kernel as relu; kept as a distinct accepted tag
  kMeanAll,
  kSumAll,
  kGatherRows,
  kTranspose,
  kElementwiseMultiply,
  kElementwiseDivide,
  kElementwiseLog,
};

inline const char* op_name(OpTag op) {
  switch (op) {
    case OpTag::kConstant: return "constant";
    case OpTag::kParameter: return "parameter";
    case OpTag::kMatMul: return "matmul";
    case OpTag::kAdd: return "add";
    case OpTag::kSubtract: return "subtract";
    case OpTag::kScaleByConstant: return "scale-by-constant";
    case OpTag::kDivideByConstant: return "divide-by-constant";
    case OpTag::kRowSoftmax: return "row-softmax";
    case OpTag::kElementwiseSigmoid: return "elementwise-sigmoid";
    case OpTag::kRelu: return "relu";
    case OpTag::kMaxWithZero: return "max-with-zero";
    case OpTag::kMeanAll: return "mean-all";
    case OpTag::kSumAll: return "sum-all";
    case OpTag::kGatherRows: return "gather-rows";
    case OpTag::kTranspose: return "transpose";
    case OpTag::kElementwiseMultiply: return "elementwise-multiply";
    case OpTag::kElementwiseDivide: return "elementwise-divide";
    case OpTag::kElementwiseLog: return "elementwise-log";
  }
  return "?";
}

// Reverse-mode differentiation record over dense matrices. Nodes are appended
// in topological order; values are immutable once appended (grad_check, which
// perturbs leaf values and replays the tape, is the documented exception).
// A Tape is single-threaded; distinct Tapes may live on distinct threads.
class Tape {
 public:
  struct Node {
    OpTag op;
    std::vector<NodeId> inputs;
    Matrix value;
    Matrix grad;
    double attr = 0.0;                 // scale/divide constant
    std::vector<std::size_t> row_ids;  // gather-rows selection
  };

  NodeId constant(Matrix value) { return append(OpTag::kConstant, {}, std::move(value)); }

  NodeId parameter(Matrix value) {
    NodeId id = append(OpTag::kParameter, {}, std::move(value));
    params_.push_back(id);
    return id;
  }

  // Generic entry point: appends the op applied to existing nodes.
  NodeId forward(OpTag op, const std::vector<NodeId>& inputs, double attr = 0.0,
                 std::vector<std::size_t> row_ids = {}) {
    for (NodeId id : inputs) {
      if (id >= nodes_.size()) {
        throw std::invalid_argument(std::string(op_name(op)) + ": input node id " +
                                    std::to_string(id) + " not on tape");
      }
    }
    Matrix value = eval(op, inputs, attr, row_ids);
    Node node{op, inputs, std::move(value), Matrix(), attr, std::move(row_ids)};
    node.grad = Matrix::zeros(node.value.rows(), node.value.cols());
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  NodeId matmul(NodeId a, NodeId b) { return forward(OpTag::kMatMul, {a, b}); }
  NodeId add(NodeId a, NodeId b) { return forward(OpTag::kAdd, {a, b}); }
  NodeId subtract(NodeId a, NodeId b) { return forward(OpTag::kSubtract, {a, b}); }
  NodeId scale_by_constant(NodeId a, double c) { return forward(OpTag::kScaleByConstant, {a}, c); }
  NodeId divide_by_constant(NodeId a, double c) {
    return forward(OpTag::kDivideByConstant, {a}, c);
  }
  NodeId row_softmax(NodeId a) { return forward(OpTag::kRowSoftmax, {a}); }
  NodeId sigmoid(NodeId a) { return forward(OpTag::kElementwiseSigmoid, {a}); }
  NodeId relu(NodeId a) { return forward(OpTag::kRelu, {a}); }
  NodeId max_with_zero(NodeId a) { return forward(OpTag::kMaxWithZero, {a}); }
  NodeId mean_all(NodeId a) { return forward(OpTag::kMeanAll, {a}); }
  NodeId sum_all(NodeId a) { return forward(OpTag::kSumAll, {a}); }
  NodeId gather_rows(NodeId a, std::vector<std::size_t> ids) {
    return forward(OpTag::kGatherRows, {a}, 0.0, std::move(ids));
  }
  NodeId transpose(NodeId a) { return forward(OpTag::kTranspose, {a}); }
  NodeId multiply(NodeId a, NodeId b) { return forward(OpTag::kElementwiseMultiply, {a, b}); }
  NodeId divide(NodeId a, NodeId b) { return forward(OpTag::kElementwiseDivide, {a, b}); }
  NodeId log(NodeId a) { return forward(OpTag::kElementwiseLog, {a}); }

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(NodeId id) const { return nodes_.at(id).value; }
  const Matrix& grad(NodeId id) const { return nodes_.at(id).grad; }
  const std::vector<NodeId>& parameters() const { return params_; }

  double scalar_value(NodeId id) const {
    const Matrix& v = value(id);
    if (v.rows() != 1 || v.cols() != 1) {
      throw std::invalid_argument("scalar_value: node is " + v.shape_str() + ", expected 1x1");
    }
    return v(0, 0);
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad.fill(0.0);
  }

  // Reverse accumulation from a scalar loss node. Populates the gradient of
  // every node the loss reaches; others keep their zeroed gradients.
  void backward(NodeId loss) {
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw std::invalid_argument("backward: loss node is " + lv.shape_str() + ", expected 1x1");
    }
    nodes_[loss].grad(0, 0) += 1.0;
    for (std::size_t idx = loss + 1; idx-- > 0;) {
      propagate(idx);
    }
  }

  // Re-runs every non-leaf forward in tape order (leaf values as currently
  // stored). Used by grad_check and by tests that replay a perturbed tape.
  void recompute() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.op == OpTag::kConstant || n.op == OpTag::kParameter) continue;
      n.value = eval(n.op, n.inputs, n.attr, n.row_ids);
    }
  }

  void set_leaf_value(NodeId id, std::size_t i, std::size_t j, double v) {
    Node& n = nodes_.at(id);
    if (n.op != OpTag::kConstant && n.op != OpTag::kParameter) {
      throw std::invalid_argument("set_leaf_value: node is not a leaf");
    }
    n.value(i, j) = v;
  }

  // Max over parameter entries of |analytic - central difference| over
  // max(1, |central difference|), replaying the tape at +/- h per entry.
  double grad_check(NodeId loss, double h) {
    if (h <= 0.0) throw std::invalid_argument("grad_check: step h must be positive");
    zero_grad();
    backward(loss);
    std::vector<Matrix> analytic;
    analytic.reserve(params_.size());
    for (NodeId p : params_) analytic.push_back(nodes_[p].grad);

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Node& p = nodes_[params_[pi]];
      for (std::size_t i = 0; i < p.value.rows(); ++i) {
        for (std::size_t j = 0; j < p.value.cols(); ++j) {
          const double saved = p.value(i, j);
          p.value(i, j) = saved + h;
          recompute();
          const double up = scalar_value(loss);
          p.value(i, j) = saved - h;
          recompute();
          const double down = scalar_value(loss);
          p.value(i, j) = saved;
          const double central = (up - down) / (2.0 * h);
          const double err = std::abs(analytic[pi](i, j) - central) /
                             std::max(1.0, std::abs(central));
          worst = std::max(worst, err);
        }
      }
    }
    recompute();
    return worst;
  }

 private:
  NodeId append(OpTag op, std::vector<NodeId> inputs, Matrix value) {
    Node node{op, std::move(inputs), std::move(value), Matrix(), 0.0, {}};
    node.grad = Matrix::zeros(node.value.rows(), node.value.cols());
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  const Matrix& in(const std::vector<NodeId>& inputs, std::size_t k) const {
    return nodes_[inputs[k]].value;
  }

  void want_inputs(OpTag op, const std::vector<NodeId>& inputs, std::size_t n) const {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
    }
  }

  Matrix eval(OpTag op, const std::vector<NodeId>& inputs, double attr,
              const std::vector<std::size_t>& row_ids) const {
    switch (op) {
      case OpTag::kConstant:
      case OpTag::kParameter:
        throw std::invalid_argument("forward: leaf tags need constant()/parameter()");
      case OpTag::kMatMul:
        want_inputs(op, inputs, 2);
        return rcp::matmul(in(inputs, 0), in(inputs, 1));
      case OpTag::kAdd:
        want_inputs(op, inputs, 2);
        return rcp::add(in(inputs, 0), in(inputs, 1));
      case OpTag::kSubtract:
        want_inputs(op, inputs, 2);
        return rcp::subtract(in(inputs, 0), in(inputs, 1));
      case OpTag::kScaleByConstant:
        want_inputs(op, inputs, 1);
        return rcp::scale(in(inputs, 0), attr);
      case OpTag::kDivideByConstant:
        want_inputs(op, inputs, 1);
        return rcp::divide_by_constant(in(inputs, 0), attr);
      case OpTag::kRowSoftmax:
        want_inputs(op, inputs, 1);
        return rcp::row_softmax(in(inputs, 0));
      case OpTag::kElementwiseSigmoid:
        want_inputs(op, inputs, 1);
        return rcp::elementwise_sigmoid(in(inputs, 0));
      case OpTag::kRelu:
      case OpTag::kMaxWithZero:
        want_inputs(op, inputs, 1);
        return rcp::relu(in(inputs, 0));
      case OpTag::kMeanAll:
        want_inputs(op, inputs, 1);
        return rcp::mean_all(in(inputs, 0));
      case OpTag::kSumAll:
        want_inputs(op, inputs, 1);
        return rcp::sum_all(in(inputs, 0));
      case OpTag::kGatherRows:
        want_inputs(op, inputs, 1);
        return rcp::gather_rows(in(inputs, 0), row_ids);
      case OpTag::kTranspose:
        want_inputs(op, inputs, 1);
        return rcp::transpose(in(inputs, 0));
      case OpTag::kElementwiseMultiply:
        want_inputs(op, inputs, 2);
        return rcp::elementwise_multiply(in(inputs, 0), in(inputs, 1));
      case OpTag::kElementwiseDivide:
        want_inputs(op, inputs, 2);
        return rcp::elementwise_divide(in(inputs, 0), in(inputs, 1));
      case OpTag::kElementwiseLog:
        want_inputs(op, inputs, 1);
        return rcp::elementwise_log(in(inputs, 0));
    }
    throw std::invalid_argument("forward: unknown op tag");
  }

  // Adds dC routed through node idx into its inputs' gradients.
  void propagate(std::size_t idx) {
    Node& n = nodes_[idx];
    const Matrix& g = n.grad;
    switch (n.op) {
      case OpTag::kConstant:
      case OpTag::kParameter:
        return;
      case OpTag::kMatMul: {
        Node& a = nodes_[n.inputs[0]];
        Node& b = nodes_[n.inputs[1]];
        accumulate(a.grad, rcp::matmul_a_bt(g, b.value));   // dA = dC B^T
        accumulate(b.grad, rcp::matmul_at_b(a.value, g));   // dB = A^T dC
        return;
      }
      case OpTag::kAdd: {
        accumulate(nodes_[n.inputs[0]].grad, g);
        accumulate_maybe_broadcast(nodes_[n.inputs[1]].grad, g, 1.0);
        return;
      }
      case OpTag::kSubtract: {
        accumulate(nodes_[n.inputs[0]].grad, g);
        accumulate_maybe_broadcast(nodes_[n.inputs[1]].grad, g, -1.0);
        return;
      }
      case OpTag::kScaleByConstant:
        accumulate(nodes_[n.inputs[0]].grad, rcp::scale(g, n.attr));
        return;
      case OpTag::kDivideByConstant:
        accumulate(nodes_[n.inputs[0]].grad, rcp::scale(g, 1.0 / n.attr));
        return;
      case OpTag::kRowSoftmax: {
        const Matrix& y = n.value;
        Matrix dx(y.rows(), y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (g(i, j) - dot);
        }
        accumulate(nodes_[n.inputs[0]].grad, dx);
        return;
      }
      case OpTag::kElementwiseSigmoid: {
        const Matrix& y = n.value;
        Matrix dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i)
          dx.data()[i] *= y.data()[i] * (1.0 - y.data()[i]);
        accumulate(nodes_[n.inputs[0]].grad, dx);
        return;
      }
      case OpTag::kRelu:
      case OpTag::kMaxWithZero: {
        // one-sided subgradient: 0 at the hinge
        const Matrix& x = nodes_[n.inputs[0]].value;
        Matrix dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (x.data()[i] <= 0.0) dx.data()[i] = 0.0;
        accumulate(nodes_[n.inputs[0]].grad, dx);
        return;
      }
      case OpTag::kMeanAll: {
        Node& a = nodes_[n.inputs[0]];
        const double w = g(0, 0) / static_cast<double>(a.value.size());
        for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad.data()[i] += w;
        return;
      }
      case OpTag::kSumAll: {
        Node& a = nodes_[n.inputs[0]];
        const double w = g(0, 0);
        for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad.data()[i] += w;
        return;
      }
      case OpTag::kGatherRows: {
        Node& a = nodes_[n.inputs[0]];
        for (std::size_t i = 0; i < n.row_ids.size(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) a.grad(n.row_ids[i], j) += g(i, j);
        return;
      }
      case OpTag::kTranspose:
        accumulate(nodes_[n.inputs[0]].grad, rcp::transpose(g));
        return;
      case OpTag::kElementwiseMultiply: {
        Node& a = nodes_[n.inputs[0]];
        Node& b = nodes_[n.inputs[1]];
        accumulate(a.grad, rcp::elementwise_multiply(g, b.value));
        accumulate(b.grad, rcp::elementwise_multiply(g, a.value));
        return;
      }
      case OpTag::kElementwiseDivide: {
        Node& a = nodes_[n.inputs[0]];
        Node& b = nodes_[n.inputs[1]];
        Matrix da = rcp::elementwise_divide(g, b.value);
        accumulate(a.grad, da);
        Matrix db = rcp::elementwise_multiply(da, n.value);  // -g*a/b^2 = -(g/b)*c
        accumulate(b.grad, rcp::scale(db, -1.0));
        return;
      }
      case OpTag::kElementwiseLog: {
        const Matrix& x = nodes_[n.inputs[0]].value;
        Matrix dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const double xv = x.data()[i] < detail::kLogFloor ? detail::kLogFloor : x.data()[i];
          dx.data()[i] /= xv;
        }
        accumulate(nodes_[n.inputs[0]].grad, dx);
        return;
      }
    }
  }

  static void accumulate(Matrix& into, const Matrix& g) {
    for (std::size_t i = 0; i < into.size(); ++i) into.data()[i] += g.data()[i];
  }

  // Handles gradients for the row-vector broadcast in add/subtract.
  static void accumulate_maybe_broadcast(Matrix& into, const Matrix& g, double sign) {
    if (into.rows() == g.rows() && into.cols() == g.cols()) {
      for (std::size_t i = 0; i < into.size(); ++i) into.data()[i] += sign * g.data()[i];
      return;
    }
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) into(0, j) += sign * g(i, j);
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
};

}  // namespace rcp
