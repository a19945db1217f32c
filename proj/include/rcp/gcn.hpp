#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rcp/graph.hpp"
#include "rcp/matrix.hpp"
#include "rcp/rng.hpp"
#include "rcp/tape.hpp"

namespace rcp::gcn {

// N x K row-stochastic class probabilities.
struct ProbMatrix {
  Matrix values;

  bool row_stochastic(double tol = 1e-9) const {
    for (std::size_t i = 0; i < values.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < values.cols(); ++j) {
        const double v = values(i, j);
        if (v <= 0.0 || v >= 1.0) return false;
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
  }
};

// Layer weights of a message-passing classifier. Layer l maps
// (adj * h) (n x in_l) through weights_l (in_l x out_l); the final layer ends
// in a row softmax, inner layers in relu.
struct GcnParams {
  std::vector<Matrix> layer_weights;
  std::size_t hidden_dim = 0;

  std::size_t n_layers() const { return layer_weights.size(); }

  void check_composes(std::size_t in_dim, std::size_t out_dim) const {
    if (layer_weights.empty()) throw std::invalid_argument("GcnParams: no layers");
    std::size_t d = in_dim;
    for (std::size_t l = 0; l < layer_weights.size(); ++l) {
      if (layer_weights[l].rows() != d) {
        throw std::invalid_argument("GcnParams: layer " + std::to_string(l) + " expects input " +
                                    std::to_string(layer_weights[l].rows()) + ", got " +
                                    std::to_string(d));
      }
      d = layer_weights[l].cols();
    }
    if (d != out_dim) {
      throw std::invalid_argument("GcnParams: final output dim " + std::to_string(d) +
                                  " != K = " + std::to_string(out_dim));
    }
  }
};

// Correction-model parameters: GCN layers plus a scalar gate on the
// log-probability residual. gate = 1, zero final layer reproduces the input
// distribution exactly; gate = 0, zero final layer gives uniform rows.
struct CorrectionParams {
  GcnParams gcn;
  Matrix residual_gate;  // 1 x 1

  CorrectionParams() : residual_gate(Matrix::scalar(0.0)) {}
};

inline Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) w(i, j) = rng.uniform(-limit, limit);
  return w;
}

inline GcnParams init_gcn_params(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                                 std::size_t n_layers, std::uint64_t seed) {
  if (n_layers == 0) throw std::invalid_argument("init_gcn_params: need at least one layer");
  Rng rng(seed);
  GcnParams p;
  p.hidden_dim = hidden;
  std::size_t d = in_dim;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t out = (l + 1 == n_layers) ? out_dim : hidden;
    p.layer_weights.push_back(glorot_uniform(d, out, rng));
    d = out;
  }
  return p;
}

// Near-identity start: inner layers small random, final layer zero, residual
// gate one, so softmax(0 + 1 * log mu) = mu at initialization.
inline CorrectionParams init_correction_params(std::size_t k_classes, std::size_t hidden,
                                               std::size_t n_layers, std::uint64_t seed) {
  CorrectionParams p;
  p.gcn = init_gcn_params(k_classes, hidden, k_classes, n_layers, seed);
  auto& final_w = p.gcn.layer_weights.back();
  final_w.fill(0.0);
  p.residual_gate = Matrix::scalar(1.0);
  return p;
}

// Tape forward of the base model: h <- relu(adj h W_l) per inner layer,
// row-softmax(adj h W_L) on the final layer.
inline NodeId forward_base(Tape& tape, NodeId adj, NodeId features,
                           const std::vector<NodeId>& weights) {
  if (weights.empty()) throw std::invalid_argument("forward_base: no layers");
  NodeId h = features;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = tape.matmul(tape.matmul(adj, h), weights[l]);
    h = (l + 1 == weights.size()) ? tape.row_softmax(h) : tape.relu(h);
  }
  return h;
}

// Tape forward of the correction model: the base-model recipe on mu as input
// features, with gate * log(mu) added to the final-layer logits before the
// softmax. mu enters as a constant node, so gradients reach correction
// parameters only.
inline NodeId forward_correction(Tape& tape, NodeId adj, NodeId mu,
                                 const std::vector<NodeId>& weights, NodeId residual_gate) {
  if (weights.empty()) throw std::invalid_argument("forward_correction: no layers");
  const std::size_t n = tape.value(mu).rows();
  const std::size_t k_classes = tape.value(mu).cols();
  NodeId h = mu;
  for (std::size_t l = 0; l + 1 < weights.size(); ++l) {
    h = tape.relu(tape.matmul(tape.matmul(adj, h), weights[l]));
  }
  NodeId logits = tape.matmul(tape.matmul(adj, h), weights.back());
  const NodeId gate_col = tape.matmul(tape.constant(Matrix::ones(n, 1)), residual_gate);
  const NodeId gate_full = tape.matmul(gate_col, tape.constant(Matrix::ones(1, k_classes)));
  const NodeId residual = tape.multiply(tape.log(mu), gate_full);
  return tape.row_softmax(tape.add(logits, residual));
}

// Values-only forwards share the matrix kernels with the tape path, so both
// routes produce bit-identical probabilities.
inline Matrix forward_base_values(const Matrix& adj, const Matrix& features,
                                  const GcnParams& params) {
  Matrix h = features;
  for (std::size_t l = 0; l < params.layer_weights.size(); ++l) {
    h = matmul(matmul(adj, h), params.layer_weights[l]);
    h = (l + 1 == params.layer_weights.size()) ? row_softmax(h) : relu(h);
  }
  return h;
}

inline Matrix forward_correction_values(const Matrix& adj, const Matrix& mu,
                                        const CorrectionParams& params) {
  Matrix h = mu;
  const auto& w = params.gcn.layer_weights;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) h = relu(matmul(matmul(adj, h), w[l]));
  Matrix logits = matmul(matmul(adj, h), w.back());
  const double gate = params.residual_gate(0, 0);
  Matrix residual = scale(elementwise_log(mu), gate);
  return row_softmax(add(logits, residual));
}

// Multiclass cross-entropy -mean(log p[y]) over the given rows.
inline NodeId cross_entropy(Tape& tape, NodeId probs, const std::vector<std::size_t>& rows,
                            const std::vector<std::size_t>& labels) {
  if (rows.empty()) throw std::invalid_argument("cross_entropy: empty row set");
  const std::size_t k_classes = tape.value(probs).cols();
  Matrix onehot(rows.size(), k_classes, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) onehot(i, labels[rows[i]]) = 1.0;
  const NodeId picked = tape.gather_rows(probs, rows);
  const NodeId ll = tape.multiply(tape.log(picked), tape.constant(onehot));
  return tape.scale_by_constant(tape.sum_all(ll), -1.0 / static_cast<double>(rows.size()));
}

inline double accuracy(const Matrix& probs, const std::vector<std::size_t>& rows,
                       const std::vector<std::size_t>& labels) {
  if (rows.empty()) throw std::invalid_argument("accuracy: empty row set");
  std::size_t hit = 0;
  for (std::size_t r : rows) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c)
      if (probs(r, c) > probs(r, best)) best = c;
    if (best == labels[r]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(rows.size());
}

struct TrainConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::size_t epochs = 200;
  std::size_t hidden = 64;
  std::size_t n_layers = 2;
  std::uint64_t seed = 1;
};

// SGD-with-momentum step shared by both trainers.
inline void momentum_step(std::vector<Matrix>& weights, std::vector<Matrix>& velocity,
                          const std::vector<const Matrix*>& grads, double lr, double momentum) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Matrix& v = velocity[i];
    Matrix& w = weights[i];
    const Matrix& g = *grads[i];
    for (std::size_t e = 0; e < w.size(); ++e) {
      v.data()[e] = momentum * v.data()[e] - lr * g.data()[e];
      w.data()[e] += v.data()[e];
    }
  }
}

// Trains the base model with full-batch gradient descent plus momentum on
// the training cross-entropy; returns the epoch checkpoint with the best
// validation accuracy (earlier epoch wins ties; epochs = 0 returns the
// initialization). Deterministic under seed.
inline GcnParams train_base(const Graph& g, const Matrix& adj, const NodeSplit& split,
                            const TrainConfig& cfg) {
  if (split.train.empty() || split.valid.empty()) {
    throw std::invalid_argument("train_base: train and valid sets must be non-empty");
  }
  GcnParams params =
      init_gcn_params(g.feature_dim(), cfg.hidden, g.n_classes, cfg.n_layers, cfg.seed);
  if (cfg.epochs == 0) return params;
  GcnParams best = params;
  double best_acc = accuracy(forward_base_values(adj, g.features, params), split.valid, g.labels);

  std::vector<Matrix> velocity;
  for (const auto& w : params.layer_weights) velocity.push_back(Matrix::zeros(w.rows(), w.cols()));

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Tape tape;
    const NodeId adj_node = tape.constant(adj);
    const NodeId feat_node = tape.constant(g.features);
    std::vector<NodeId> weight_nodes;
    for (const auto& w : params.layer_weights) weight_nodes.push_back(tape.parameter(w));
    const NodeId probs = forward_base(tape, adj_node, feat_node, weight_nodes);
    const NodeId loss = cross_entropy(tape, probs, split.train, g.labels);
    const double loss_value = tape.scalar_value(loss);
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("train_base: loss diverged (non-finite) at epoch " +
                               std::to_string(epoch));
    }
    tape.backward(loss);
    std::vector<const Matrix*> grads;
    for (NodeId w : weight_nodes) grads.push_back(&tape.grad(w));
    momentum_step(params.layer_weights, velocity, grads, cfg.learning_rate, cfg.momentum);

    const double acc =
        accuracy(forward_base_values(adj, g.features, params), split.valid, g.labels);
    if (acc > best_acc) {
      best_acc = acc;
      best = params;
    }
  }
  return best;
}

// Checkpoint format: "gcn_params,layers=<L>,hidden=<h>,gate=<0|1>", then per
// matrix a "matrix,rows=<r>,cols=<c>" header and r CSV rows. %.17g keeps the
// round trip bit-exact.
inline void save_matrices(std::ofstream& out, const std::vector<const Matrix*>& mats) {
  char buf[40];
  for (const Matrix* m : mats) {
    out << "matrix,rows=" << m->rows() << ",cols=" << m->cols() << "\n";
    for (std::size_t i = 0; i < m->rows(); ++i) {
      for (std::size_t j = 0; j < m->cols(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", (*m)(i, j));
        out << (j ? "," : "") << buf;
      }
      out << "\n";
    }
  }
}

inline Matrix load_matrix(std::ifstream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing matrix header");
  std::size_t rows = 0, cols = 0;
  if (std::sscanf(line.c_str(), "matrix,rows=%zu,cols=%zu", &rows, &cols) != 2) {
    throw std::runtime_error(path + ": bad matrix header '" + line + "'");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error(path + ": truncated matrix");
    std::stringstream ss(line);
    std::string field;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!std::getline(ss, field, ',')) throw std::runtime_error(path + ": short matrix row");
      m(i, j) = std::stod(field);
    }
  }
  return m;
}

inline void save_params(const GcnParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << "gcn_params,layers=" << params.n_layers() << ",hidden=" << params.hidden_dim
      << ",gate=0\n";
  std::vector<const Matrix*> mats;
  for (const auto& w : params.layer_weights) mats.push_back(&w);
  save_matrices(out, mats);
}

inline void save_params(const CorrectionParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << "gcn_params,layers=" << params.gcn.n_layers() << ",hidden=" << params.gcn.hidden_dim
      << ",gate=1\n";
  std::vector<const Matrix*> mats;
  for (const auto& w : params.gcn.layer_weights) mats.push_back(&w);
  mats.push_back(&params.residual_gate);
  save_matrices(out, mats);
}

inline std::pair<GcnParams, Matrix> load_params_any(const std::string& path, bool* has_gate) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty checkpoint");
  std::size_t layers = 0, hidden = 0;
  int gate = 0;
  if (std::sscanf(line.c_str(), "gcn_params,layers=%zu,hidden=%zu,gate=%d", &layers, &hidden,
                  &gate) != 3) {
    throw std::runtime_error(path + ": bad checkpoint header '" + line + "'");
  }
  GcnParams p;
  p.hidden_dim = hidden;
  for (std::size_t l = 0; l < layers; ++l) p.layer_weights.push_back(load_matrix(in, path));
  Matrix gate_m = Matrix::scalar(0.0);
  if (gate) gate_m = load_matrix(in, path);
  if (has_gate) *has_gate = (gate != 0);
  return {std::move(p), std::move(gate_m)};
}

inline GcnParams load_base_params(const std::string& path) {
  bool has_gate = false;
  auto [p, gate] = load_params_any(path, &has_gate);
  if (has_gate) throw std::runtime_error(path + ": expected a base checkpoint without gate");
  return p;
}

inline CorrectionParams load_correction_params(const std::string& path) {
  bool has_gate = false;
  auto [p, gate] = load_params_any(path, &has_gate);
  if (!has_gate) throw std::runtime_error(path + ": expected a correction checkpoint with gate");
  CorrectionParams c;
  c.gcn = std::move(p);
  c.residual_gate = std::move(gate);
  return c;
}

}  // namespace rcp::gcn
