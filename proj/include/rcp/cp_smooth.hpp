#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcp/cp.hpp"
#include "rcp/matrix.hpp"
#include "rcp/tape.hpp"

namespace rcp::smooth {

// Hyper-parameters of the differentiable CP relaxations.
struct SmoothConfig {
  double tau = 1.0;     // sigmoid temperature
  double kappa = 1.0;   // set-size allowance subtracted before the hinge
  double lambda = 1.0;  // conformity-loss weight
  double alpha = 0.05;  // target miscoverage

  void validate() const {
    if (tau < 1e-3 || tau > 10.0) {
      throw std::invalid_argument("SmoothConfig: tau " + std::to_string(tau) +
                                  " outside [1e-3, 10]");
    }
    if (kappa != 0.0 && kappa != 1.0) {
      throw std::invalid_argument("SmoothConfig: kappa must be 0 or 1");
    }
    if (lambda < 0.0) throw std::invalid_argument("SmoothConfig: lambda must be >= 0");
    if (alpha <= 0.0 || alpha >= 1.0) {
      throw std::invalid_argument("SmoothConfig: alpha must lie in (0,1)");
    }
  }
};

namespace detail {

// Constant K x K matrix whose row k is all ones: P * broadcast_col(k)
// replicates column k of P across all columns.
inline NodeId broadcast_col(Tape& tape, std::size_t k_classes, std::size_t k) {
  Matrix b(k_classes, k_classes, 0.0);
  for (std::size_t c = 0; c < k_classes; ++c) b(k, c) = 1.0;
  return tape.constant(b);
}

inline NodeId unit_row(Tape& tape, std::size_t k_classes, std::size_t k) {
  Matrix e(1, k_classes, 0.0);
  e(0, k) = 1.0;
  return tape.constant(e);
}

inline NodeId ones_col(Tape& tape, std::size_t n) { return tape.constant(Matrix::ones(n, 1)); }
inline NodeId ones_row(Tape& tape, std::size_t n) { return tape.constant(Matrix::ones(1, n)); }

}  // namespace detail

// Smooth rank scores (all classes at once): out[i][k] =
// sum_j sigmoid((P[i][j] - P[i][k]) / tau). In the tau -> 0 limit this is the
// hard descending rank of class k minus one half.
inline NodeId smooth_rank_scores(Tape& tape, NodeId probs, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("smooth_rank_scores: tau must be positive");
  const std::size_t n = tape.value(probs).rows();
  const std::size_t k_classes = tape.value(probs).cols();
  const NodeId sum_cols = detail::ones_col(tape, k_classes);
  NodeId out = tape.constant(Matrix::zeros(n, k_classes));
  for (std::size_t k = 0; k < k_classes; ++k) {
    const NodeId col_k = tape.matmul(probs, detail::broadcast_col(tape, k_classes, k));
    const NodeId diff = tape.subtract(probs, col_k);
    const NodeId sig = tape.sigmoid(tape.divide_by_constant(diff, tau));
    const NodeId score_col = tape.matmul(sig, sum_cols);  // n x 1
    out = tape.add(out, tape.matmul(score_col, detail::unit_row(tape, k_classes, k)));
  }
  return out;
}

// Differentiable APS scores (all classes): out[i][k] =
// sum_j sigmoid((P[i][k] - P[i][j]) / tau) * P[i][j]. The tau -> 0 limit is
// the ascending cumulative sum: probabilities strictly below P[i][k] plus
// half of P[i][k] itself, so classes with HIGH scores belong to the set.
inline NodeId smooth_aps_scores(Tape& tape, NodeId probs, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("smooth_aps_scores: tau must be positive");
  const std::size_t n = tape.value(probs).rows();
  const std::size_t k_classes = tape.value(probs).cols();
  const NodeId sum_cols = detail::ones_col(tape, k_classes);
  NodeId out = tape.constant(Matrix::zeros(n, k_classes));
  for (std::size_t k = 0; k < k_classes; ++k) {
    const NodeId col_k = tape.matmul(probs, detail::broadcast_col(tape, k_classes, k));
    const NodeId diff = tape.subtract(col_k, probs);
    const NodeId sig = tape.sigmoid(tape.divide_by_constant(diff, tau));
    const NodeId weighted = tape.multiply(sig, probs);
    const NodeId score_col = tape.matmul(weighted, sum_cols);
    out = tape.add(out, tape.matmul(score_col, detail::unit_row(tape, k_classes, k)));
  }
  return out;
}

// Picks each row's true-label entry out of a per-class score matrix; the
// column vector of V(x_i, y_i) values.
inline NodeId scores_at_labels(Tape& tape, NodeId scores, const std::vector<std::size_t>& labels) {
  const std::size_t n = tape.value(scores).rows();
  const std::size_t k_classes = tape.value(scores).cols();
  if (labels.size() != n) {
    throw std::invalid_argument("scores_at_labels: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  }
  Matrix onehot(n, k_classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k_classes) {
      throw std::invalid_argument("scores_at_labels: label " + std::to_string(labels[i]) +
                                  " out of range");
    }
    onehot(i, labels[i]) = 1.0;
  }
  return tape.matmul(tape.multiply(scores, tape.constant(onehot)),
                     detail::ones_col(tape, k_classes));
}

// Differentiable quantile: soft ascending ranks via pairwise sigmoids, a
// triangular kernel centered on the soft rank of the hard order statistic
// (ceil(level*n) - 1/2), and a weight-normalized sum. Exact for constant
// inputs; converges to the ceil(level*n)-th smallest score as tau -> 0.
inline NodeId smooth_quantile(Tape& tape, NodeId scores, double level, double tau) {
  if (level <= 0.0 || level > 1.0) {
    throw std::invalid_argument("smooth_quantile: level " + std::to_string(level) +
                                " outside (0,1]");
  }
  if (tau <= 0.0) throw std::invalid_argument("smooth_quantile: tau must be positive");
  const Matrix& v = tape.value(scores);
  if (v.rows() == 0 || v.cols() != 1) {
    throw std::invalid_argument("smooth_quantile: scores must be a non-empty column, got " +
                                v.shape_str());
  }
  const std::size_t n = v.rows();
  const double target = static_cast<double>(cp::detail::ceil_index(level * n)) - 0.5;

  const NodeId spread = tape.matmul(scores, detail::ones_row(tape, n));  // [i][j] = s_i
  const NodeId diff = tape.subtract(spread, tape.transpose(spread));    // s_i - s_j
  const NodeId ranks =
      tape.matmul(tape.sigmoid(tape.divide_by_constant(diff, tau)), detail::ones_col(tape, n));

  const NodeId centered = tape.subtract(ranks, tape.constant(Matrix(n, 1, target)));
  const NodeId distance =
      tape.add(tape.max_with_zero(centered), tape.max_with_zero(tape.scale_by_constant(centered, -1.0)));
  NodeId weights =
      tape.max_with_zero(tape.subtract(tape.constant(Matrix::ones(n, 1)), distance));
  weights = tape.add(weights, tape.constant(Matrix(n, 1, 1e-12)));

  const NodeId wt = tape.transpose(weights);
  const NodeId num = tape.matmul(wt, scores);
  const NodeId den = tape.matmul(wt, detail::ones_col(tape, n));
  return tape.divide(num, den);
}

// Soft set size per row: c_i = max(0, sum_k sigmoid(s*(eta - V[i][k])/tau) - kappa)
// with s = +1 when low scores are in the set (RANK, hard APS) and s = -1 for
// high-score-in-set families (THR, the smooth APS limit).
inline NodeId soft_set_size(Tape& tape, NodeId scores, NodeId threshold, double tau, double kappa,
                            bool in_set_when_low) {
  if (tau <= 0.0) throw std::invalid_argument("soft_set_size: tau must be positive");
  const Matrix& tv = tape.value(threshold);
  if (tv.rows() != 1 || tv.cols() != 1) {
    throw std::invalid_argument("soft_set_size: threshold must be 1x1, got " + tv.shape_str());
  }
  const std::size_t n = tape.value(scores).rows();
  const std::size_t k_classes = tape.value(scores).cols();
  const NodeId eta_col = tape.matmul(detail::ones_col(tape, n), threshold);       // n x 1
  const NodeId eta_full = tape.matmul(eta_col, detail::ones_row(tape, k_classes));  // n x K
  const NodeId diff =
      in_set_when_low ? tape.subtract(eta_full, scores) : tape.subtract(scores, eta_full);
  const NodeId membership = tape.sigmoid(tape.divide_by_constant(diff, tau));
  const NodeId sizes = tape.matmul(membership, detail::ones_col(tape, k_classes));
  return tape.max_with_zero(
      tape.subtract(sizes, tape.constant(Matrix(n, 1, kappa))));
}

// Conformity loss: mean soft size over the fold, scaled by 1/K.
inline NodeId conformity_loss(Tape& tape, NodeId soft_sizes, std::size_t k_classes) {
  const Matrix& v = tape.value(soft_sizes);
  if (v.rows() == 0) throw std::invalid_argument("conformity_loss: empty fold");
  if (k_classes == 0) throw std::invalid_argument("conformity_loss: K must be positive");
  return tape.scale_by_constant(tape.mean_all(soft_sizes), 1.0 / static_cast<double>(k_classes));
}

// L = L_pred + lambda * L_cp.
inline NodeId total_loss(Tape& tape, NodeId l_pred, NodeId l_cp, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be >= 0");
  return tape.add(l_pred, tape.scale_by_constant(l_cp, lambda));
}

}  // namespace rcp::smooth
