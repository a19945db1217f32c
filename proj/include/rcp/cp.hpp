#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcp/matrix.hpp"
#include "rcp/rng.hpp"

namespace rcp::cp {

// THR admits classes whose score is high; APS and RANK admit classes whose
// score is low.
enum class ScoreKind { kThr, kAps, kRank };

inline const char* score_kind_name(ScoreKind k) {
  switch (k) {
    case ScoreKind::kThr: return "thr";
    case ScoreKind::kAps: return "aps";
    case ScoreKind::kRank: return "rank";
  }
  return "?";
}

inline bool in_set_when_low(ScoreKind k) { return k != ScoreKind::kThr; }

// Rank direction is descending everywhere (rank 1 = largest). Ties break by
// smaller index; the seeded-random mode exists for exchangeability-sensitive
// tests where deterministic ties would bias coverage.
struct TiePolicy {
  enum class Mode { kSmallerIndex, kSeededRandom };
  Mode mode = Mode::kSmallerIndex;
  std::uint64_t seed = 0;
};

namespace detail {

// floor/ceil with a nudge so index arithmetic like floor((n+1)*alpha) behaves
// as exact rational arithmetic.
inline std::size_t floor_index(double x) {
  return static_cast<std::size_t>(std::floor(x + 1e-9));
}
inline std::size_t ceil_index(double x) {
  return static_cast<std::size_t>(std::ceil(x - 1e-9));
}

inline std::vector<std::uint64_t> tie_keys(const TiePolicy& tie, std::uint64_t stream,
                                           std::size_t n) {
  std::vector<std::uint64_t> keys(n);
  if (tie.mode == TiePolicy::Mode::kSmallerIndex) {
    for (std::size_t i = 0; i < n; ++i) keys[i] = i;
  } else {
    Rng rng(derive_seed(tie.seed, stream, 0));
    for (std::size_t i = 0; i < n; ++i) keys[i] = rng.raw();
  }
  return keys;
}

// 1-based descending rank of values[k] among values, ties ordered by key.
inline std::size_t descending_rank(std::span<const double> values,
                                   const std::vector<std::uint64_t>& keys, std::size_t k) {
  std::size_t rank = 1;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (j == k) continue;
    if (values[j] > values[k] || (values[j] == values[k] && keys[j] < keys[k])) ++rank;
  }
  return rank;
}

// Indices of the row ordered by value descending (ties by key ascending).
inline std::vector<std::size_t> descending_order(std::span<const double> values,
                                                 const std::vector<std::uint64_t>& keys) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return keys[a] < keys[b];
  });
  return idx;
}

inline std::span<const double> row_span(const Matrix& m, std::size_t i) {
  return {m.row(i), m.cols()};
}

inline void check_class(std::span<const double> row, std::size_t k) {
  if (k >= row.size()) {
    throw std::invalid_argument("class " + std::to_string(k) + " out of range for K=" +
                                std::to_string(row.size()));
  }
}

}  // namespace detail

// THR conformity score: the raw class probability.
inline double score_thr(std::span<const double> probs_row, std::size_t k) {
  detail::check_class(probs_row, k);
  return probs_row[k];
}

// APS conformity score: cumulative sum of descending-sorted probabilities
// through class k's sorted position.
inline double score_aps(std::span<const double> probs_row, std::size_t k,
                        const TiePolicy& tie = {}, std::uint64_t row_stream = 0) {
  detail::check_class(probs_row, k);
  const auto keys = detail::tie_keys(tie, row_stream, probs_row.size());
  const auto order = detail::descending_order(probs_row, keys);
  double cum = 0.0;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    cum += probs_row[order[pos]];
    if (order[pos] == k) return cum;
  }
  return cum;  // unreachable
}

// RANK conformity scores on the calibration set: in-row descending rank of
// the true-class probability minus one, plus (1/n) times its descending rank
// within the true class's column across calibration nodes. The 1/n scaling
// keeps the cross-calibration rank a tie-break; scores lie in [1/n, K-1+1].
inline std::vector<double> score_rank_calib(const Matrix& probs,
                                            const std::vector<std::size_t>& labels,
                                            const TiePolicy& tie = {}) {
  const std::size_t n = probs.rows();
  if (n == 0) throw std::invalid_argument("score_rank_calib: empty calibration set");
  if (labels.size() != n) {
    throw std::invalid_argument("score_rank_calib: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  }
  const std::size_t k_classes = probs.cols();
  std::vector<double> scores(n);
  // cross-node ranks are computed per class column
  std::vector<double> column(n);
  std::vector<std::vector<double>> columns(k_classes, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k_classes; ++c) columns[c][i] = probs(i, c);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = labels[i];
    detail::check_class(detail::row_span(probs, i), y);
    const auto row_keys = detail::tie_keys(tie, 0x1000 + i, k_classes);
    const std::size_t row_rank = detail::descending_rank(detail::row_span(probs, i), row_keys, y);
    const auto col_keys = detail::tie_keys(tie, 0x2000 + y, n);
    const std::size_t col_rank =
        detail::descending_rank(std::span<const double>(columns[y]), col_keys, i);
    scores[i] = static_cast<double>(row_rank - 1) +
                static_cast<double>(col_rank) / static_cast<double>(n);
  }
  return scores;
}

// Split-CP threshold with the finite-sample correction. THR and APS take the
// ceil(level*n)-th smallest score at levels alpha(1+1/n) and
// (1-alpha)(1+1/n); RANK takes the floor((n+1)alpha)-th largest score.
inline double calibrate_threshold(std::vector<double> scores, double alpha, ScoreKind kind) {
  const std::size_t n = scores.size();
  if (n == 0) throw std::invalid_argument("calibrate_threshold: no scores");
  if (alpha <= 0.0 || alpha >= 1.0) {
    throw std::invalid_argument("calibrate_threshold: alpha must lie in (0,1)");
  }
  std::sort(scores.begin(), scores.end());
  switch (kind) {
    case ScoreKind::kThr: {
      const std::size_t idx = detail::ceil_index(alpha * (n + 1));
      if (idx > n) {
        const std::size_t need = detail::ceil_index(alpha / (1.0 - alpha));
        throw std::invalid_argument("calibrate_threshold: corrected level exceeds 1; need n >= " +
                                    std::to_string(need) + ", got " + std::to_string(n));
      }
      return scores[idx - 1];
    }
    case ScoreKind::kAps: {
      const std::size_t idx = detail::ceil_index((1.0 - alpha) * (n + 1));
      if (idx > n) {
        const std::size_t need = detail::ceil_index((1.0 - alpha) / alpha);
        throw std::invalid_argument("calibrate_threshold: corrected level exceeds 1; need n >= " +
                                    std::to_string(need) + ", got " + std::to_string(n));
      }
      return scores[idx - 1];
    }
    case ScoreKind::kRank: {
      const std::size_t idx = detail::floor_index((n + 1) * alpha);
      if (idx < 1) {
        const std::size_t need = detail::ceil_index((1.0 - alpha) / alpha);
        throw std::invalid_argument("calibrate_threshold: floor((n+1)alpha) < 1; need n >= " +
                                    std::to_string(need) + ", got " + std::to_string(n));
      }
      return scores[n - idx];  // idx-th largest
    }
  }
  throw std::invalid_argument("calibrate_threshold: unknown kind");
}

// Fitted RANK calibration artifact: rank threshold r*, probability cutoff
// mu*, inclusion proportion p and the Eq.13 score quantile.
struct RankCalibration {
  std::size_t r_star = 1;
  double mu_star = std::numeric_limits<double>::infinity();  // +inf sentinel when p = 0
  double p = 0.0;
  double q_score = 0.0;
  std::size_t n_calib = 0;
};

namespace detail {

inline std::size_t kth_largest_index(std::size_t k) { return k - 1; }

// Per-node r-th order statistic (descending) of a probability row.
inline double row_order_statistic(std::span<const double> row, std::size_t r) {
  std::vector<double> v(row.begin(), row.end());
  std::sort(v.begin(), v.end(), std::greater<>());
  return v[r - 1];
}

}  // namespace detail

// Fits r*, p and mu* on calibration data. r* is the floor((n+1)alpha)-th
// largest per-node true-class rank. p is the smallest t/n whose cutoff
// mu* = t-th largest r*-th-order-statistic value makes the calibration
// replay of the branch rule cover at least ceil(n(1-alpha)) nodes; taking
// the minimal feasible t keeps every prediction set as small as the replay
// coverage target allows (t = n is always feasible).
inline RankCalibration fit_rank_calibration(const Matrix& probs,
                                            const std::vector<std::size_t>& labels, double alpha,
                                            const TiePolicy& tie = {}) {
  const std::size_t n = probs.rows();
  if (alpha <= 0.0 || alpha >= 1.0) {
    throw std::invalid_argument("fit_rank_calibration: alpha must lie in (0,1)");
  }
  const std::size_t m = (n == 0) ? 0 : detail::floor_index((n + 1) * alpha);
  if (m < 1) {
    throw std::invalid_argument("fit_rank_calibration: need n >= " +
                                std::to_string(detail::ceil_index(1.0 / alpha)) + ", got " +
                                std::to_string(n));
  }

  // per-node in-row ranks of the true class
  std::vector<std::size_t> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto keys = detail::tie_keys(tie, 0x1000 + i, probs.cols());
    ranks[i] = detail::descending_rank(detail::row_span(probs, i), keys, labels[i]);
  }
  std::vector<std::size_t> sorted_ranks = ranks;
  std::sort(sorted_ranks.begin(), sorted_ranks.end(), std::greater<>());
  const std::size_t r_star = sorted_ranks[m - 1];

  // r*-th order-statistic probability per node
  std::vector<double> cut_values(n);
  for (std::size_t i = 0; i < n; ++i) {
    cut_values[i] = detail::row_order_statistic(detail::row_span(probs, i), r_star);
  }
  std::vector<double> sorted_cuts = cut_values;
  std::sort(sorted_cuts.begin(), sorted_cuts.end(), std::greater<>());

  const std::size_t target = detail::ceil_index(static_cast<double>(n) * (1.0 - alpha));
  auto covered_with = [&](double mu_star) {
    std::size_t covered = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t top = (cut_values[i] >= mu_star) ? r_star : r_star - 1;
      if (ranks[i] <= top) ++covered;
    }
    return covered;
  };

  RankCalibration cal;
  cal.r_star = r_star;
  cal.n_calib = n;
  cal.mu_star = std::numeric_limits<double>::infinity();
  cal.p = 0.0;
  if (covered_with(cal.mu_star) < target) {
    for (std::size_t t = 1; t <= n; ++t) {
      const double candidate = sorted_cuts[t - 1];
      if (covered_with(candidate) >= target) {
        cal.mu_star = candidate;
        cal.p = static_cast<double>(t) / static_cast<double>(n);
        break;
      }
    }
  }
  cal.q_score = calibrate_threshold(score_rank_calib(probs, labels, tie), alpha, ScoreKind::kRank);
  return cal;
}

// Per-node boolean class-membership masks; a pure function of the calibrated
// threshold and probabilities.
struct PredictionSetBatch {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint8_t> masks;  // n x k, row-major
  double alpha = 0.0;

  bool contains(std::size_t i, std::size_t cls) const { return masks[i * k + cls] != 0; }
  std::size_t set_size(std::size_t i) const {
    std::size_t s = 0;
    for (std::size_t c = 0; c < k; ++c) s += masks[i * k + c];
    return s;
  }
};

// Carries either a plain threshold (THR/APS) or the RANK artifact.
struct Calibration {
  ScoreKind kind = ScoreKind::kThr;
  double threshold = 0.0;
  RankCalibration rank;

  static Calibration thr(double eta) {
    Calibration c;
    c.kind = ScoreKind::kThr;
    c.threshold = eta;
    return c;
  }
  static Calibration aps(double eta) {
    Calibration c;
    c.kind = ScoreKind::kAps;
    c.threshold = eta;
    return c;
  }
  static Calibration rank_based(RankCalibration r) {
    Calibration c;
    c.kind = ScoreKind::kRank;
    c.rank = r;
    return c;
  }
};

// Builds prediction sets for all rows. Empty sets (APS with a tiny threshold,
// RANK branch 2 at r* = 1) are emitted as-is unless force_top1 is set.
inline PredictionSetBatch build_sets(const Matrix& probs, const Calibration& cal, double alpha,
                                     const TiePolicy& tie = {}, bool force_top1 = false) {
  PredictionSetBatch batch;
  batch.n = probs.rows();
  batch.k = probs.cols();
  batch.alpha = alpha;
  batch.masks.assign(batch.n * batch.k, 0);

  for (std::size_t i = 0; i < batch.n; ++i) {
    const auto row = detail::row_span(probs, i);
    std::uint8_t* mask = batch.masks.data() + i * batch.k;
    switch (cal.kind) {
      case ScoreKind::kThr: {
        for (std::size_t c = 0; c < batch.k; ++c)
          mask[c] = (row[c] >= cal.threshold) ? 1 : 0;
        break;
      }
      case ScoreKind::kAps: {
        const auto keys = detail::tie_keys(tie, 0x3000 + i, batch.k);
        const auto order = detail::descending_order(row, keys);
        double cum = 0.0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
          cum += row[order[pos]];
          if (cum <= cal.threshold) mask[order[pos]] = 1;
        }
        break;
      }
      case ScoreKind::kRank: {
        const std::size_t r_star = cal.rank.r_star;
        const double cut = detail::row_order_statistic(row, r_star);
        const std::size_t top = (cut >= cal.rank.mu_star) ? r_star : r_star - 1;
        if (top > 0) {
          const auto keys = detail::tie_keys(tie, 0x3000 + i, batch.k);
          const auto order = detail::descending_order(row, keys);
          for (std::size_t pos = 0; pos < top; ++pos) mask[order[pos]] = 1;
        }
        break;
      }
    }
    if (force_top1) {
      bool empty = true;
      for (std::size_t c = 0; c < batch.k; ++c)
        if (mask[c]) empty = false;
      if (empty) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < batch.k; ++c)
          if (row[c] > row[best]) best = c;
        mask[best] = 1;
      }
    }
  }
  return batch;
}

// Fraction of nodes whose set contains the true label.
inline double coverage(const PredictionSetBatch& sets, const std::vector<std::size_t>& labels) {
  if (sets.n == 0) throw std::invalid_argument("coverage: empty batch");
  if (labels.size() != sets.n) {
    throw std::invalid_argument("coverage: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(sets.n) + " sets");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < sets.n; ++i)
    if (sets.contains(i, labels[i])) ++hit;
  return static_cast<double>(hit) / static_cast<double>(sets.n);
}

// Mean prediction-set size.
inline double inefficiency(const PredictionSetBatch& sets) {
  if (sets.n == 0) throw std::invalid_argument("inefficiency: empty batch");
  std::size_t total = 0;
  for (std::size_t i = 0; i < sets.n; ++i) total += sets.set_size(i);
  return static_cast<double>(total) / static_cast<double>(sets.n);
}

// CSV export: node_id,set_size,members,covered. members are ';'-joined class
// ids; covered is blank when no labels are supplied.
inline void export_sets_csv(const PredictionSetBatch& sets, const std::string& path,
                            const std::vector<std::size_t>* labels = nullptr) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write prediction-set file: " + path);
  out << "node_id,set_size,members,covered\n";
  for (std::size_t i = 0; i < sets.n; ++i) {
    out << i << "," << sets.set_size(i) << ",";
    bool first = true;
    for (std::size_t c = 0; c < sets.k; ++c) {
      if (sets.contains(i, c)) {
        out << (first ? "" : ";") << c;
        first = false;
      }
    }
    out << ",";
    if (labels) out << (sets.contains(i, (*labels)[i]) ? 1 : 0);
    out << "\n";
  }
}

}  // namespace rcp::cp
