#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rcp/cp.hpp"
#include "rcp/cp_smooth.hpp"
#include "rcp/gcn.hpp"
#include "rcp/graph.hpp"
#include "rcp/matrix.hpp"
#include "rcp/rng.hpp"
#include "rcp/tape.hpp"

namespace rcp::pipeline {

// RCP-GNN is the full method; the ablations swap the smooth score family
// (RCP-THR, RCP-APS) or drop the conformity loss (w/o Conf.Tr., lambda = 0).
enum class Variant { kRcpGnn, kRcpThr, kRcpAps, kNoConfTr };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kRcpGnn: return "rcp-gnn";
    case Variant::kRcpThr: return "rcp-thr";
    case Variant::kRcpAps: return "rcp-aps";
    case Variant::kNoConfTr: return "no-conf-tr";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "rcp-gnn") return Variant::kRcpGnn;
  if (s == "rcp-thr") return Variant::kRcpThr;
  if (s == "rcp-aps") return Variant::kRcpAps;
  if (s == "no-conf-tr") return Variant::kNoConfTr;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

// Final hard-CP score kind matching each training variant.
inline cp::ScoreKind variant_eval_kind(Variant v) {
  switch (v) {
    case Variant::kRcpThr: return cp::ScoreKind::kThr;
    case Variant::kRcpAps: return cp::ScoreKind::kAps;
    default: return cp::ScoreKind::kRank;
  }
}

struct ExperimentConfig {
  // dataset: either the three ingestion files or a generated SBM
  bool use_files = false;
  std::string feature_file, edge_file, label_file;
  std::vector<std::size_t> sbm_blocks = {250, 250, 250, 250};
  double sbm_p_in = 0.15;
  double sbm_p_out = 0.02;
  std::size_t sbm_feature_dim = 8;
  double sbm_feature_noise = 1.0;
  std::uint64_t sbm_seed = 7;

  // node splits
  double train_ratio = 0.2;
  double valid_ratio = 0.1;
  double calib_fraction = 0.5;    // of the rest pool
  double withheld_fraction = 0.5; // of D_calib, withheld for final evaluation

  // base model
  gcn::TrainConfig base;

  // correction model
  std::size_t cor_hidden = 16;
  std::size_t cor_layers = 2;
  double cor_learning_rate = 1e-2;
  double cor_momentum = 0.9;
  std::size_t cor_epochs = 100;

  // differentiable CP
  smooth::SmoothConfig smoothing;

  // protocol
  cp::ScoreKind score = cp::ScoreKind::kRank;
  Variant variant = Variant::kRcpGnn;
  std::size_t n_runs = 1;
  std::size_t n_splits_per_run = 100;
  std::uint64_t seed = 1;
  bool force_top1 = false;
  std::size_t jobs = 1;

  void validate() const {
    smoothing.validate();
    if (n_runs < 1) throw std::invalid_argument("config: runs must be >= 1");
    if (n_splits_per_run < 1) throw std::invalid_argument("config: splits must be >= 1");
    if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
    if (train_ratio <= 0.0 || valid_ratio <= 0.0 || train_ratio + valid_ratio >= 1.0) {
      throw std::invalid_argument("config: train/valid ratios must be positive and sum below 1");
    }
    if (calib_fraction <= 0.0 || calib_fraction >= 1.0) {
      throw std::invalid_argument("config: calib_fraction must lie in (0,1)");
    }
    if (withheld_fraction < 0.0 || withheld_fraction >= 1.0) {
      throw std::invalid_argument("config: withheld_fraction must lie in [0,1)");
    }
  }
};

struct MetricsRecord {
  std::size_t run = 0;
  std::size_t split = 0;
  cp::ScoreKind score = cp::ScoreKind::kRank;
  double alpha = 0.0;
  double coverage = 0.0;
  double inefficiency = 0.0;
};

struct SummaryRow {
  cp::ScoreKind score;
  double alpha;
  std::size_t n_runs;
  std::size_t n_splits;
  double coverage_mean, coverage_sd;
  double ineff_mean, ineff_sd;
};

namespace detail {

// seed-derivation streams
inline constexpr std::uint64_t kRunStream = 1;
inline constexpr std::uint64_t kSplitStream = 2;
inline constexpr std::uint64_t kBaseStream = 3;
inline constexpr std::uint64_t kPoolStream = 4;
inline constexpr std::uint64_t kInitStream = 5;
inline constexpr std::uint64_t kFoldStream = 6;
inline constexpr std::uint64_t kValStream = 7;
inline constexpr std::uint64_t kEvalStream = 8;

inline std::vector<std::size_t> labels_at(const std::vector<std::size_t>& labels,
                                          const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
  return out;
}

inline double population_sd(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace detail

// Conformal-training pool (half of D_calib, re-split every epoch) and the
// held-out evaluation pool (the withheld half of D_calib plus the test set).
struct Pools {
  std::vector<std::size_t> conf_pool;
  std::vector<std::size_t> eval_pool;
};

inline Pools make_pools(const NodeSplit& split, double withheld_fraction, std::uint64_t seed) {
  Pools pools;
  std::vector<std::size_t> calib = split.calib;
  Rng rng(seed);
  rng.shuffle(calib);
  const std::size_t n_withheld =
      static_cast<std::size_t>(std::floor(calib.size() * withheld_fraction));
  pools.eval_pool.assign(calib.begin(), calib.begin() + n_withheld);
  pools.conf_pool.assign(calib.begin() + n_withheld, calib.end());
  pools.eval_pool.insert(pools.eval_pool.end(), split.test.begin(), split.test.end());
  std::sort(pools.eval_pool.begin(), pools.eval_pool.end());
  std::sort(pools.conf_pool.begin(), pools.conf_pool.end());
  return pools;
}

// Fits the hard calibration of the requested kind on the given rows.
inline cp::Calibration fit_calibration(const Matrix& probs, const std::vector<std::size_t>& rows,
                                       const std::vector<std::size_t>& labels, double alpha,
                                       cp::ScoreKind kind, const cp::TiePolicy& tie = {}) {
  if (rows.empty()) throw std::invalid_argument("fit_calibration: empty calibration rows");
  switch (kind) {
    case cp::ScoreKind::kThr: {
      std::vector<double> scores(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        scores[i] = cp::score_thr({probs.row(rows[i]), probs.cols()}, labels[rows[i]]);
      }
      return cp::Calibration::thr(cp::calibrate_threshold(scores, alpha, kind));
    }
    case cp::ScoreKind::kAps: {
      std::vector<double> scores(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        scores[i] = cp::score_aps({probs.row(rows[i]), probs.cols()}, labels[rows[i]], tie, rows[i]);
      }
      return cp::Calibration::aps(cp::calibrate_threshold(scores, alpha, kind));
    }
    case cp::ScoreKind::kRank: {
      const Matrix sub = gather_rows(probs, rows);
      return cp::Calibration::rank_based(
          cp::fit_rank_calibration(sub, detail::labels_at(labels, rows), alpha, tie));
    }
  }
  throw std::invalid_argument("fit_calibration: unknown kind");
}

// Repeated-split final evaluation: hard CP only. Rejects any overlap between
// the evaluation pool and nodes consumed by conformal training.
inline std::vector<MetricsRecord> evaluate(const Matrix& probs,
                                           const std::vector<std::size_t>& labels,
                                           const std::vector<std::size_t>& eval_pool,
                                           const std::vector<std::size_t>& training_fold_nodes,
                                           cp::ScoreKind kind, double alpha,
                                           std::size_t n_splits, std::size_t run_id,
                                           std::uint64_t run_seed, bool force_top1 = false,
                                           const cp::TiePolicy& tie = {}) {
  if (eval_pool.size() < 2) throw std::invalid_argument("evaluate: evaluation pool too small");
  std::set<std::size_t> guard(training_fold_nodes.begin(), training_fold_nodes.end());
  for (std::size_t node : eval_pool) {
    if (guard.count(node)) {
      throw std::invalid_argument("evaluate: node " + std::to_string(node) +
                                  " appears in both the evaluation pool and a training fold");
    }
  }
  std::vector<MetricsRecord> records;
  records.reserve(n_splits);
  for (std::size_t s = 0; s < n_splits; ++s) {
    std::vector<std::size_t> pool = eval_pool;
    Rng rng(derive_seed(run_seed, detail::kEvalStream, s));
    rng.shuffle(pool);
    const std::size_t n_cal = pool.size() / 2;
    const std::vector<std::size_t> cal(pool.begin(), pool.begin() + n_cal);
    const std::vector<std::size_t> te(pool.begin() + n_cal, pool.end());

    const cp::Calibration calibration = fit_calibration(probs, cal, labels, alpha, kind, tie);
    const Matrix te_probs = gather_rows(probs, te);
    const cp::PredictionSetBatch sets =
        cp::build_sets(te_probs, calibration, alpha, tie, force_top1);
    MetricsRecord rec;
    rec.run = run_id;
    rec.split = s;
    rec.score = kind;
    rec.alpha = alpha;
    rec.coverage = cp::coverage(sets, detail::labels_at(labels, te));
    rec.inefficiency = cp::inefficiency(sets);
    records.push_back(rec);
  }
  return records;
}

namespace detail {

// Smooth calibration scores, per-class test scores, quantile level and
// membership orientation for one variant's training step.
struct SmoothBranch {
  NodeId calib_scores;
  NodeId test_scores;
  double level;
  bool in_set_when_low;
};

inline SmoothBranch build_smooth_branch(Tape& tape, Variant variant, NodeId probs_cal,
                                        NodeId probs_te,
                                        const std::vector<std::size_t>& cal_labels, double tau,
                                        double alpha) {
  const std::size_t n_cal = tape.value(probs_cal).rows();
  SmoothBranch branch{};
  switch (variant) {
    case Variant::kRcpGnn:
    case Variant::kNoConfTr: {
      // RANK: low scores in set; Eq.15's alpha(1+1/n) level counts from the
      // top, so the smallest-convention quantile takes the complementary
      // index n+1-floor((n+1)alpha).
      const std::size_t idx_largest = cp::detail::floor_index((n_cal + 1) * alpha);
      branch.level = static_cast<double>(n_cal + 1 - idx_largest) / static_cast<double>(n_cal);
      branch.in_set_when_low = true;
      const NodeId cal_all = smooth::smooth_rank_scores(tape, probs_cal, tau);
      branch.calib_scores = smooth::scores_at_labels(tape, cal_all, cal_labels);
      branch.test_scores = smooth::smooth_rank_scores(tape, probs_te, tau);
      return branch;
    }
    case Variant::kRcpThr: {
      branch.level = alpha * (1.0 + 1.0 / static_cast<double>(n_cal));
      branch.in_set_when_low = false;  // THR admits high scores
      branch.calib_scores = smooth::scores_at_labels(tape, probs_cal, cal_labels);
      branch.test_scores = probs_te;
      return branch;
    }
    case Variant::kRcpAps: {
      // Eq.A1's tau -> 0 limit is the ascending cumulative sum, so high
      // scores are in-set and the level matches THR's.
      branch.level = alpha * (1.0 + 1.0 / static_cast<double>(n_cal));
      branch.in_set_when_low = false;
      const NodeId cal_all = smooth::smooth_aps_scores(tape, probs_cal, tau);
      branch.calib_scores = smooth::scores_at_labels(tape, cal_all, cal_labels);
      branch.test_scores = smooth::smooth_aps_scores(tape, probs_te, tau);
      return branch;
    }
  }
  throw std::invalid_argument("build_smooth_branch: unknown variant");
}

}  // namespace detail

// Conformal training of the correction model (Fig.1(b) stage): per epoch the
// conformal pool is re-split 50/50 into calibration/prediction folds, the
// smooth CP loss is assembled on the tape and one momentum step is taken on
// correction parameters only. Returns the epoch checkpoint with the best
// validation objective (combined loss, hard RANK inefficiency tiebreak).
inline gcn::CorrectionParams run_conformal_training(
    const ExperimentConfig& cfg, const Graph& g, const Matrix& adj, const NodeSplit& split,
    const Matrix& base_probs, const std::vector<std::size_t>& conf_pool, std::uint64_t run_seed,
    std::vector<gcn::CorrectionParams>* trajectory = nullptr) {
  const double alpha = cfg.smoothing.alpha;
  const double tau = cfg.smoothing.tau;
  const double lambda = (cfg.variant == Variant::kNoConfTr) ? 0.0 : cfg.smoothing.lambda;

  const std::size_t min_fold = cp::detail::ceil_index(1.0 / alpha);
  if (lambda > 0.0 && conf_pool.size() / 2 < min_fold) {
    throw std::invalid_argument("run_conformal_training: fold of " +
                                std::to_string(conf_pool.size() / 2) + " nodes is smaller than " +
                                std::to_string(min_fold) + " = ceil(1/alpha)");
  }

  gcn::CorrectionParams params = gcn::init_correction_params(
      g.n_classes, cfg.cor_hidden, cfg.cor_layers, derive_seed(run_seed, detail::kInitStream, 0));
  if (cfg.cor_epochs == 0) return params;

  std::vector<Matrix> velocity;
  for (const auto& w : params.gcn.layer_weights)
    velocity.push_back(Matrix::zeros(w.rows(), w.cols()));
  velocity.push_back(Matrix::zeros(1, 1));  // residual gate

  // fixed validation folds for the epoch-selection objective
  std::vector<std::size_t> val_pool = split.valid;
  {
    Rng rng(derive_seed(run_seed, detail::kValStream, 0));
    rng.shuffle(val_pool);
    std::sort(val_pool.begin(), val_pool.begin() + val_pool.size() / 2);
    std::sort(val_pool.begin() + val_pool.size() / 2, val_pool.end());
  }
  const std::vector<std::size_t> val_cal(val_pool.begin(), val_pool.begin() + val_pool.size() / 2);
  const std::vector<std::size_t> val_te(val_pool.begin() + val_pool.size() / 2, val_pool.end());

  gcn::CorrectionParams best = params;
  double best_obj = std::numeric_limits<double>::infinity();
  double best_tiebreak = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.cor_epochs; ++epoch) {
    // fresh folds from the conformal pool
    std::vector<std::size_t> pool = conf_pool;
    Rng fold_rng(derive_seed(run_seed, detail::kFoldStream, epoch));
    fold_rng.shuffle(pool);
    const std::size_t n_cal = pool.size() / 2;
    std::vector<std::size_t> d_cal(pool.begin(), pool.begin() + n_cal);
    std::vector<std::size_t> d_te(pool.begin() + n_cal, pool.end());

    Tape tape;
    const NodeId adj_node = tape.constant(adj);
    const NodeId mu_node = tape.constant(base_probs);
    std::vector<NodeId> weight_nodes;
    for (const auto& w : params.gcn.layer_weights) weight_nodes.push_back(tape.parameter(w));
    const NodeId gate_node = tape.parameter(params.residual_gate);
    const NodeId mu_tilde = gcn::forward_correction(tape, adj_node, mu_node, weight_nodes, gate_node);

    const NodeId l_pred = gcn::cross_entropy(tape, mu_tilde, split.train, g.labels);
    NodeId loss = l_pred;
    if (lambda > 0.0) {
      const NodeId probs_cal = tape.gather_rows(mu_tilde, d_cal);
      const NodeId probs_te = tape.gather_rows(mu_tilde, d_te);
      const auto branch = detail::build_smooth_branch(
          tape, cfg.variant, probs_cal, probs_te, detail::labels_at(g.labels, d_cal), tau, alpha);
      const NodeId eta = smooth::smooth_quantile(tape, branch.calib_scores, branch.level, tau);
      const NodeId sizes = smooth::soft_set_size(tape, branch.test_scores, eta, tau,
                                                 cfg.smoothing.kappa, branch.in_set_when_low);
      const NodeId l_cp = smooth::conformity_loss(tape, sizes, g.n_classes);
      loss = smooth::total_loss(tape, l_pred, l_cp, lambda);
    }

    const double loss_value = tape.scalar_value(loss);
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("run_conformal_training: loss diverged at epoch " +
                               std::to_string(epoch));
    }
    tape.backward(loss);
    std::vector<Matrix*> weights;
    std::vector<const Matrix*> grads;
    for (std::size_t i = 0; i < weight_nodes.size(); ++i) {
      weights.push_back(&params.gcn.layer_weights[i]);
      grads.push_back(&tape.grad(weight_nodes[i]));
    }
    weights.push_back(&params.residual_gate);
    grads.push_back(&tape.grad(gate_node));
    for (std::size_t i = 0; i < weights.size(); ++i) {
      Matrix& v = velocity[i];
      Matrix& w = *weights[i];
      const Matrix& grad = *grads[i];
      for (std::size_t e = 0; e < w.size(); ++e) {
        v.data()[e] = cfg.cor_momentum * v.data()[e] - cfg.cor_learning_rate * grad.data()[e];
        w.data()[e] += v.data()[e];
      }
    }

    // validation objective of the updated checkpoint
    const Matrix val_probs = gcn::forward_correction_values(adj, base_probs, params);
    double obj = 0.0;
    for (std::size_t r : split.valid) {
      const double p = std::max(val_probs(r, g.labels[r]), rcp::detail::kLogFloor);
      obj -= std::log(p);
    }
    obj /= static_cast<double>(split.valid.size());
    if (lambda > 0.0 && val_cal.size() >= min_fold) {
      Tape vt;
      const NodeId cal_node = vt.constant(gather_rows(val_probs, val_cal));
      const NodeId te_node = vt.constant(gather_rows(val_probs, val_te));
      const auto branch = detail::build_smooth_branch(
          vt, cfg.variant, cal_node, te_node, detail::labels_at(g.labels, val_cal), tau, alpha);
      const NodeId eta = smooth::smooth_quantile(vt, branch.calib_scores, branch.level, tau);
      const NodeId sizes = smooth::soft_set_size(vt, branch.test_scores, eta, tau,
                                                 cfg.smoothing.kappa, branch.in_set_when_low);
      obj += lambda * vt.scalar_value(smooth::conformity_loss(vt, sizes, g.n_classes));
    }
    double tiebreak = 0.0;
    if (val_cal.size() >= min_fold && !val_te.empty()) {
      try {
        const auto cal = fit_calibration(val_probs, val_cal, g.labels, alpha,
                                         variant_eval_kind(cfg.variant));
        tiebreak = cp::inefficiency(
            cp::build_sets(gather_rows(val_probs, val_te), cal, alpha));
      } catch (const std::invalid_argument&) {
        tiebreak = 0.0;  // validation fold too small for this alpha
      }
    }

    if (obj < best_obj || (obj == best_obj && tiebreak < best_tiebreak)) {
      best_obj = obj;
      best_tiebreak = tiebreak;
      best = params;
    }
    if (trajectory) trajectory->push_back(params);
  }
  return best;
}

// One full run of the two-stage protocol: split, base training, conformal
// training of the requested variant, repeated-split hard-CP evaluation.
inline std::vector<MetricsRecord> run_single(const ExperimentConfig& cfg, const Graph& g,
                                             const Matrix& adj, std::size_t run_id) {
  const std::uint64_t run_seed = derive_seed(cfg.seed, detail::kRunStream, run_id);
  const double rest_ratio = 1.0 - cfg.train_ratio - cfg.valid_ratio;
  const NodeSplit split =
      split_nodes(g, cfg.train_ratio, cfg.valid_ratio, rest_ratio, cfg.calib_fraction,
                  derive_seed(run_seed, detail::kSplitStream, 0));

  gcn::TrainConfig base_cfg = cfg.base;
  base_cfg.seed = derive_seed(run_seed, detail::kBaseStream, 0);
  const gcn::GcnParams base = gcn::train_base(g, adj, split, base_cfg);
  const Matrix mu = gcn::forward_base_values(adj, g.features, base);

  const Pools pools =
      make_pools(split, cfg.withheld_fraction, derive_seed(run_seed, detail::kPoolStream, 0));
  const gcn::CorrectionParams cor =
      run_conformal_training(cfg, g, adj, split, mu, pools.conf_pool, run_seed);
  const Matrix mu_tilde = gcn::forward_correction_values(adj, mu, cor);

  return evaluate(mu_tilde, g.labels, pools.eval_pool, pools.conf_pool, cfg.score,
                  cfg.smoothing.alpha, cfg.n_splits_per_run, run_id, run_seed, cfg.force_top1);
}

// Runs are independent; with jobs > 1 they execute on a small thread pool and
// results are still emitted in run order.
inline std::vector<MetricsRecord> run_experiment(const ExperimentConfig& cfg, const Graph& g,
                                                 const Matrix& adj) {
  cfg.validate();
  std::vector<std::vector<MetricsRecord>> per_run(cfg.n_runs);
  if (cfg.jobs <= 1 || cfg.n_runs == 1) {
    for (std::size_t r = 0; r < cfg.n_runs; ++r) per_run[r] = run_single(cfg, g, adj, r);
  } else {
    std::vector<std::thread> workers;
    std::size_t next = 0;
    std::mutex queue_mutex;
    const std::size_t n_workers = std::min(cfg.jobs, cfg.n_runs);
    for (std::size_t w = 0; w < n_workers; ++w) {
      workers.emplace_back([&]() {
        for (;;) {
          std::size_t r;
          {
            std::lock_guard<std::mutex> lock(queue_mutex);
            if (next >= cfg.n_runs) return;
            r = next++;
          }
          per_run[r] = run_single(cfg, g, adj, r);
        }
      });
    }
    for (auto& t : workers) t.join();
  }
  std::vector<MetricsRecord> all;
  for (auto& r : per_run) all.insert(all.end(), r.begin(), r.end());
  return all;
}

// Paired ablation study: each run trains the base model once and every
// variant's correction from the same derived seeds, so trajectories differ
// only through the loss wiring.
inline std::map<Variant, std::vector<MetricsRecord>> run_ablation(
    const ExperimentConfig& cfg, const Graph& g, const Matrix& adj,
    const std::vector<Variant>& variants) {
  cfg.validate();
  std::map<Variant, std::vector<MetricsRecord>> out;
  for (std::size_t r = 0; r < cfg.n_runs; ++r) {
    const std::uint64_t run_seed = derive_seed(cfg.seed, detail::kRunStream, r);
    const double rest_ratio = 1.0 - cfg.train_ratio - cfg.valid_ratio;
    const NodeSplit split =
        split_nodes(g, cfg.train_ratio, cfg.valid_ratio, rest_ratio, cfg.calib_fraction,
                    derive_seed(run_seed, detail::kSplitStream, 0));
    gcn::TrainConfig base_cfg = cfg.base;
    base_cfg.seed = derive_seed(run_seed, detail::kBaseStream, 0);
    const gcn::GcnParams base = gcn::train_base(g, adj, split, base_cfg);
    const Matrix mu = gcn::forward_base_values(adj, g.features, base);
    const Pools pools =
        make_pools(split, cfg.withheld_fraction, derive_seed(run_seed, detail::kPoolStream, 0));

    for (Variant v : variants) {
      ExperimentConfig vcfg = cfg;
      vcfg.variant = v;
      vcfg.score = variant_eval_kind(v);
      const gcn::CorrectionParams cor =
          run_conformal_training(vcfg, g, adj, split, mu, pools.conf_pool, run_seed);
      const Matrix mu_tilde = gcn::forward_correction_values(adj, mu, cor);
      auto records = evaluate(mu_tilde, g.labels, pools.eval_pool, pools.conf_pool, vcfg.score,
                              vcfg.smoothing.alpha, vcfg.n_splits_per_run, r, run_seed,
                              vcfg.force_top1);
      auto& bucket = out[v];
      bucket.insert(bucket.end(), records.begin(), records.end());
    }
  }
  return out;
}

// ---- metrics serialization ------------------------------------------------

inline void write_results_csv(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write results file: " + path);
  out << "run,split,score,alpha,coverage,ineff\n";
  char buf[128];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%s,%.6f,%.6f,%.6f\n", r.run, r.split,
                  cp::score_kind_name(r.score), r.alpha, r.coverage, r.inefficiency);
    out << buf;
  }
}

inline std::vector<MetricsRecord> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "run,split,score,alpha,coverage,ineff") {
    throw std::runtime_error(path + ": missing results header");
  }
  std::vector<MetricsRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad record");
    }
    MetricsRecord r;
    try {
      r.run = std::stoul(fields[0]);
      r.split = std::stoul(fields[1]);
      if (fields[2] == "thr") r.score = cp::ScoreKind::kThr;
      else if (fields[2] == "aps") r.score = cp::ScoreKind::kAps;
      else if (fields[2] == "rank") r.score = cp::ScoreKind::kRank;
      else throw std::runtime_error("bad score kind '" + fields[2] + "'");
      r.alpha = std::stod(fields[3]);
      r.coverage = std::stod(fields[4]);
      r.inefficiency = std::stod(fields[5]);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(r);
  }
  return records;
}

// Table-1-style aggregation: per-run means first, then mean and population
// sd across runs, grouped by (score, alpha).
inline std::vector<SummaryRow> summarize(const std::vector<MetricsRecord>& records) {
  std::map<std::pair<int, long long>, std::map<std::size_t, std::vector<const MetricsRecord*>>>
      groups;
  for (const auto& r : records) {
    const auto key = std::make_pair(static_cast<int>(r.score),
                                    static_cast<long long>(std::llround(r.alpha * 1e9)));
    groups[key][r.run].push_back(&r);
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, runs] : groups) {
    std::vector<double> cov_means, ineff_means;
    std::size_t n_splits = 0;
    for (const auto& [run, recs] : runs) {
      double c = 0.0, s = 0.0;
      for (const auto* r : recs) {
        c += r->coverage;
        s += r->inefficiency;
      }
      cov_means.push_back(c / recs.size());
      ineff_means.push_back(s / recs.size());
      n_splits = recs.size();
    }
    SummaryRow row{};
    row.score = static_cast<cp::ScoreKind>(key.first);
    row.alpha = static_cast<double>(key.second) / 1e9;
    row.n_runs = runs.size();
    row.n_splits = n_splits;
    double cm = 0.0, im = 0.0;
    for (double v : cov_means) cm += v;
    for (double v : ineff_means) im += v;
    row.coverage_mean = cm / cov_means.size();
    row.ineff_mean = im / ineff_means.size();
    row.coverage_sd = detail::population_sd(cov_means, row.coverage_mean);
    row.ineff_sd = detail::population_sd(ineff_means, row.ineff_mean);
    rows.push_back(row);
  }
  return rows;
}

inline void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write summary file: " + path);
  out << "score,alpha,runs,splits,coverage_mean,coverage_sd,ineff_mean,ineff_sd\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%zu,%zu,%.6f,%.6f,%.6f,%.6f\n",
                  cp::score_kind_name(r.score), r.alpha, r.n_runs, r.n_splits, r.coverage_mean,
                  r.coverage_sd, r.ineff_mean, r.ineff_sd);
    out << buf;
  }
}

}  // namespace rcp::pipeline
