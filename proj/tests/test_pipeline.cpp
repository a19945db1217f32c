#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "rcp/gcn.hpp"
#include "rcp/graph.hpp"
#include "rcp/pipeline.hpp"

using rcp::Graph;
using rcp::Matrix;
using rcp::NodeSplit;
namespace cp = rcp::cp;
namespace gcn = rcp::gcn;
namespace pipeline = rcp::pipeline;

namespace {

pipeline::ExperimentConfig tiny_config() {
  pipeline::ExperimentConfig cfg;
  cfg.sbm_blocks = {40, 40, 40};
  cfg.sbm_p_in = 0.3;
  cfg.sbm_p_out = 0.03;
  cfg.sbm_feature_dim = 6;
  cfg.sbm_feature_noise = 0.8;
  cfg.sbm_seed = 5;
  cfg.base.epochs = 40;
  cfg.base.hidden = 8;
  cfg.cor_hidden = 8;
  cfg.cor_epochs = 8;
  cfg.smoothing.alpha = 0.1;
  cfg.n_runs = 1;
  cfg.n_splits_per_run = 10;
  cfg.seed = 3;
  return cfg;
}

std::string file_contents(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("make_pools keeps conformal and evaluation pools disjoint") {
  const Graph g = rcp::generate_sbm({40, 40}, 0.3, 0.05, 4, 0.5, 7);
  const NodeSplit split = rcp::split_nodes(g, 0.2, 0.1, 0.7, 0.5, 11);
  const auto pools = pipeline::make_pools(split, 0.5, 13);

  std::set<std::size_t> conf(pools.conf_pool.begin(), pools.conf_pool.end());
  std::set<std::size_t> eval(pools.eval_pool.begin(), pools.eval_pool.end());
  for (std::size_t node : conf) CHECK_FALSE(eval.count(node));

  // eval pool = withheld half of calib plus all of test
  const std::size_t withheld = split.calib.size() / 2;
  CHECK(pools.conf_pool.size() == split.calib.size() - withheld);
  CHECK(pools.eval_pool.size() == withheld + split.test.size());
  for (std::size_t node : split.test) CHECK(eval.count(node));

  SECTION("withheld fraction zero sends every calibration node to training") {
    const auto all_conf = pipeline::make_pools(split, 0.0, 13);
    CHECK(all_conf.conf_pool.size() == split.calib.size());
    CHECK(all_conf.eval_pool.size() == split.test.size());
  }
}

TEST_CASE("evaluate") {
  SECTION("leakage guard rejects overlapping pools") {
    Matrix probs(10, 3, 1.0 / 3.0);
    std::vector<std::size_t> labels(10, 0);
    const std::vector<std::size_t> pool{0, 1, 2, 3, 4, 5};
    const std::vector<std::size_t> folds{5, 7};
    CHECK_THROWS_WITH(pipeline::evaluate(probs, labels, pool, folds, cp::ScoreKind::kThr, 0.2, 3,
                                         0, 99),
                      Catch::Matchers::ContainsSubstring("node 5"));
  }

  SECTION("perfectly confident correct classifier: coverage 1, inefficiency 1") {
    const std::size_t n = 100, k = 4;
    Matrix probs(n, k, 0.01);
    std::vector<std::size_t> labels(n);
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = i % k;
      probs(i, labels[i]) = 0.97;
      pool[i] = i;
    }
    const auto records = pipeline::evaluate(probs, labels, pool, {}, cp::ScoreKind::kRank, 0.05,
                                            20, 0, 17);
    REQUIRE(records.size() == 20);
    for (const auto& r : records) {
      CHECK(r.coverage == 1.0);
      CHECK(r.inefficiency == 1.0);
    }
  }

  SECTION("coverage validity does not depend on model quality") {
    // random-weight correction stacked on a random-weight base
    const Graph g = rcp::generate_sbm({100, 100, 100}, 0.2, 0.03, 6, 1.0, 23);
    const Matrix adj = rcp::normalized_adjacency(g);
    const gcn::GcnParams base = gcn::init_gcn_params(g.feature_dim(), 8, g.n_classes, 2, 29);
    const Matrix mu = gcn::forward_base_values(adj, g.features, base);
    gcn::CorrectionParams cor;
    cor.gcn = gcn::init_gcn_params(g.n_classes, 8, g.n_classes, 2, 31);
    cor.residual_gate = Matrix::scalar(0.3);
    const Matrix mu_tilde = gcn::forward_correction_values(adj, mu, cor);

    std::vector<std::size_t> pool(g.n_nodes);
    for (std::size_t i = 0; i < g.n_nodes; ++i) pool[i] = i;
    const double alpha = 0.1;
    const auto records = pipeline::evaluate(mu_tilde, g.labels, pool, {}, cp::ScoreKind::kRank,
                                            alpha, 100, 0, 37);
    double mean = 0.0;
    for (const auto& r : records) mean += r.coverage;
    mean /= records.size();
    const double se = std::sqrt(alpha * (1.0 - alpha) / (g.n_nodes / 2.0));
    CHECK(mean >= 1.0 - alpha - 3.0 * se);
  }
}

TEST_CASE("run_experiment is deterministic and reproduces CSVs byte-for-byte") {
  const auto cfg = tiny_config();
  const Graph g = rcp::generate_sbm(cfg.sbm_blocks, cfg.sbm_p_in, cfg.sbm_p_out,
                                    cfg.sbm_feature_dim, cfg.sbm_feature_noise, cfg.sbm_seed);
  const Matrix adj = rcp::normalized_adjacency(g);

  const auto records1 = pipeline::run_experiment(cfg, g, adj);
  const auto records2 = pipeline::run_experiment(cfg, g, adj);
  REQUIRE(records1.size() == records2.size());
  REQUIRE(records1.size() == cfg.n_runs * cfg.n_splits_per_run);
  for (std::size_t i = 0; i < records1.size(); ++i) {
    CHECK(records1[i].coverage == records2[i].coverage);
    CHECK(records1[i].inefficiency == records2[i].inefficiency);
  }

  pipeline::write_results_csv(records1, "/tmp/rcp_results_a.csv");
  pipeline::write_results_csv(records2, "/tmp/rcp_results_b.csv");
  CHECK(file_contents("/tmp/rcp_results_a.csv") == file_contents("/tmp/rcp_results_b.csv"));

  const auto parsed = pipeline::read_results_csv("/tmp/rcp_results_a.csv");
  REQUIRE(parsed.size() == records1.size());
  CHECK(parsed[3].split == records1[3].split);
  CHECK(parsed[3].coverage == Catch::Approx(records1[3].coverage).margin(1e-6));
  std::filesystem::remove("/tmp/rcp_results_a.csv");
  std::filesystem::remove("/tmp/rcp_results_b.csv");
}

TEST_CASE("lambda = 0 reproduces the w/o-Conf.Tr. trajectory bit-for-bit") {
  auto cfg = tiny_config();
  const Graph g = rcp::generate_sbm(cfg.sbm_blocks, cfg.sbm_p_in, cfg.sbm_p_out,
                                    cfg.sbm_feature_dim, cfg.sbm_feature_noise, cfg.sbm_seed);
  const Matrix adj = rcp::normalized_adjacency(g);
  const NodeSplit split = rcp::split_nodes(g, 0.2, 0.1, 0.7, 0.5, 41);
  gcn::TrainConfig base_cfg = cfg.base;
  base_cfg.seed = 43;
  const gcn::GcnParams base = gcn::train_base(g, adj, split, base_cfg);
  const Matrix mu = gcn::forward_base_values(adj, g.features, base);
  const auto pools = pipeline::make_pools(split, 0.5, 47);

  auto run_variant = [&](pipeline::Variant v, double lambda) {
    auto vcfg = cfg;
    vcfg.variant = v;
    vcfg.smoothing.lambda = lambda;
    std::vector<gcn::CorrectionParams> trajectory;
    pipeline::run_conformal_training(vcfg, g, adj, split, mu, pools.conf_pool, 51, &trajectory);
    return trajectory;
  };
  const auto zero_lambda = run_variant(pipeline::Variant::kRcpGnn, 0.0);
  const auto no_conf_tr = run_variant(pipeline::Variant::kNoConfTr, 1.0);  // lambda forced to 0
  REQUIRE(zero_lambda.size() == no_conf_tr.size());
  for (std::size_t e = 0; e < zero_lambda.size(); ++e) {
    CHECK(zero_lambda[e].residual_gate == no_conf_tr[e].residual_gate);
    for (std::size_t l = 0; l < zero_lambda[e].gcn.layer_weights.size(); ++l) {
      CHECK(zero_lambda[e].gcn.layer_weights[l] == no_conf_tr[e].gcn.layer_weights[l]);
    }
  }

  SECTION("positive lambda diverges from the no-conf-tr trajectory") {
    const auto with_cp = run_variant(pipeline::Variant::kRcpGnn, 1.0);
    bool any_different = false;
    for (std::size_t e = 0; e < with_cp.size(); ++e) {
      if (!(with_cp[e].residual_gate == no_conf_tr[e].residual_gate)) any_different = true;
    }
    CHECK(any_different);
  }
}

TEST_CASE("conformal training rejects folds smaller than ceil(1/alpha)") {
  auto cfg = tiny_config();
  cfg.smoothing.alpha = 0.01;  // needs folds of 100
  const Graph g = rcp::generate_sbm(cfg.sbm_blocks, cfg.sbm_p_in, cfg.sbm_p_out,
                                    cfg.sbm_feature_dim, cfg.sbm_feature_noise, cfg.sbm_seed);
  const Matrix adj = rcp::normalized_adjacency(g);
  const NodeSplit split = rcp::split_nodes(g, 0.2, 0.1, 0.7, 0.5, 53);
  const Matrix mu = Matrix(g.n_nodes, g.n_classes, 1.0 / g.n_classes);
  const auto pools = pipeline::make_pools(split, 0.5, 57);
  CHECK_THROWS_WITH(
      pipeline::run_conformal_training(cfg, g, adj, split, mu, pools.conf_pool, 59),
      Catch::Matchers::ContainsSubstring("ceil(1/alpha)"));
}

TEST_CASE("two-stage pipeline keeps marginal coverage on an SBM") {
  auto cfg = tiny_config();
  cfg.n_splits_per_run = 60;
  cfg.cor_epochs = 10;
  const Graph g = rcp::generate_sbm(cfg.sbm_blocks, cfg.sbm_p_in, cfg.sbm_p_out,
                                    cfg.sbm_feature_dim, cfg.sbm_feature_noise, cfg.sbm_seed);
  const Matrix adj = rcp::normalized_adjacency(g);
  const auto records = pipeline::run_experiment(cfg, g, adj);
  double mean = 0.0;
  for (const auto& r : records) mean += r.coverage;
  mean /= records.size();
  const double alpha = cfg.smoothing.alpha;
  // eval pool ~ 63 nodes -> eval halves ~ 31
  const double se = std::sqrt(alpha * (1.0 - alpha) / 31.0);
  CHECK(std::abs(mean - (1.0 - alpha)) <= 3.0 * se);
}

TEST_CASE("summarize matches the mean/sd arithmetic oracle") {
  std::vector<pipeline::MetricsRecord> records(2);
  records[0] = {0, 0, cp::ScoreKind::kRank, 0.05, 0.95, 1.4};
  records[1] = {1, 0, cp::ScoreKind::kRank, 0.05, 0.96, 1.6};
  const auto rows = pipeline::summarize(records);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].coverage_mean == Catch::Approx(0.955));
  CHECK(rows[0].coverage_sd == Catch::Approx(0.005));
  CHECK(rows[0].ineff_mean == Catch::Approx(1.5));
  CHECK(rows[0].n_runs == 2);
}

TEST_CASE("ablation runner pairs seeds across variants") {
  auto cfg = tiny_config();
  cfg.n_splits_per_run = 5;
  cfg.cor_epochs = 5;
  const Graph g = rcp::generate_sbm(cfg.sbm_blocks, cfg.sbm_p_in, cfg.sbm_p_out,
                                    cfg.sbm_feature_dim, cfg.sbm_feature_noise, cfg.sbm_seed);
  const Matrix adj = rcp::normalized_adjacency(g);
  using pipeline::Variant;
  const auto results = pipeline::run_ablation(cfg, g, adj,
                                              {Variant::kRcpGnn, Variant::kNoConfTr,
                                               Variant::kRcpThr, Variant::kRcpAps});
  REQUIRE(results.size() == 4);
  for (const auto& [variant, records] : results) {
    CHECK(records.size() == cfg.n_runs * cfg.n_splits_per_run);
    for (const auto& r : records) {
      CHECK(r.score == pipeline::variant_eval_kind(variant));
      CHECK(r.coverage >= 0.0);
      CHECK(r.coverage <= 1.0);
      CHECK(r.inefficiency >= 0.0);
      CHECK(r.inefficiency <= static_cast<double>(g.n_classes));
    }
  }
}
