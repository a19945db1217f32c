#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "rcp/config.hpp"

namespace config = rcp::config;
using rcp::pipeline::ExperimentConfig;

namespace {

std::string write_temp_config(const std::string& body) {
  const std::string path = "/tmp/rcp_config_test.cfg";
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("flag overrides take precedence over file values") {
  const std::string path = write_temp_config("cp.alpha=0.1\ncp.tau=2\n");
  const ExperimentConfig cfg = config::resolve(path, {{"cp.alpha", "0.05"}});
  CHECK(cfg.smoothing.alpha == 0.05);
  CHECK(cfg.smoothing.tau == 2.0);
  std::filesystem::remove(path);
}

TEST_CASE("range checks") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(config::apply_key(cfg, "cp.tau", "0.5"));
  CHECK(cfg.smoothing.tau == 0.5);
  CHECK_THROWS_WITH(config::apply_key(cfg, "cp.alpha", "1.5"),
                    Catch::Matchers::ContainsSubstring("(0,1)"));
  CHECK_THROWS_AS(config::apply_key(cfg, "cp.tau", "1e-4"), std::invalid_argument);
  CHECK_THROWS_AS(config::apply_key(cfg, "cp.kappa", "2"), std::invalid_argument);
  CHECK_THROWS_AS(config::apply_key(cfg, "cp.score", "raps"), std::invalid_argument);
  CHECK_THROWS_AS(config::apply_key(cfg, "run.variant", "bogus"), std::invalid_argument);
}

TEST_CASE("unknown keys are rejected by name") {
  ExperimentConfig cfg;
  CHECK_THROWS_WITH(config::apply_key(cfg, "cp.alfa", "0.1"),
                    Catch::Matchers::ContainsSubstring("cp.alfa"));
}

TEST_CASE("comments and blank lines are ignored") {
  const std::string path = write_temp_config(
      "# a comment\n\ncp.alpha = 0.2   # trailing comment\nrun.runs=3\n");
  const auto entries = config::read_config_file(path);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].first == "cp.alpha");
  CHECK(entries[0].second == "0.2");
  std::filesystem::remove(path);
}

TEST_CASE("malformed lines point at the offending line") {
  const std::string path = write_temp_config("cp.alpha=0.1\nnot a setting\n");
  CHECK_THROWS_WITH(config::read_config_file(path), Catch::Matchers::ContainsSubstring(":2"));
  std::filesystem::remove(path);
}

TEST_CASE("serialize/parse round trip preserves every field") {
  ExperimentConfig cfg;
  cfg.sbm_blocks = {10, 20, 30};
  cfg.sbm_p_in = 0.37;
  cfg.smoothing.alpha = 0.07;
  cfg.smoothing.tau = 0.125;
  cfg.smoothing.lambda = 2.5;
  cfg.smoothing.kappa = 0.0;
  cfg.score = rcp::cp::ScoreKind::kAps;
  cfg.variant = rcp::pipeline::Variant::kRcpAps;
  cfg.n_runs = 4;
  cfg.n_splits_per_run = 17;
  cfg.seed = 987654321;
  cfg.base.learning_rate = 0.003;
  cfg.cor_epochs = 55;
  cfg.withheld_fraction = 0.25;

  const std::string path = write_temp_config(config::serialize(cfg));
  const ExperimentConfig back = config::resolve(path, {});
  CHECK(back.sbm_blocks == cfg.sbm_blocks);
  CHECK(back.sbm_p_in == cfg.sbm_p_in);
  CHECK(back.smoothing.alpha == cfg.smoothing.alpha);
  CHECK(back.smoothing.tau == cfg.smoothing.tau);
  CHECK(back.smoothing.lambda == cfg.smoothing.lambda);
  CHECK(back.smoothing.kappa == cfg.smoothing.kappa);
  CHECK(back.score == cfg.score);
  CHECK(back.variant == cfg.variant);
  CHECK(back.n_runs == cfg.n_runs);
  CHECK(back.n_splits_per_run == cfg.n_splits_per_run);
  CHECK(back.seed == cfg.seed);
  CHECK(back.base.learning_rate == cfg.base.learning_rate);
  CHECK(back.cor_epochs == cfg.cor_epochs);
  CHECK(back.withheld_fraction == cfg.withheld_fraction);
  CHECK(config::serialize(back) == config::serialize(cfg));
  std::filesystem::remove(path);
}

TEST_CASE("files source requires the three paths at load time") {
  ExperimentConfig cfg;
  config::apply_key(cfg, "dataset.source", "files");
  CHECK(cfg.use_files);
  CHECK_THROWS_AS(config::load_graph(cfg), std::runtime_error);  // missing files
}
