// Batch front end for rank-based conformal prediction experiments:
// dataset generation, two-stage training, repeated-split evaluation,
// ablations, alpha sweeps and result reporting.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "rcp/config.hpp"
#include "rcp/cp.hpp"
#include "rcp/gcn.hpp"
#include "rcp/graph.hpp"
#include "rcp/pipeline.hpp"
#include "rcp/plot.hpp"

namespace fs = std::filesystem;
using rcp::pipeline::ExperimentConfig;
using rcp::pipeline::MetricsRecord;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::pair<std::string, std::string>> overrides;
  bool plot = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "config file (key=value)");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_flag("--plot", flags.plot, "emit static SVG plots");
  auto override_opt = [&flags, cmd](const char* flag, const char* key, const char* help) {
    cmd->add_option_function<std::string>(
        flag, [&flags, key](const std::string& v) { flags.overrides.emplace_back(key, v); }, help);
  };
  override_opt("--alpha", "cp.alpha", "target miscoverage in (0,1)");
  override_opt("--tau", "cp.tau", "sigmoid temperature in [1e-3,10]");
  override_opt("--lambda", "cp.lambda", "conformity loss weight");
  override_opt("--kappa", "cp.kappa", "set-size allowance, 0 or 1");
  override_opt("--score", "cp.score", "score kind: thr|aps|rank");
  override_opt("--seed", "run.seed", "base seed");
  override_opt("--runs", "run.runs", "number of runs");
  override_opt("--splits", "run.splits", "calib/test splits per run");
  override_opt("--jobs", "run.jobs", "worker pool size");
  override_opt("--variant", "run.variant", "rcp-gnn|rcp-thr|rcp-aps|no-conf-tr");
}

ExperimentConfig resolve_and_echo(const CommonFlags& flags) {
  ExperimentConfig cfg = rcp::config::resolve(flags.config_path, flags.overrides);
  fs::create_directories(flags.out_dir);
  std::ofstream echo(flags.out_dir + "/resolved.cfg");
  if (!echo) throw std::runtime_error("cannot write " + flags.out_dir + "/resolved.cfg");
  echo << rcp::config::serialize(cfg);
  return cfg;
}

void print_summary(const std::vector<rcp::pipeline::SummaryRow>& rows) {
  std::printf("%-6s %-7s %-6s %-7s %-16s %-16s\n", "score", "alpha", "runs", "splits",
              "coverage", "ineff");
  for (const auto& r : rows) {
    std::printf("%-6s %-7.3f %-6zu %-7zu %.3f(%.3f)%s    %.3f(%.3f)\n",
                rcp::cp::score_kind_name(r.score), r.alpha, r.n_runs, r.n_splits, r.coverage_mean,
                r.coverage_sd, r.coverage_mean >= 1.0 - r.alpha - 1e-12 ? "*" : " ",
                r.ineff_mean, r.ineff_sd);
  }
}

int cmd_gen_synth(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_and_echo(flags);
  const rcp::Graph g = rcp::config::load_graph(cfg);
  rcp::save_dataset(g, flags.out_dir + "/features.csv", flags.out_dir + "/edges.csv",
                    flags.out_dir + "/labels.csv");
  std::printf("wrote %zu nodes, %zu edges, %zu classes to %s\n", g.n_nodes, g.edges.size(),
              g.n_classes, flags.out_dir.c_str());
  return 0;
}

int cmd_train(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_and_echo(flags);
  const rcp::Graph g = rcp::config::load_graph(cfg);
  const rcp::Matrix adj = rcp::normalized_adjacency(g);

  const std::uint64_t run_seed = rcp::derive_seed(cfg.seed, 1, 0);
  const double rest = 1.0 - cfg.train_ratio - cfg.valid_ratio;
  const rcp::NodeSplit split = rcp::split_nodes(g, cfg.train_ratio, cfg.valid_ratio, rest,
                                                cfg.calib_fraction, rcp::derive_seed(run_seed, 2, 0));
  rcp::gcn::TrainConfig base_cfg = cfg.base;
  base_cfg.seed = rcp::derive_seed(run_seed, 3, 0);
  const rcp::gcn::GcnParams base = rcp::gcn::train_base(g, adj, split, base_cfg);
  const rcp::Matrix mu = rcp::gcn::forward_base_values(adj, g.features, base);
  std::printf("base model: train acc %.3f, valid acc %.3f\n",
              rcp::gcn::accuracy(mu, split.train, g.labels),
              rcp::gcn::accuracy(mu, split.valid, g.labels));

  const auto pools = rcp::pipeline::make_pools(split, cfg.withheld_fraction,
                                               rcp::derive_seed(run_seed, 4, 0));
  const rcp::gcn::CorrectionParams cor =
      rcp::pipeline::run_conformal_training(cfg, g, adj, split, mu, pools.conf_pool, run_seed);
  const rcp::Matrix mu_tilde = rcp::gcn::forward_correction_values(adj, mu, cor);
  std::printf("correction model: valid acc %.3f\n",
              rcp::gcn::accuracy(mu_tilde, split.valid, g.labels));

  rcp::gcn::save_params(base, flags.out_dir + "/base.ckpt");
  rcp::gcn::save_params(cor, flags.out_dir + "/correction.ckpt");
  std::printf("checkpoints written to %s\n", flags.out_dir.c_str());
  return 0;
}

int cmd_eval(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_and_echo(flags);
  const rcp::Graph g = rcp::config::load_graph(cfg);
  const rcp::Matrix adj = rcp::normalized_adjacency(g);
  const auto records = rcp::pipeline::run_experiment(cfg, g, adj);
  rcp::pipeline::write_results_csv(records, flags.out_dir + "/results.csv");
  const auto rows = rcp::pipeline::summarize(records);
  rcp::pipeline::write_summary_csv(rows, flags.out_dir + "/summary.csv");
  if (flags.plot) {
    rcp::plot::Series s;
    s.name = rcp::cp::score_kind_name(cfg.score);
    for (const auto& r : records)
      if (r.run == 0) s.points.emplace_back(static_cast<double>(r.split), r.inefficiency);
    rcp::plot::write_svg(flags.out_dir + "/ineff_by_split.svg", "inefficiency across splits",
                         "split", "inefficiency", {s});
  }
  print_summary(rows);
  return 0;
}

int cmd_ablate(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_and_echo(flags);
  const rcp::Graph g = rcp::config::load_graph(cfg);
  const rcp::Matrix adj = rcp::normalized_adjacency(g);
  using rcp::pipeline::Variant;
  const std::vector<Variant> variants = {Variant::kRcpThr, Variant::kRcpAps, Variant::kNoConfTr,
                                         Variant::kRcpGnn};
  const auto results = rcp::pipeline::run_ablation(cfg, g, adj, variants);
  for (const auto& [variant, records] : results) {
    const std::string dir = flags.out_dir + "/" + rcp::pipeline::variant_name(variant);
    fs::create_directories(dir);
    rcp::pipeline::write_results_csv(records, dir + "/results.csv");
    rcp::pipeline::write_summary_csv(rcp::pipeline::summarize(records), dir + "/summary.csv");
  }
  for (Variant v : variants) {
    std::printf("--- %s\n", rcp::pipeline::variant_name(v));
    print_summary(rcp::pipeline::summarize(results.at(v)));
  }
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& alphas_csv) {
  if (alphas_csv.empty()) throw std::invalid_argument("sweep: --alphas list must be non-empty");
  std::vector<double> alphas;
  {
    std::stringstream ss(alphas_csv);
    std::string field;
    while (std::getline(ss, field, ',')) {
      const double a = std::stod(field);
      if (a <= 0.0 || a >= 1.0) {
        throw std::invalid_argument("sweep: alpha " + field + " outside (0,1)");
      }
      alphas.push_back(a);
    }
  }
  if (alphas.empty()) throw std::invalid_argument("sweep: --alphas list must be non-empty");

  const ExperimentConfig base_cfg = resolve_and_echo(flags);
  const rcp::Graph g = rcp::config::load_graph(base_cfg);
  const rcp::Matrix adj = rcp::normalized_adjacency(g);

  std::vector<rcp::pipeline::SummaryRow> rows;
  for (double a : alphas) {
    ExperimentConfig cfg = base_cfg;
    cfg.smoothing.alpha = a;
    const auto records = rcp::pipeline::run_experiment(cfg, g, adj);
    for (const auto& row : rcp::pipeline::summarize(records)) rows.push_back(row);
  }
  rcp::pipeline::write_summary_csv(rows, flags.out_dir + "/sweep.csv");
  if (flags.plot) {
    rcp::plot::Series ineff{"inefficiency", {}}, cov{"coverage", {}};
    for (const auto& r : rows) {
      ineff.points.emplace_back(r.alpha, r.ineff_mean);
      cov.points.emplace_back(r.alpha, r.coverage_mean);
    }
    rcp::plot::write_svg(flags.out_dir + "/ineff_vs_alpha.svg", "inefficiency vs alpha", "alpha",
                         "mean set size", {ineff});
    rcp::plot::write_svg(flags.out_dir + "/coverage_vs_alpha.svg", "coverage vs alpha", "alpha",
                         "coverage", {cov});
  }
  print_summary(rows);
  return 0;
}

int cmd_report(const std::string& results_dir) {
  if (!fs::is_directory(results_dir)) {
    throw std::runtime_error("report: not a directory: " + results_dir);
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(results_dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "results.csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw std::runtime_error("report: no results.csv under " + results_dir);
  }
  std::printf("%-40s %-6s %-7s %-14s %-14s\n", "results", "score", "alpha", "coverage", "ineff");
  for (const auto& path : files) {
    const auto records = rcp::pipeline::read_results_csv(path.string());
    if (records.empty()) throw std::runtime_error("report: empty results file " + path.string());
    for (const auto& row : rcp::pipeline::summarize(records)) {
      const bool covered = row.coverage_mean >= 1.0 - row.alpha - 1e-12;
      std::printf("%-40s %-6s %-7.3f %.3f(%.3f)%s    %.3f(%.3f)\n",
                  fs::relative(path.parent_path(), results_dir).string().c_str(),
                  rcp::cp::score_kind_name(row.score), row.alpha, row.coverage_mean,
                  row.coverage_sd, covered ? "*" : " ", row.ineff_mean, row.ineff_sd);
    }
  }
  std::printf("(* marks cells with mean coverage >= 1-alpha)\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rank-based conformal prediction for graph node classification"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, ablate_flags, sweep_flags;
  std::string alphas_csv = "0.1,0.2,0.3";
  std::string report_dir;

  auto* gen = app.add_subcommand("gen-synth", "generate an SBM dataset in the ingestion format");
  add_common_flags(gen, gen_flags);
  auto* train = app.add_subcommand("train", "two-stage training; writes checkpoints");
  add_common_flags(train, train_flags);
  auto* eval = app.add_subcommand("eval", "run the evaluation protocol; writes results/summary");
  add_common_flags(eval, eval_flags);
  auto* ablate = app.add_subcommand("ablate", "run all ablation variants with paired seeds");
  add_common_flags(ablate, ablate_flags);
  auto* sweep = app.add_subcommand("sweep", "evaluate across an alpha list");
  add_common_flags(sweep, sweep_flags);
  sweep->add_option("--alphas", alphas_csv, "comma-separated alpha list");
  auto* report = app.add_subcommand("report", "aggregate results CSVs into a table");
  report->add_option("dir", report_dir, "results directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_synth(gen_flags);
    if (train->parsed()) return cmd_train(train_flags);
    if (eval->parsed()) return cmd_eval(eval_flags);
    if (ablate->parsed()) return cmd_ablate(ablate_flags);
    if (sweep->parsed()) return cmd_sweep(sweep_flags, alphas_csv);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
