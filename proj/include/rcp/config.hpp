#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rcp/cp.hpp"
#include "rcp/graph.hpp"
#include "rcp/pipeline.hpp"

namespace rcp::config {

namespace detail {

inline double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad real value '" + value + "' for key '" + key + "'");
  }
}

inline std::size_t to_count(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size() || v < 0) throw std::invalid_argument("negative");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad count '" + value + "' for key '" + key + "'");
  }
}

inline std::uint64_t to_seed(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad seed '" + value + "' for key '" + key + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config: bad boolean '" + value + "' for key '" + key + "'");
}

inline std::vector<std::size_t> to_count_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(to_count(key, field));
  if (out.empty()) throw std::invalid_argument("config: empty list for key '" + key + "'");
  return out;
}

inline cp::ScoreKind to_score(const std::string& key, const std::string& value) {
  if (value == "thr") return cp::ScoreKind::kThr;
  if (value == "aps") return cp::ScoreKind::kAps;
  if (value == "rank") return cp::ScoreKind::kRank;
  throw std::invalid_argument("config: bad score '" + value + "' for key '" + key +
                              "' (want thr|aps|rank)");
}

}  // namespace detail

// Applies one key=value setting; rejects unknown keys by name and
// out-of-range values immediately.
inline void apply_key(pipeline::ExperimentConfig& cfg, const std::string& key,
                      const std::string& value) {
  using namespace detail;
  if (key == "dataset.source") {
    if (value == "files") cfg.use_files = true;
    else if (value == "sbm") cfg.use_files = false;
    else throw std::invalid_argument("config: dataset.source must be files|sbm, got '" + value + "'");
  } else if (key == "dataset.feature_file") cfg.feature_file = value;
  else if (key == "dataset.edge_file") cfg.edge_file = value;
  else if (key == "dataset.label_file") cfg.label_file = value;
  else if (key == "dataset.sbm_blocks") cfg.sbm_blocks = to_count_list(key, value);
  else if (key == "dataset.sbm_p_in") cfg.sbm_p_in = to_double(key, value);
  else if (key == "dataset.sbm_p_out") cfg.sbm_p_out = to_double(key, value);
  else if (key == "dataset.feature_dim") cfg.sbm_feature_dim = to_count(key, value);
  else if (key == "dataset.feature_noise") cfg.sbm_feature_noise = to_double(key, value);
  else if (key == "dataset.seed") cfg.sbm_seed = to_seed(key, value);
  else if (key == "model.hidden") cfg.base.hidden = to_count(key, value);
  else if (key == "model.layers") cfg.base.n_layers = to_count(key, value);
  else if (key == "model.lr") cfg.base.learning_rate = to_double(key, value);
  else if (key == "model.momentum") cfg.base.momentum = to_double(key, value);
  else if (key == "model.epochs") cfg.base.epochs = to_count(key, value);
  else if (key == "model.cor_hidden") cfg.cor_hidden = to_count(key, value);
  else if (key == "model.cor_layers") cfg.cor_layers = to_count(key, value);
  else if (key == "model.cor_lr") cfg.cor_learning_rate = to_double(key, value);
  else if (key == "model.cor_momentum") cfg.cor_momentum = to_double(key, value);
  else if (key == "model.cor_epochs") cfg.cor_epochs = to_count(key, value);
  else if (key == "cp.alpha") {
    const double a = to_double(key, value);
    if (a <= 0.0 || a >= 1.0) {
      throw std::invalid_argument("config: cp.alpha must lie in (0,1), got " + value);
    }
    cfg.smoothing.alpha = a;
  } else if (key == "cp.tau") {
    const double t = to_double(key, value);
    if (t < 1e-3 || t > 10.0) {
      throw std::invalid_argument("config: cp.tau must lie in [1e-3,10], got " + value);
    }
    cfg.smoothing.tau = t;
  } else if (key == "cp.lambda") {
    const double l = to_double(key, value);
    if (l < 0.0) throw std::invalid_argument("config: cp.lambda must be >= 0, got " + value);
    cfg.smoothing.lambda = l;
  } else if (key == "cp.kappa") {
    const double k = to_double(key, value);
    if (k != 0.0 && k != 1.0) {
      throw std::invalid_argument("config: cp.kappa must be 0 or 1, got " + value);
    }
    cfg.smoothing.kappa = k;
  } else if (key == "cp.score") cfg.score = to_score(key, value);
  else if (key == "cp.force_top1") cfg.force_top1 = to_bool(key, value);
  else if (key == "run.train_ratio") cfg.train_ratio = to_double(key, value);
  else if (key == "run.valid_ratio") cfg.valid_ratio = to_double(key, value);
  else if (key == "run.calib_fraction") cfg.calib_fraction = to_double(key, value);
  else if (key == "run.withheld_fraction") cfg.withheld_fraction = to_double(key, value);
  else if (key == "run.variant") cfg.variant = pipeline::parse_variant(value);
  else if (key == "run.runs") cfg.n_runs = to_count(key, value);
  else if (key == "run.splits") cfg.n_splits_per_run = to_count(key, value);
  else if (key == "run.seed") cfg.seed = to_seed(key, value);
  else if (key == "run.jobs") cfg.jobs = to_count(key, value);
  else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

// Reads key=value lines ('#' comments, blank lines ignored).
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = rcp::detail::trim(line);
    const auto hash = t.find('#');
    if (hash != std::string::npos) t = rcp::detail::trim(t.substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected key=value, got '" + t + "'");
    }
    entries.emplace_back(rcp::detail::trim(t.substr(0, eq)), rcp::detail::trim(t.substr(eq + 1)));
  }
  return entries;
}

// File values first, then flag overrides; the resolved config is validated.
inline pipeline::ExperimentConfig resolve(
    const std::string& config_path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  pipeline::ExperimentConfig cfg;
  if (!config_path.empty()) {
    for (const auto& [k, v] : read_config_file(config_path)) apply_key(cfg, k, v);
  }
  for (const auto& [k, v] : overrides) apply_key(cfg, k, v);
  cfg.validate();
  return cfg;
}

// Canonical serialization; parsing it back reproduces the config exactly.
inline std::string serialize(const pipeline::ExperimentConfig& cfg) {
  std::ostringstream out;
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "dataset.source=" << (cfg.use_files ? "files" : "sbm") << "\n";
  if (cfg.use_files) {
    out << "dataset.feature_file=" << cfg.feature_file << "\n";
    out << "dataset.edge_file=" << cfg.edge_file << "\n";
    out << "dataset.label_file=" << cfg.label_file << "\n";
  } else {
    out << "dataset.sbm_blocks=";
    for (std::size_t i = 0; i < cfg.sbm_blocks.size(); ++i)
      out << (i ? "," : "") << cfg.sbm_blocks[i];
    out << "\n";
    out << "dataset.sbm_p_in=" << real(cfg.sbm_p_in) << "\n";
    out << "dataset.sbm_p_out=" << real(cfg.sbm_p_out) << "\n";
    out << "dataset.feature_dim=" << cfg.sbm_feature_dim << "\n";
    out << "dataset.feature_noise=" << real(cfg.sbm_feature_noise) << "\n";
    out << "dataset.seed=" << cfg.sbm_seed << "\n";
  }
  out << "model.hidden=" << cfg.base.hidden << "\n";
  out << "model.layers=" << cfg.base.n_layers << "\n";
  out << "model.lr=" << real(cfg.base.learning_rate) << "\n";
  out << "model.momentum=" << real(cfg.base.momentum) << "\n";
  out << "model.epochs=" << cfg.base.epochs << "\n";
  out << "model.cor_hidden=" << cfg.cor_hidden << "\n";
  out << "model.cor_layers=" << cfg.cor_layers << "\n";
  out << "model.cor_lr=" << real(cfg.cor_learning_rate) << "\n";
  out << "model.cor_momentum=" << real(cfg.cor_momentum) << "\n";
  out << "model.cor_epochs=" << cfg.cor_epochs << "\n";
  out << "cp.alpha=" << real(cfg.smoothing.alpha) << "\n";
  out << "cp.tau=" << real(cfg.smoothing.tau) << "\n";
  out << "cp.lambda=" << real(cfg.smoothing.lambda) << "\n";
  out << "cp.kappa=" << real(cfg.smoothing.kappa) << "\n";
  out << "cp.score=" << cp::score_kind_name(cfg.score) << "\n";
  out << "cp.force_top1=" << (cfg.force_top1 ? "true" : "false") << "\n";
  out << "run.train_ratio=" << real(cfg.train_ratio) << "\n";
  out << "run.valid_ratio=" << real(cfg.valid_ratio) << "\n";
  out << "run.calib_fraction=" << real(cfg.calib_fraction) << "\n";
  out << "run.withheld_fraction=" << real(cfg.withheld_fraction) << "\n";
  out << "run.variant=" << pipeline::variant_name(cfg.variant) << "\n";
  out << "run.runs=" << cfg.n_runs << "\n";
  out << "run.splits=" << cfg.n_splits_per_run << "\n";
  out << "run.seed=" << cfg.seed << "\n";
  out << "run.jobs=" << cfg.jobs << "\n";
  return out.str();
}

// Loads the configured dataset (files or generated SBM).
inline Graph load_graph(const pipeline::ExperimentConfig& cfg) {
  if (cfg.use_files) {
    return load_dataset(cfg.feature_file, cfg.edge_file, cfg.label_file);
  }
  return generate_sbm(cfg.sbm_blocks, cfg.sbm_p_in, cfg.sbm_p_out, cfg.sbm_feature_dim,
                      cfg.sbm_feature_noise, cfg.sbm_seed);
}

}  // namespace rcp::config
