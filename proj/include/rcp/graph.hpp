#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rcp/matrix.hpp"
#include "rcp/rng.hpp"

namespace rcp {

// Transductive node-classification world: undirected edges, dense features,
// integer labels. Immutable after construction; safe to share across threads.
struct Graph {
  std::size_t n_nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // canonical u < v, sorted, deduped
  Matrix features;                                         // n_nodes x d
  std::vector<std::size_t> labels;                         // class ids in [0, K)
  std::size_t n_classes = 0;

  std::size_t feature_dim() const { return features.cols(); }
};

struct NodeSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> calib;
  std::vector<std::size_t> test;
};

namespace detail {

inline void canonicalize_edges(std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  for (auto& e : edges)
    if (e.first > e.second) std::swap(e.first, e.second);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  return out;
}

[[noreturn]] inline void parse_error(const std::string& path, std::size_t line_no,
                                     const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

// Parses "<prefix>=<count>" out of a header field like "d=16" / "k=7".
inline std::size_t header_count(const std::string& path, const std::string& field,
                                const std::string& key) {
  const auto eq = field.find('=');
  if (eq == std::string::npos || trim(field.substr(0, eq)) != key) {
    parse_error(path, 1, "expected header field '" + key + "=<count>', got '" + field + "'");
  }
  try {
    const long v = std::stol(field.substr(eq + 1));
    if (v <= 0) throw std::out_of_range("nonpositive");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    parse_error(path, 1, "bad count in header field '" + field + "'");
  }
}

}  // namespace detail

// Feature file: header "node_features,d=<d>", then one CSV row of d reals
// per node. Edge file: "src,dst" integer pairs, '#' comments, blank lines
// ignored; duplicates, reversed pairs and self-loops are dropped. Label file:
// header "labels,k=<K>" then one integer per row.
inline Graph load_dataset(const std::string& feature_path, const std::string& edge_path,
                          const std::string& label_path) {
  Graph g;

  {
    std::ifstream in(feature_path);
    if (!in) throw std::runtime_error("cannot open feature file: " + feature_path);
    std::string line;
    if (!std::getline(in, line)) detail::parse_error(feature_path, 1, "missing header");
    auto fields = detail::split_csv(line);
    if (fields.size() != 2 || fields[0] != "node_features") {
      detail::parse_error(feature_path, 1, "expected header 'node_features,d=<d>'");
    }
    const std::size_t d = detail::header_count(feature_path, fields[1], "d");
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      auto row = detail::split_csv(line);
      if (row.size() != d) {
        detail::parse_error(feature_path, line_no,
                            "expected " + std::to_string(d) + " columns, got " +
                                std::to_string(row.size()));
      }
      for (const auto& f : row) {
        try {
          values.push_back(std::stod(f));
        } catch (const std::exception&) {
          detail::parse_error(feature_path, line_no, "bad real value '" + f + "'");
        }
      }
    }
    g.n_nodes = values.size() / d;
    g.features = Matrix::from_rows(g.n_nodes, d, std::move(values));
  }

  {
    std::ifstream in(label_path);
    if (!in) throw std::runtime_error("cannot open label file: " + label_path);
    std::string line;
    if (!std::getline(in, line)) detail::parse_error(label_path, 1, "missing header");
    auto fields = detail::split_csv(line);
    if (fields.size() != 2 || fields[0] != "labels") {
      detail::parse_error(label_path, 1, "expected header 'labels,k=<K>'");
    }
    g.n_classes = detail::header_count(label_path, fields[1], "k");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      long y = 0;
      try {
        y = std::stol(t);
      } catch (const std::exception&) {
        detail::parse_error(label_path, line_no, "bad label '" + t + "'");
      }
      if (y < 0 || static_cast<std::size_t>(y) >= g.n_classes) {
        detail::parse_error(label_path, line_no,
                            "label " + std::to_string(y) + " out of range [0, " +
                                std::to_string(g.n_classes) + ")");
      }
      g.labels.push_back(static_cast<std::size_t>(y));
    }
    if (g.labels.size() != g.n_nodes) {
      throw std::runtime_error(label_path + ": " + std::to_string(g.labels.size()) +
                               " labels for " + std::to_string(g.n_nodes) + " feature rows");
    }
  }

  {
    std::ifstream in(edge_path);
    if (!in) throw std::runtime_error("cannot open edge file: " + edge_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string t = detail::trim(line);
      const auto hash = t.find('#');
      if (hash != std::string::npos) t = detail::trim(t.substr(0, hash));
      if (t.empty()) continue;
      auto fields = detail::split_csv(t);
      if (fields.size() != 2) detail::parse_error(edge_path, line_no, "expected 'src,dst'");
      long u = 0, v = 0;
      try {
        u = std::stol(fields[0]);
        v = std::stol(fields[1]);
      } catch (const std::exception&) {
        detail::parse_error(edge_path, line_no, "bad node id in '" + t + "'");
      }
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= g.n_nodes ||
          static_cast<std::size_t>(v) >= g.n_nodes) {
        detail::parse_error(edge_path, line_no,
                            "node id out of range [0, " + std::to_string(g.n_nodes) + ")");
      }
      if (u == v) continue;  // self-loops come from normalization, never storage
      g.edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
    }
    detail::canonicalize_edges(g.edges);
  }

  return g;
}

// Writes the three files in the ingestion format (round-trip partner of
// load_dataset).
inline void save_dataset(const Graph& g, const std::string& feature_path,
                         const std::string& edge_path, const std::string& label_path) {
  {
    std::ofstream out(feature_path);
    if (!out) throw std::runtime_error("cannot write feature file: " + feature_path);
    out << "node_features,d=" << g.feature_dim() << "\n";
    char buf[32];
    for (std::size_t i = 0; i < g.n_nodes; ++i) {
      for (std::size_t j = 0; j < g.feature_dim(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", g.features(i, j));
        out << (j ? "," : "") << buf;
      }
      out << "\n";
    }
  }
  {
    std::ofstream out(edge_path);
    if (!out) throw std::runtime_error("cannot write edge file: " + edge_path);
    out << "# src,dst\n";
    for (const auto& e : g.edges) out << e.first << "," << e.second << "\n";
  }
  {
    std::ofstream out(label_path);
    if (!out) throw std::runtime_error("cannot write label file: " + label_path);
    out << "labels,k=" << g.n_classes << "\n";
    for (std::size_t y : g.labels) out << y << "\n";
  }
}

// Symmetric GCN normalization with self-loops: D~^{-1/2} (A+I) D~^{-1/2}.
// Isolated nodes keep self-loop weight 1.
inline Matrix normalized_adjacency(const Graph& g) {
  if (g.n_nodes == 0) throw std::invalid_argument("normalized_adjacency: empty graph");
  const std::size_t n = g.n_nodes;
  std::vector<double> degree(n, 1.0);  // self-loop
  for (const auto& e : g.edges) {
    degree[e.first] += 1.0;
    degree[e.second] += 1.0;
  }
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
  Matrix a(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) a(i, i) = inv_sqrt[i] * inv_sqrt[i];
  for (const auto& e : g.edges) {
    const double w = inv_sqrt[e.first] * inv_sqrt[e.second];
    a(e.first, e.second) = w;
    a(e.second, e.first) = w;
  }
  return a;
}

// Uniformly random partition under seed: floor(n*train), floor(n*valid),
// remainder to the rest pool; calib drawn from the rest pool (same-pool split
// keeps calib and test exchangeable), remainder to test.
inline NodeSplit split_nodes(const Graph& g, double train_ratio, double valid_ratio,
                             double rest_ratio, double calib_fraction, std::uint64_t seed) {
  if (train_ratio <= 0.0 || valid_ratio <= 0.0 || rest_ratio <= 0.0) {
    throw std::invalid_argument("split_nodes: ratios must be positive");
  }
  if (std::abs(train_ratio + valid_ratio + rest_ratio - 1.0) > 1e-9) {
    throw std::invalid_argument("split_nodes: ratios must sum to 1");
  }
  if (calib_fraction <= 0.0 || calib_fraction >= 1.0) {
    throw std::invalid_argument("split_nodes: calib_fraction must lie in (0,1)");
  }
  const std::size_t n = g.n_nodes;
  Rng rng(seed);
  std::vector<std::size_t> perm = rng.permutation(n);

  const std::size_t n_train = static_cast<std::size_t>(std::floor(n * train_ratio));
  const std::size_t n_valid = static_cast<std::size_t>(std::floor(n * valid_ratio));
  const std::size_t n_rest = n - n_train - n_valid;
  const std::size_t n_calib = static_cast<std::size_t>(std::floor(n_rest * calib_fraction));
  const std::size_t n_test = n_rest - n_calib;
  if (n_train == 0 || n_valid == 0 || n_calib == 0 || n_test == 0) {
    throw std::invalid_argument("split_nodes: a split set would be empty (n=" +
                                std::to_string(n) + ")");
  }

  NodeSplit s;
  auto take = [&](std::size_t offset, std::size_t count) {
    return std::vector<std::size_t>(perm.begin() + offset, perm.begin() + offset + count);
  };
  s.train = take(0, n_train);
  s.valid = take(n_train, n_valid);
  s.calib = take(n_train + n_valid, n_calib);
  s.test = take(n_train + n_valid + n_calib, n_test);
  return s;
}

// Stochastic block model with one-hot-centroid features plus Gaussian noise;
// labels are block ids. Deterministic under seed.
inline Graph generate_sbm(const std::vector<std::size_t>& block_sizes, double p_in, double p_out,
                          std::size_t feature_dim, double feature_noise, std::uint64_t seed) {
  if (block_sizes.empty()) throw std::invalid_argument("generate_sbm: no blocks");
  if (p_in < 0.0 || p_in > 1.0 || p_out < 0.0 || p_out > 1.0) {
    throw std::invalid_argument("generate_sbm: edge probabilities must lie in [0,1]");
  }
  if (feature_dim == 0) throw std::invalid_argument("generate_sbm: feature_dim must be positive");

  Graph g;
  g.n_classes = block_sizes.size();
  for (std::size_t b = 0; b < block_sizes.size(); ++b) {
    for (std::size_t i = 0; i < block_sizes[b]; ++i) g.labels.push_back(b);
  }
  g.n_nodes = g.labels.size();

  Rng rng(seed);
  for (std::size_t u = 0; u < g.n_nodes; ++u) {
    for (std::size_t v = u + 1; v < g.n_nodes; ++v) {
      const double p = (g.labels[u] == g.labels[v]) ? p_in : p_out;
      if (rng.bernoulli(p)) g.edges.emplace_back(u, v);
    }
  }

  g.features = Matrix(g.n_nodes, feature_dim, 0.0);
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    g.features(i, g.labels[i] % feature_dim) = 1.0;
    for (std::size_t j = 0; j < feature_dim; ++j) {
      g.features(i, j) += rng.normal(0.0, feature_noise);
    }
  }
  return g;
}

}  // namespace rcp
