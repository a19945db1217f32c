#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "rcp/graph.hpp"

using rcp::Graph;
using rcp::Matrix;
using rcp::NodeSplit;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("rcp_graph_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

// largest eigenvalue by power iteration
double spectral_radius(const Matrix& a, int iters = 200) {
  std::vector<double> v(a.rows(), 1.0);
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> w(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) w[i] += a(i, j) * v[j];
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / norm;
    lambda = norm;
  }
  return lambda;
}

}  // namespace

TEST_CASE("load_dataset parses the ingestion format") {
  TempDir dir;

  SECTION("duplicate and reversed edges deduplicate") {
    write_file(dir.file("f.csv"), "node_features,d=2\n1,0\n0,1\n1,1\n");
    write_file(dir.file("e.csv"), "# comment line\n0,1\n1,2\n1,0\n");
    write_file(dir.file("l.csv"), "labels,k=2\n0\n1\n1\n");
    const Graph g = rcp::load_dataset(dir.file("f.csv"), dir.file("e.csv"), dir.file("l.csv"));
    REQUIRE(g.n_nodes == 3);
    REQUIRE(g.edges.size() == 2);
    CHECK(g.edges[0] == std::make_pair<std::size_t, std::size_t>(0, 1));
    CHECK(g.edges[1] == std::make_pair<std::size_t, std::size_t>(1, 2));
    CHECK(g.n_classes == 2);
    CHECK(g.features(2, 1) == 1.0);
  }

  SECTION("empty edge file leaves isolated nodes") {
    write_file(dir.file("f.csv"), "node_features,d=1\n1\n2\n3\n4\n5\n");
    write_file(dir.file("e.csv"), "");
    write_file(dir.file("l.csv"), "labels,k=5\n0\n1\n2\n3\n4\n");
    const Graph g = rcp::load_dataset(dir.file("f.csv"), dir.file("e.csv"), dir.file("l.csv"));
    CHECK(g.n_nodes == 5);
    CHECK(g.edges.empty());
  }

  SECTION("out-of-range edge endpoint names the offending line") {
    write_file(dir.file("f.csv"), "node_features,d=1\n1\n1\n1\n1\n1\n1\n1\n1\n1\n1\n");
    write_file(dir.file("e.csv"), "0,1\n3,99\n");
    write_file(dir.file("l.csv"), "labels,k=2\n0\n0\n0\n0\n0\n1\n1\n1\n1\n1\n");
    CHECK_THROWS_WITH(rcp::load_dataset(dir.file("f.csv"), dir.file("e.csv"), dir.file("l.csv")),
                      Catch::Matchers::ContainsSubstring(":2") &&
                          Catch::Matchers::ContainsSubstring("out of range"));
  }

  SECTION("label at or above K is rejected") {
    write_file(dir.file("f.csv"), "node_features,d=1\n1\n1\n");
    write_file(dir.file("e.csv"), "0,1\n");
    write_file(dir.file("l.csv"), "labels,k=2\n0\n2\n");
    CHECK_THROWS_WITH(rcp::load_dataset(dir.file("f.csv"), dir.file("e.csv"), dir.file("l.csv")),
                      Catch::Matchers::ContainsSubstring("label 2"));
  }

  SECTION("feature/label row-count mismatch is rejected") {
    write_file(dir.file("f.csv"), "node_features,d=1\n1\n1\n1\n");
    write_file(dir.file("e.csv"), "");
    write_file(dir.file("l.csv"), "labels,k=2\n0\n1\n");
    CHECK_THROWS_WITH(rcp::load_dataset(dir.file("f.csv"), dir.file("e.csv"), dir.file("l.csv")),
                      Catch::Matchers::ContainsSubstring("2 labels for 3"));
  }
}

TEST_CASE("ingestion round-trip reproduces the graph") {
  TempDir dir;
  const Graph g = rcp::generate_sbm({7, 5, 8}, 0.4, 0.1, 3, 0.35, 1234);
  rcp::save_dataset(g, dir.file("f.csv"), dir.file("e.csv"), dir.file("l.csv"));
  const Graph h = rcp::load_dataset(dir.file("f.csv"), dir.file("e.csv"), dir.file("l.csv"));
  CHECK(h.n_nodes == g.n_nodes);
  CHECK(h.n_classes == g.n_classes);
  CHECK(h.edges == g.edges);
  CHECK(h.labels == g.labels);
  CHECK(h.features == g.features);
}

TEST_CASE("normalized_adjacency") {
  SECTION("single isolated node") {
    Graph g;
    g.n_nodes = 1;
    g.features = Matrix::ones(1, 1);
    g.labels = {0};
    g.n_classes = 1;
    const Matrix a = rcp::normalized_adjacency(g);
    REQUIRE(a.rows() == 1);
    CHECK(a(0, 0) == 1.0);
  }

  SECTION("two nodes with one edge give all entries 1/2") {
    Graph g;
    g.n_nodes = 2;
    g.edges = {{0, 1}};
    g.features = Matrix::ones(2, 1);
    g.labels = {0, 0};
    g.n_classes = 1;
    const Matrix a = rcp::normalized_adjacency(g);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(a(i, j) == Catch::Approx(0.5));
  }

  SECTION("symmetric with spectral radius at most 1 on random graphs") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      const Graph g = rcp::generate_sbm({10, 12, 9}, 0.35, 0.1, 4, 0.2, seed);
      const Matrix a = rcp::normalized_adjacency(g);
      double max_asym = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
          max_asym = std::max(max_asym, std::abs(a(i, j) - a(j, i)));
      CHECK(max_asym < 1e-12);
      CHECK(spectral_radius(a) <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("split_nodes") {
  const Graph g = rcp::generate_sbm({50, 50}, 0.2, 0.05, 4, 0.3, 5);

  SECTION("floor-then-remainder sizes") {
    const NodeSplit s = rcp::split_nodes(g, 0.2, 0.1, 0.7, 0.5, 17);
    CHECK(s.train.size() == 20);
    CHECK(s.valid.size() == 10);
    CHECK(s.calib.size() == 35);
    CHECK(s.test.size() == 35);
  }

  SECTION("same seed reproduces the split") {
    const NodeSplit a = rcp::split_nodes(g, 0.2, 0.1, 0.7, 0.5, 42);
    const NodeSplit b = rcp::split_nodes(g, 0.2, 0.1, 0.7, 0.5, 42);
    CHECK(a.train == b.train);
    CHECK(a.valid == b.valid);
    CHECK(a.calib == b.calib);
    CHECK(a.test == b.test);
  }

  SECTION("degenerate ratios are rejected") {
    CHECK_THROWS_AS(rcp::split_nodes(g, 1.0, 0.0, 0.0, 0.5, 1), std::invalid_argument);
    // rest pool of one node cannot produce non-empty calib and test sets
    CHECK_THROWS_AS(rcp::split_nodes(g, 0.5, 0.49, 0.01, 0.5, 1), std::invalid_argument);
    CHECK_THROWS_AS(rcp::split_nodes(g, 0.2, 0.1, 0.7, 1.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(rcp::split_nodes(g, 0.3, 0.3, 0.3, 0.5, 1), std::invalid_argument);
  }

  SECTION("partition property: disjoint and exhaustive") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const double tr = 0.1 + 0.05 * static_cast<double>(seed % 4);
      const NodeSplit s = rcp::split_nodes(g, tr, 0.1, 0.9 - tr, 0.4, seed);
      std::set<std::size_t> seen;
      for (const auto* part : {&s.train, &s.valid, &s.calib, &s.test}) {
        for (std::size_t node : *part) {
          CHECK(node < g.n_nodes);
          CHECK(seen.insert(node).second);  // disjoint
        }
      }
      CHECK(seen.size() == g.n_nodes);  // exhaustive
    }
  }
}

TEST_CASE("generate_sbm") {
  SECTION("deterministic corners") {
    const Graph g = rcp::generate_sbm({2, 2}, 1.0, 0.0, 2, 0.0, 9);
    REQUIRE(g.n_nodes == 4);
    REQUIRE(g.edges.size() == 2);
    CHECK(g.edges[0] == std::make_pair<std::size_t, std::size_t>(0, 1));
    CHECK(g.edges[1] == std::make_pair<std::size_t, std::size_t>(2, 3));
    CHECK(g.labels == std::vector<std::size_t>{0, 0, 1, 1});
  }

  SECTION("within-block edge count is within 3 sigma of the binomial oracle") {
    // two blocks of 50: 2*C(50,2) = 2450 within-block pairs at p_in = 0.2
    const double pairs = 2.0 * (50.0 * 49.0 / 2.0);
    const double mean = pairs * 0.2;
    const double sd = std::sqrt(pairs * 0.2 * 0.8);
    const Graph g = rcp::generate_sbm({50, 50}, 0.2, 0.02, 4, 0.5, 21);
    std::size_t within = 0;
    for (const auto& e : g.edges)
      if (g.labels[e.first] == g.labels[e.second]) ++within;
    CHECK(std::abs(static_cast<double>(within) - mean) <= 3.0 * sd);
  }

  SECTION("same seed gives identical edge lists") {
    const Graph a = rcp::generate_sbm({30, 30}, 0.3, 0.02, 4, 0.5, 77);
    const Graph b = rcp::generate_sbm({30, 30}, 0.3, 0.02, 4, 0.5, 77);
    CHECK(a.edges == b.edges);
    CHECK(a.features == b.features);
  }

  SECTION("invalid probabilities are rejected") {
    CHECK_THROWS_AS(rcp::generate_sbm({2, 2}, 1.5, 0.0, 2, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(rcp::generate_sbm({}, 0.5, 0.0, 2, 0.0, 1), std::invalid_argument);
  }
}
