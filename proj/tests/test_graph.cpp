#include <catch2/catch_amalgamated.hpp>

#include "equigraph/graph.hpp"
#include "equigraph/polytopes.hpp"

using namespace equigraph;

namespace {

std::vector<Edge> undirected(std::initializer_list<std::pair<int, int>> pairs) {
  std::vector<Edge> e;
  for (auto [a, b] : pairs) {
    e.push_back({a, b});
    e.push_back({b, a});
  }
  return e;
}

}  // namespace

TEST_CASE("angle set of a 3-path has exactly the two centre angles") {
  auto triples = build_angle_set(undirected({{0, 1}, {1, 2}}), 3);
  REQUIRE(triples.size() == 2);
  CHECK(triples[0] == AngleTriple{0, 1, 2});
  CHECK(triples[1] == AngleTriple{2, 1, 0});
}

TEST_CASE("angle set of a triangle has six triples, both orders each") {
  auto triples = build_angle_set(undirected({{0, 1}, {1, 2}, {0, 2}}), 3);
  REQUIRE(triples.size() == 6);
  for (const auto& t : triples) {
    // the reversed triple must also be present
    CHECK(std::find(triples.begin(), triples.end(), AngleTriple{t.k, t.i, t.j}) !=
          triples.end());
  }
}

TEST_CASE("angle set of the 3-cube has 48 triples") {
  Tensor v = polytope_vertices(PolytopeFamily::hypercube, 3);
  auto edges = edges_by_min_distance(v);
  auto triples = build_angle_set(edges, v.rows);
  CHECK(triples.size() == 48);  // 8 vertices x deg 3 x (3-1)
}

TEST_CASE("angle set size equals sum of deg*(deg-1) on random graphs") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    std::uniform_int_distribution<int> un(3, 12);
    int n = un(rng);
    std::vector<Edge> edges;
    std::vector<std::set<int>> nbr(n);
    std::uniform_int_distribution<int> uv(0, n - 1);
    for (int tries = 0; tries < 3 * n; ++tries) {
      int a = uv(rng), b = uv(rng);
      if (a == b || nbr[a].count(b)) continue;
      nbr[a].insert(b);
      nbr[b].insert(a);
      edges.push_back({a, b});
      edges.push_back({b, a});
    }
    std::size_t expect = 0;
    for (int i = 0; i < n; ++i) expect += nbr[i].size() * (nbr[i].size() - 1);
    CHECK(build_angle_set(edges, n).size() == expect);
  }
}

TEST_CASE("angle set is sorted by (i, j, k)") {
  Tensor v = polytope_vertices(PolytopeFamily::icosahedron, 3);
  auto triples = build_angle_set(edges_by_min_distance(v), v.rows);
  for (std::size_t t = 1; t < triples.size(); ++t) {
    auto a = std::tie(triples[t - 1].i, triples[t - 1].j, triples[t - 1].k);
    auto b = std::tie(triples[t].i, triples[t].j, triples[t].k);
    CHECK(a < b);
  }
}

TEST_CASE("per-vertex angle index partitions the angle set") {
  auto triples = build_angle_set(undirected({{0, 1}, {1, 2}, {0, 2}, {2, 3}}), 4);
  auto idx = per_vertex_angle_index(triples);
  std::size_t total = 0;
  for (const auto& [i, pairs] : idx) {
    total += pairs.size();
    for (auto [j, k] : pairs)
      CHECK(std::find(triples.begin(), triples.end(), AngleTriple{j, i, k}) != triples.end());
  }
  CHECK(total == triples.size());
}

TEST_CASE("node permutation relabels edges and angles consistently") {
  GraphSample g = polytope_graph(PolytopeFamily::simplex, 3, 0, true);
  std::vector<int> perm = {2, 0, 3, 1};
  GraphSample p = permute_nodes(g, perm);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    CHECK(p.edges[e].src == perm[g.edges[e].src]);
    CHECK(p.edges[e].dst == perm[g.edges[e].dst]);
  }
  for (int i = 0; i < g.num_nodes(); ++i)
    for (int d = 0; d < 3; ++d) CHECK(p.coords.at(perm[i], d) == g.coords.at(i, d));
  CHECK_THROWS_AS(permute_nodes(g, {0, 0, 1, 2}), ConfigError);
  CHECK_THROWS_AS(permute_nodes(g, {0, 1, 2}), ConfigError);
}

TEST_CASE("graph JSON round trip") {
  GraphSample g = polytope_graph(PolytopeFamily::orthoplex, 3, 2, true);
  g.global = Tensor::from_rows({{0.5, -1.0}});
  nlohmann::json doc = write_graph_json(g);
  GraphSample r = read_graph_json(doc);
  CHECK(*r.coords.data == *g.coords.data);
  CHECK(*r.node_features.data == *g.node_features.data);
  CHECK(*r.global.data == *g.global.data);
  CHECK(r.label == g.label);
  REQUIRE(r.edges.size() == g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    CHECK(r.edges[e].src == g.edges[e].src);
    CHECK(r.edges[e].dst == g.edges[e].dst);
  }
  REQUIRE(r.angles.size() == g.angles.size());
  CHECK(std::equal(r.angles.begin(), r.angles.end(), g.angles.begin()));
}

TEST_CASE("graph JSON rejects malformed documents") {
  nlohmann::json base = {
      {"nodes", {{{"coords", {0.0, 0.0}}}, {{"coords", {1.0, 0.0}}}}},
      {"edges", {{{"src", 0}, {"dst", 1}}}},
      {"angles", "auto"}};
  CHECK_NOTHROW(read_graph_json(base));

  nlohmann::json bad = base;
  bad["edges"][0]["dst"] = 5;
  CHECK_THROWS_AS(read_graph_json(bad), ParseError);

  bad = base;
  bad["edges"][0]["dst"] = 0;  // self loop
  CHECK_THROWS_AS(read_graph_json(bad), ParseError);

  bad = base;
  bad["nodes"][1]["coords"] = {1.0};  // ragged
  CHECK_THROWS_AS(read_graph_json(bad), ParseError);

  bad = base;
  bad["angles"] = {{0, 1}};  // not a triple
  CHECK_THROWS_AS(read_graph_json(bad), ParseError);

  bad = base;
  bad.erase("nodes");
  CHECK_THROWS_AS(read_graph_json(bad), ParseError);
}

TEST_CASE("angles auto matches build_angle_set") {
  GraphSample g = polytope_graph(PolytopeFamily::hypercube, 3, 1);
  nlohmann::json doc = write_graph_json(g);
  doc["angles"] = "auto";
  GraphSample r = read_graph_json(doc);
  REQUIRE(r.angles.size() == g.angles.size());
  CHECK(std::equal(r.angles.begin(), r.angles.end(), g.angles.begin()));
}
