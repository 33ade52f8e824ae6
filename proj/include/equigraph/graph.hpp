#pragma once

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "equigraph/tensor.hpp"

namespace equigraph {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Edge {
  int src;
  int dst;
};

struct AngleTriple {
  int j, i, k;  // rays j-i and k-i, vertex i
  bool operator==(const AngleTriple&) const = default;
  auto operator<=>(const AngleTriple&) const = default;
};

// Exactly all ordered triples (j,i,k) with j,k distinct undirected neighbours
// of i, sorted by (i, j, k). Both orders of each geometric angle appear.
inline std::vector<AngleTriple> build_angle_set(const std::vector<Edge>& edges, int n) {
  std::vector<std::set<int>> nbr(n);
  for (const auto& e : edges) {
    nbr[e.dst].insert(e.src);
    nbr[e.src].insert(e.dst);
  }
  std::vector<AngleTriple> triples;
  for (int i = 0; i < n; ++i) {
    for (int j : nbr[i])
      for (int k : nbr[i])
        if (j != k) triples.push_back({j, i, k});
  }
  std::sort(triples.begin(), triples.end(),
            [](const AngleTriple& a, const AngleTriple& b) {
              return std::tie(a.i, a.j, a.k) < std::tie(b.i, b.j, b.k);
            });
  return triples;
}

// Partition of the angle set by its middle vertex.
inline std::map<int, std::vector<std::pair<int, int>>> per_vertex_angle_index(
    const std::vector<AngleTriple>& triples) {
  std::map<int, std::vector<std::pair<int, int>>> idx;
  for (const auto& t : triples) idx[t.i].emplace_back(t.j, t.k);
  return idx;
}

// One attributed graph: features, coordinates, edges, angle triples, global
// vector, optional label. Immutable by convention after construction.
struct GraphSample {
  Tensor node_features;   // N x n_v (n_v may be 0)
  Tensor coords;          // N x n_x
  std::vector<Edge> edges;
  Tensor edge_features;   // |E| x n_e
  std::vector<AngleTriple> angles;
  Tensor angle_features;  // |A| x n_a
  Tensor global;          // 1 x n_u
  int label = -1;

  int num_nodes() const { return coords.rows ? coords.rows : node_features.rows; }

  void validate() const {
    int n = num_nodes();
    for (const auto& e : edges) {
      if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n)
        throw ParseError("edge endpoint out of range");
      if (e.src == e.dst) throw ParseError("self-loop edge");
    }
    for (const auto& a : angles) {
      if (a.i < 0 || a.i >= n || a.j < 0 || a.j >= n || a.k < 0 || a.k >= n || a.j == a.k)
        throw ParseError("invalid angle triple");
    }
    if (edge_features.cols > 0 && edge_features.rows != static_cast<int>(edges.size()))
      throw ParseError("edge feature row count mismatch");
    if (angle_features.cols > 0 && angle_features.rows != static_cast<int>(angles.size()))
      throw ParseError("angle feature row count mismatch");
  }
};

struct DatasetMeta {
  int n_v = 0, n_e = 0, n_x = 0, n_a = 0, n_u = 0;
  int num_classes = 0;
  std::string provenance;
};

struct Dataset {
  std::vector<GraphSample> samples;
  DatasetMeta meta;
};

// Consistent relabeling of nodes by a bijection perm (new index = perm[old]).
inline GraphSample permute_nodes(const GraphSample& g, const std::vector<int>& perm) {
  int n = g.num_nodes();
  if (static_cast<int>(perm.size()) != n) throw ConfigError("permutation size mismatch");
  std::vector<int> seen(n, 0);
  for (int p : perm) {
    if (p < 0 || p >= n || seen[p]++) throw ConfigError("not a permutation");
  }
  GraphSample out = g;
  auto permute_rows = [&](const Tensor& m) {
    if (m.rows != n) return m;
    Tensor r(m.rows, m.cols);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m.cols; ++j) r.at(perm[i], j) = m.at(i, j);
    return r;
  };
  out.node_features = permute_rows(g.node_features);
  out.coords = permute_rows(g.coords);
  out.edges.clear();
  for (const auto& e : g.edges) out.edges.push_back({perm[e.src], perm[e.dst]});
  out.angles.clear();
  for (const auto& a : g.angles) out.angles.push_back({perm[a.j], perm[a.i], perm[a.k]});
  // Edge/angle features keep their row order; rows follow their (relabeled) items.
  return out;
}

// ---------------------------------------------------------------------------
// Graph JSON interchange (one sample per document), schema:
// {"nodes":[{"coords":[...],"features":[...]}...],
//  "edges":[{"src":int,"dst":int,"features":[...]}...],
//  "global":[...], "label":int?, "angles":"auto" | [[j,i,k]...]}
// ---------------------------------------------------------------------------

inline GraphSample read_graph_json(const nlohmann::json& doc) {
  GraphSample g;
  if (!doc.contains("nodes") || !doc.at("nodes").is_array())
    throw ParseError("graph document: missing 'nodes' array");
  const auto& nodes = doc.at("nodes");
  int n = static_cast<int>(nodes.size());
  int n_x = -1, n_v = -1;
  std::vector<std::vector<double>> coords, feats;
  for (int i = 0; i < n; ++i) {
    const auto& nd = nodes.at(i);
    auto c = nd.value("coords", std::vector<double>{});
    auto f = nd.value("features", std::vector<double>{});
    if (n_x < 0) n_x = static_cast<int>(c.size());
    if (n_v < 0) n_v = static_cast<int>(f.size());
    if (static_cast<int>(c.size()) != n_x)
      throw ParseError("node " + std::to_string(i) + ": ragged coords row");
    if (static_cast<int>(f.size()) != n_v)
      throw ParseError("node " + std::to_string(i) + ": ragged features row");
    coords.push_back(std::move(c));
    feats.push_back(std::move(f));
  }
  g.coords = n ? Tensor::from_rows(coords) : Tensor(0, 0);
  g.node_features = n ? Tensor::from_rows(feats) : Tensor(0, 0);

  int n_e = -1;
  std::vector<std::vector<double>> efeats;
  for (std::size_t idx = 0; idx < doc.value("edges", nlohmann::json::array()).size(); ++idx) {
    const auto& ed = doc.at("edges").at(idx);
    int src = ed.at("src"), dst = ed.at("dst");
    if (src < 0 || src >= n || dst < 0 || dst >= n)
      throw ParseError("edge " + std::to_string(idx) + ": endpoint out of range");
    if (src == dst) throw ParseError("edge " + std::to_string(idx) + ": self loop");
    g.edges.push_back({src, dst});
    auto f = ed.value("features", std::vector<double>{});
    if (n_e < 0) n_e = static_cast<int>(f.size());
    if (static_cast<int>(f.size()) != n_e)
      throw ParseError("edge " + std::to_string(idx) + ": ragged features row");
    efeats.push_back(std::move(f));
  }
  g.edge_features = g.edges.empty() ? Tensor(0, 0) : Tensor::from_rows(efeats);

  auto glob = doc.value("global", std::vector<double>{});
  g.global = Tensor(1, static_cast<int>(glob.size()));
  for (std::size_t i = 0; i < glob.size(); ++i) g.global.at(0, static_cast<int>(i)) = glob[i];

  if (doc.contains("label") && !doc.at("label").is_null())
    g.label = doc.at("label").get<int>();

  if (doc.contains("angles")) {
    const auto& a = doc.at("angles");
    if (a.is_string() && a.get<std::string>() == "auto") {
      g.angles = build_angle_set(g.edges, n);
    } else if (a.is_array()) {
      for (const auto& tr : a) {
        if (!tr.is_array() || tr.size() != 3)
          throw ParseError("angle triple must be [j,i,k]");
        g.angles.push_back({tr.at(0).get<int>(), tr.at(1).get<int>(), tr.at(2).get<int>()});
      }
    } else {
      throw ParseError("'angles' must be \"auto\" or an array of triples");
    }
  }
  g.angle_features = Tensor(static_cast<int>(g.angles.size()), 0);
  g.validate();
  return g;
}

inline nlohmann::json write_graph_json(const GraphSample& g) {
  nlohmann::json doc;
  doc["nodes"] = nlohmann::json::array();
  for (int i = 0; i < g.num_nodes(); ++i) {
    nlohmann::json nd;
    std::vector<double> c(g.coords.cols), f(g.node_features.cols);
    for (int j = 0; j < g.coords.cols; ++j) c[j] = g.coords.at(i, j);
    for (int j = 0; j < g.node_features.cols; ++j) f[j] = g.node_features.at(i, j);
    nd["coords"] = c;
    nd["features"] = f;
    doc["nodes"].push_back(nd);
  }
  doc["edges"] = nlohmann::json::array();
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    nlohmann::json ed;
    ed["src"] = g.edges[e].src;
    ed["dst"] = g.edges[e].dst;
    std::vector<double> f(g.edge_features.cols);
    for (int j = 0; j < g.edge_features.cols; ++j) f[j] = g.edge_features.at(static_cast<int>(e), j);
    ed["features"] = f;
    doc["edges"].push_back(ed);
  }
  std::vector<double> glob(g.global.cols);
  for (int j = 0; j < g.global.cols; ++j) glob[j] = g.global.at(0, j);
  doc["global"] = glob;
  if (g.label >= 0) doc["label"] = g.label;
  doc["angles"] = nlohmann::json::array();
  for (const auto& a : g.angles) doc["angles"].push_back({a.j, a.i, a.k});
  return doc;
}

}  // namespace equigraph
