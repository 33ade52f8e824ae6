#pragma once

#include <array>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "equigraph/geometry.hpp"
#include "equigraph/graph.hpp"

namespace equigraph {

enum class PolytopeFamily {
  simplex,
  hypercube,
  orthoplex,
  dodecahedron,
  icosahedron,
  cell24,
  cell120,
  cell600,
};

inline const char* family_name(PolytopeFamily f) {
  switch (f) {
    case PolytopeFamily::simplex: return "simplex";
    case PolytopeFamily::hypercube: return "hypercube";
    case PolytopeFamily::orthoplex: return "orthoplex";
    case PolytopeFamily::dodecahedron: return "dodecahedron";
    case PolytopeFamily::icosahedron: return "icosahedron";
    case PolytopeFamily::cell24: return "cell24";
    case PolytopeFamily::cell120: return "cell120";
    case PolytopeFamily::cell600: return "cell600";
  }
  return "?";
}

namespace detail {

inline void dedup_push(std::vector<std::vector<double>>& out,
                       std::set<std::vector<long long>>& seen,
                       const std::vector<double>& v) {
  std::vector<long long> key(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) key[i] = llround(v[i] * 1e9);
  if (seen.insert(key).second) out.push_back(v);
}

// All (or even-only) permutations of the magnitudes in base, with every sign
// choice on nonzero entries. Duplicates from repeated magnitudes are removed.
inline void permutation_family(std::vector<std::vector<double>>& out,
                               std::set<std::vector<long long>>& seen,
                               std::vector<double> base, bool even_only) {
  int n = static_cast<int>(base.size());
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end());
  do {
    if (even_only) {
      int inversions = 0;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if (idx[i] > idx[j]) ++inversions;
      if (inversions % 2) continue;
    }
    std::vector<double> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = base[idx[i]];
    int nz = 0;
    for (double v : perm)
      if (v != 0.0) ++nz;
    for (int signs = 0; signs < (1 << nz); ++signs) {
      std::vector<double> vtx = perm;
      int bit = 0;
      for (auto& v : vtx)
        if (v != 0.0 && ((signs >> bit++) & 1)) v = -v;
      dedup_push(out, seen, vtx);
    }
  } while (std::next_permutation(idx.begin(), idx.end()));
}

inline Tensor regular_simplex(int n) {
  // e_1..e_{n+1} in R^{n+1}, centered, expressed in an orthonormal basis of
  // the hyperplane orthogonal to the all-ones vector.
  int m = n + 1;
  EMat pts = EMat::Identity(m, m);
  Eigen::VectorXd centroid = Eigen::VectorXd::Constant(m, 1.0 / m);
  Eigen::MatrixXd ones(m, 1);
  ones.setOnes();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(ones);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd basis = q.rightCols(n);  // m x n
  Tensor out(m, n);
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd x = basis.transpose() * (pts.row(i).transpose() - centroid);
    for (int d = 0; d < n; ++d) out.at(i, d) = x(d);
  }
  return out;
}

}  // namespace detail

namespace detail {

// Rescale to unit circumradius. Every family below is vertex-transitive and
// origin-centred, so a single row fixes the radius. The common scale makes the
// edge length a family-distinguishing scalar (the canonical coordinates share
// lengths: simplex/orthoplex at sqrt(2), hypercube/icosahedron at 2).
inline constexpr double kCircumradius = 3.0;

inline Tensor unit_circumradius(Tensor v) {
  double r2 = 0;
  for (int j = 0; j < v.cols; ++j) r2 += v.at(0, j) * v.at(0, j);
  double inv = kCircumradius / std::sqrt(r2);
  for (double& x : *v.data) x *= inv;
  return v;
}

}  // namespace detail

// Vertex coordinates for each family, scaled to unit circumradius.
// Correctness is enforced by the equidistance and count oracles in the tests,
// not by citation.
inline Tensor polytope_vertices(PolytopeFamily family, int dim) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<std::vector<double>> rows;
  std::set<std::vector<long long>> seen;
  switch (family) {
    case PolytopeFamily::simplex:
      if (dim < 2) throw ConfigError("simplex requires dim >= 2");
      return detail::unit_circumradius(detail::regular_simplex(dim));
    case PolytopeFamily::hypercube: {
      if (dim < 2) throw ConfigError("hypercube requires dim >= 2");
      for (int mask = 0; mask < (1 << dim); ++mask) {
        std::vector<double> v(dim);
        for (int d = 0; d < dim; ++d) v[d] = (mask >> d) & 1 ? 1.0 : -1.0;
        rows.push_back(v);
      }
      break;
    }
    case PolytopeFamily::orthoplex: {
      if (dim < 2) throw ConfigError("orthoplex requires dim >= 2");
      for (int d = 0; d < dim; ++d)
        for (double s : {1.0, -1.0}) {
          std::vector<double> v(dim, 0.0);
          v[d] = s;
          rows.push_back(v);
        }
      break;
    }
    case PolytopeFamily::icosahedron: {
      if (dim != 3) throw ConfigError("icosahedron requires dim == 3");
      for (int rot = 0; rot < 3; ++rot) {
        std::vector<double> base = {0.0, 1.0, phi};
        std::rotate(base.begin(), base.begin() + rot, base.end());
        for (double s1 : {1.0, -1.0})
          for (double s2 : {1.0, -1.0}) {
            std::vector<double> v = base;
            for (auto& x : v) {
              if (std::abs(x) == 1.0) x *= s1;
              if (std::abs(x) == phi) x *= s2;
            }
            detail::dedup_push(rows, seen, v);
          }
      }
      break;
    }
    case PolytopeFamily::dodecahedron: {
      if (dim != 3) throw ConfigError("dodecahedron requires dim == 3");
      for (int mask = 0; mask < 8; ++mask) {
        std::vector<double> v(3);
        for (int d = 0; d < 3; ++d) v[d] = (mask >> d) & 1 ? 1.0 : -1.0;
        detail::dedup_push(rows, seen, v);
      }
      for (int rot = 0; rot < 3; ++rot) {
        std::vector<double> base = {0.0, 1.0 / phi, phi};
        std::rotate(base.begin(), base.begin() + rot, base.end());
        for (double s1 : {1.0, -1.0})
          for (double s2 : {1.0, -1.0}) {
            std::vector<double> v = base;
            for (auto& x : v) {
              if (x != 0.0 && std::abs(x) < 1.0) x *= s1;
              if (std::abs(x) > 1.0) x *= s2;
            }
            detail::dedup_push(rows, seen, v);
          }
      }
      break;
    }
    case PolytopeFamily::cell24: {
      if (dim != 4) throw ConfigError("cell24 requires dim == 4");
      detail::permutation_family(rows, seen, {1.0, 1.0, 0.0, 0.0}, false);
      break;
    }
    case PolytopeFamily::cell600: {
      if (dim != 4) throw ConfigError("cell600 requires dim == 4");
      detail::permutation_family(rows, seen, {0.5, 0.5, 0.5, 0.5}, false);
      detail::permutation_family(rows, seen, {1.0, 0.0, 0.0, 0.0}, false);
      detail::permutation_family(rows, seen, {phi / 2, 0.5, 1.0 / (2 * phi), 0.0}, true);
      break;
    }
    case PolytopeFamily::cell120: {
      if (dim != 4) throw ConfigError("cell120 requires dim == 4");
      const double r5 = std::sqrt(5.0);
      detail::permutation_family(rows, seen, {0.0, 0.0, 2.0, 2.0}, false);
      detail::permutation_family(rows, seen, {1.0, 1.0, 1.0, r5}, false);
      detail::permutation_family(rows, seen, {1.0 / (phi * phi), phi, phi, phi}, false);
      detail::permutation_family(rows, seen, {1.0 / phi, 1.0 / phi, 1.0 / phi, phi * phi}, false);
      detail::permutation_family(rows, seen, {0.0, 1.0 / (phi * phi), 1.0, phi * phi}, true);
      detail::permutation_family(rows, seen, {0.0, 1.0 / phi, phi, r5}, true);
      detail::permutation_family(rows, seen, {1.0 / phi, 1.0, phi, 2.0}, true);
      break;
    }
  }
  return detail::unit_circumradius(Tensor::from_rows(rows));
}

// Edges are exactly the vertex pairs at minimal nonzero distance (relative
// tolerance 1e-9), emitted as both directed edges.
inline std::vector<Edge> edges_by_min_distance(const Tensor& vertices) {
  int n = vertices.rows;
  if (n < 2) throw ConfigError("need at least two vertices");
  double min_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d2 = squared_distance(vertices, i, j);
      if (d2 > 0 && d2 < min_d2) min_d2 = d2;
    }
  if (!std::isfinite(min_d2)) throw DegenerateGeometryError("all vertices coincident");
  std::vector<Edge> edges;
  double cutoff = min_d2 * (1.0 + 2e-9);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d2 = squared_distance(vertices, i, j);
      if (d2 > 0 && d2 <= cutoff) {
        edges.push_back({i, j});
        edges.push_back({j, i});
      }
    }
  return edges;
}

inline std::vector<PolytopeFamily> families_for_dim(int dim) {
  if (dim == 3)
    return {PolytopeFamily::simplex, PolytopeFamily::hypercube, PolytopeFamily::orthoplex,
            PolytopeFamily::dodecahedron, PolytopeFamily::icosahedron};
  if (dim == 4)
    return {PolytopeFamily::simplex, PolytopeFamily::hypercube, PolytopeFamily::orthoplex,
            PolytopeFamily::cell24, PolytopeFamily::cell120, PolytopeFamily::cell600};
  return {PolytopeFamily::simplex, PolytopeFamily::hypercube, PolytopeFamily::orthoplex};
}

inline GraphSample polytope_graph(PolytopeFamily family, int dim, int label,
                                  bool node_features = false) {
  GraphSample g;
  g.coords = polytope_vertices(family, dim);
  g.edges = edges_by_min_distance(g.coords);
  g.angles = build_angle_set(g.edges, g.coords.rows);
  int n = g.coords.rows;
  if (node_features) {
    g.node_features = Tensor(n, 1);
    for (int i = 0; i < n; ++i) g.node_features.at(i, 0) = static_cast<double>(i) / n;
  } else {
    g.node_features = Tensor(n, 0);
  }
  g.edge_features = Tensor(static_cast<int>(g.edges.size()), 0);
  g.angle_features = Tensor(static_cast<int>(g.angles.size()), 0);
  g.global = Tensor(1, 0);
  g.label = label;
  return g;
}

struct PolytopeDatasetOptions {
  TransformFamily family = TransformFamily::orthogonal;
  TransformOptions transform;
  int copies_per_class = 20;
  bool node_features = false;
};

inline Dataset polytope_trainset(int dim, bool node_features = false) {
  if (dim < 3 || dim > 5) throw ConfigError("polytope dataset supports dim in {3,4,5}");
  Dataset ds;
  auto fams = families_for_dim(dim);
  for (std::size_t c = 0; c < fams.size(); ++c)
    ds.samples.push_back(polytope_graph(fams[c], dim, static_cast<int>(c), node_features));
  ds.meta.n_v = node_features ? 1 : 0;
  ds.meta.n_x = dim;
  ds.meta.num_classes = static_cast<int>(fams.size());
  ds.meta.provenance = "polytopes dim=" + std::to_string(dim) + " train";
  return ds;
}

inline Dataset polytope_testset(int dim, const PolytopeDatasetOptions& opt,
                                std::uint64_t seed) {
  Dataset train = polytope_trainset(dim, opt.node_features);
  Dataset ds;
  ds.meta = train.meta;
  ds.meta.provenance = "polytopes dim=" + std::to_string(dim) + " test";
  for (std::size_t c = 0; c < train.samples.size(); ++c) {
    for (int copy = 0; copy < opt.copies_per_class; ++copy) {
      Rng rng = make_rng(seed, "polytope-test-transform", c * 1000003 + copy);
      TransformSpec spec = sample_transform(opt.family, dim, opt.transform, rng);
      ds.samples.push_back(apply_transform(spec, train.samples[c]));
    }
  }
  return ds;
}

// Training set augmented with k transformed copies per class, drawn from the
// same transform distribution as the test set.
inline Dataset polytope_augmented_trainset(int dim, const PolytopeDatasetOptions& opt,
                                           int k, std::uint64_t seed) {
  if (k < 0) throw ConfigError("augmentation count must be nonnegative");
  Dataset ds = polytope_trainset(dim, opt.node_features);
  std::size_t base = ds.samples.size();
  for (std::size_t c = 0; c < base; ++c) {
    for (int copy = 0; copy < k; ++copy) {
      Rng rng = make_rng(seed, "polytope-augment-transform", c * 1000003 + copy);
      TransformSpec spec = sample_transform(opt.family, dim, opt.transform, rng);
      ds.samples.push_back(apply_transform(spec, ds.samples[c]));
    }
  }
  ds.meta.provenance = "polytopes dim=" + std::to_string(dim) + " train augmented k=" +
                       std::to_string(k);
  return ds;
}

}  // namespace equigraph
