#pragma once

#include <Eigen/Dense>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "equigraph/graph.hpp"
#include "equigraph/nn.hpp"
#include "equigraph/tensor.hpp"

namespace equigraph {

inline double squared_distance(const double* a, const double* b, int n) {
  double s = 0;
  for (int d = 0; d < n; ++d) {
    double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

inline double squared_distance(const Tensor& x, int i, int j) {
  return squared_distance(x.ptr() + static_cast<std::size_t>(i) * x.cols,
                          x.ptr() + static_cast<std::size_t>(j) * x.cols, x.cols);
}

constexpr double kRayDegeneracyThreshold = 1e-9;

// Angle at vertex i between rays toward j and k, in [0, pi].
inline double angle_at(const Tensor& x, int j, int i, int k) {
  int n = x.cols;
  const double* xi = x.ptr() + static_cast<std::size_t>(i) * n;
  const double* xj = x.ptr() + static_cast<std::size_t>(j) * n;
  const double* xk = x.ptr() + static_cast<std::size_t>(k) * n;
  double dot = 0, na = 0, nb = 0;
  for (int d = 0; d < n; ++d) {
    double a = xj[d] - xi[d], b = xk[d] - xi[d];
    dot += a * b;
    na += a * a;
    nb += b * b;
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na <= kRayDegeneracyThreshold || nb <= kRayDegeneracyThreshold)
    throw DegenerateGeometryError("degenerate ray in angle (" + std::to_string(j) +
                                  "," + std::to_string(i) + "," + std::to_string(k) + ")");
  double c = std::clamp(dot / (na * nb), -1.0 + 1e-12, 1.0 - 1e-12);
  return std::acos(c);
}

enum class TransformFamily { orthogonal, orthogonal_dilation, non_orthogonal, local };

// x~ = gamma * A * x + q, optionally restricted to a node subset.
struct TransformSpec {
  EMat A;
  Eigen::VectorXd q;
  double gamma = 1.0;
  TransformFamily family = TransformFamily::orthogonal;
  double mu = 0.0;
  std::optional<std::vector<int>> subgraph_mask;

  int dim() const { return static_cast<int>(A.rows()); }

  static TransformSpec identity(int n) {
    TransformSpec s;
    s.A = EMat::Identity(n, n);
    s.q = Eigen::VectorXd::Zero(n);
    return s;
  }
};

// Haar-uniform orthogonal matrix: QR of a standard-normal matrix with sign
// correction of R's diagonal. Both determinant signs occur.
inline EMat sample_orthogonal(int n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  EMat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = normal(rng);
  Eigen::HouseholderQR<EMat> qr(m);
  EMat q = qr.householderQ();
  EMat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) *= -1.0;
  return q;
}

namespace detail {

// E||A^T A - I||_F for A = I + eps*M over num_draws Monte-Carlo draws of M.
inline double mean_frobenius_deviation(int n, double eps, int num_draws, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  double acc = 0;
  EMat m(n, n);
  for (int d = 0; d < num_draws; ++d) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = normal(rng);
    EMat a = EMat::Identity(n, n) + eps * m;
    acc += (a.transpose() * a - EMat::Identity(n, n)).norm();
  }
  return acc / num_draws;
}

}  // namespace detail

// Bisection on eps so that E||A^T A - I||_F matches mu within 2%, cached per
// (n, mu). A = Q(I + eps*M); the statistic does not depend on Q.
inline double calibrate_non_orthogonal_eps(int n, double mu, int num_draws = 10000) {
  static std::map<std::pair<int, long long>, double> cache;
  static std::mutex cache_mutex;
  auto key = std::make_pair(n, static_cast<long long>(mu * 1e12));
  {
    std::lock_guard lock(cache_mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  if (mu == 0.0) return 0.0;
  Rng rng = make_rng(0xCA11B8A7E, "mu-calibration",
                     static_cast<std::uint64_t>(n) * 1000003 + key.second % 1000003);
  double lo = 0.0, hi = 10.0;
  if (detail::mean_frobenius_deviation(n, hi, num_draws, rng) < mu)
    throw ConfigError("mu calibration out of range");
  double eps = 0.0;
  for (int iter = 0; iter < 60; ++iter) {
    eps = 0.5 * (lo + hi);
    double v = detail::mean_frobenius_deviation(n, eps, num_draws, rng);
    if (std::abs(v - mu) <= 0.005 * mu) break;
    (v < mu ? lo : hi) = eps;
  }
  std::lock_guard lock(cache_mutex);
  cache[key] = eps;
  return eps;
}

struct TransformOptions {
  double mu = 0.0;
  double gamma_min = 0.5;
  double gamma_max = 2.0;
  double translation_range = 5.0;   // q ~ Uniform([-t,t]^n)
  bool randomize_gamma = true;      // for the non-orthogonal families
};

inline TransformSpec sample_transform(TransformFamily family, int n,
                                      const TransformOptions& opt, Rng& rng) {
  if (opt.mu < 0) throw ConfigError("mu must be nonnegative");
  if (opt.gamma_min <= 0 || opt.gamma_max < opt.gamma_min)
    throw ConfigError("invalid gamma range");
  TransformSpec s;
  s.family = family;
  s.mu = opt.mu;
  EMat q = sample_orthogonal(n, rng);
  std::uniform_real_distribution<double> ugamma(opt.gamma_min, opt.gamma_max);
  std::uniform_real_distribution<double> utrans(-opt.translation_range, opt.translation_range);
  switch (family) {
    case TransformFamily::orthogonal:
      s.A = q;
      s.gamma = 1.0;
      break;
    case TransformFamily::orthogonal_dilation:
      s.A = q;
      s.gamma = ugamma(rng);
      break;
    case TransformFamily::non_orthogonal: {
      double eps = calibrate_non_orthogonal_eps(n, opt.mu);
      std::normal_distribution<double> normal(0.0, 1.0);
      EMat m(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = normal(rng);
      s.A = q * (EMat::Identity(n, n) + eps * m);
      s.gamma = opt.randomize_gamma ? ugamma(rng) : 1.0;
      break;
    }
    case TransformFamily::local:
      throw ConfigError("local transforms are built via local_rotation_about_edge");
  }
  s.q = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) s.q(i) = utrans(rng);
  return s;
}

// 3D rotation by theta about the line through coords rows (i, j), applied to
// the masked node subset. Encoded as x -> R(x - p) + p with p = x_i.
inline TransformSpec local_rotation_about_edge(const Tensor& coords, int i, int j,
                                               double theta, std::vector<int> mask) {
  if (coords.cols != 3) throw ConfigError("local rotation fixture requires 3D coords");
  Eigen::Vector3d p(coords.at(i, 0), coords.at(i, 1), coords.at(i, 2));
  Eigen::Vector3d b(coords.at(j, 0), coords.at(j, 1), coords.at(j, 2));
  Eigen::Vector3d axis = (b - p).normalized();
  EMat r = Eigen::AngleAxisd(theta, axis).toRotationMatrix();
  TransformSpec s;
  s.family = TransformFamily::local;
  s.A = r;
  s.q = p - r * p;
  s.gamma = 1.0;
  if (mask.empty()) throw ConfigError("local transform requires a nonempty mask");
  s.subgraph_mask = std::move(mask);
  return s;
}

inline Tensor apply_transform(const TransformSpec& spec, const Tensor& coords) {
  if (coords.cols != spec.dim()) throw ConfigError("transform dimension mismatch");
  Tensor out = coords;
  out.data = std::make_shared<std::vector<double>>(*coords.data);
  auto apply_row = [&](int i) {
    Eigen::VectorXd x(coords.cols);
    for (int d = 0; d < coords.cols; ++d) x(d) = coords.at(i, d);
    Eigen::VectorXd y = spec.gamma * (spec.A * x) + spec.q;
    for (int d = 0; d < coords.cols; ++d) out.at(i, d) = y(d);
  };
  if (spec.subgraph_mask) {
    for (int i : *spec.subgraph_mask) apply_row(i);
  } else {
    for (int i = 0; i < coords.rows; ++i) apply_row(i);
  }
  return out;
}

inline GraphSample apply_transform(const TransformSpec& spec, const GraphSample& g) {
  GraphSample out = g;
  out.coords = apply_transform(spec, g.coords);
  return out;
}

// ---------------------------------------------------------------------------
// psi^x coordinate maps
// ---------------------------------------------------------------------------

enum class PsiKind { identity, weighted_neighbour_difference };
enum class PsiWeightInputs { edge_only, edge_nodes_global };

struct PsiChoice {
  PsiKind kind = PsiKind::identity;
  PsiWeightInputs weight_inputs = PsiWeightInputs::edge_nodes_global;
};

// x_i+ = x_i + sum_{j in N_i} a_ji (x_j - x_i) with given per-edge scalars.
// Non-tensor form, used as a fixture and oracle.
inline Tensor psi_weighted_apply(const Tensor& coords, const std::vector<Edge>& edges,
                                 const std::vector<double>& a) {
  if (a.size() != edges.size()) throw ConfigError("psi: weight count mismatch");
  Tensor out = coords;
  out.data = std::make_shared<std::vector<double>>(*coords.data);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    int j = edges[e].src, i = edges[e].dst;
    for (int d = 0; d < coords.cols; ++d)
      out.at(i, d) += a[e] * (coords.at(j, d) - coords.at(i, d));
  }
  return out;
}

// Tensor (differentiable) form used inside blocks: weights is |E| x 1.
inline Tensor psi_weighted_apply(const Tensor& coords, const std::vector<Edge>& edges,
                                 const Tensor& weights) {
  std::vector<int> src, dst;
  src.reserve(edges.size());
  dst.reserve(edges.size());
  for (const auto& e : edges) {
    src.push_back(e.src);
    dst.push_back(e.dst);
  }
  Tensor diff = sub(gather_rows(coords, src), gather_rows(coords, dst));
  Tensor contrib = colwise_scale(diff, weights);
  return add(coords, scatter_rows(contrib, dst, coords.rows, /*mean=*/false));
}

// Fixed-parameter global-affine psi fixtures (test-only shapes, not layers).
inline Tensor psi_global_scale(const Tensor& coords, double a) {
  Tensor out = coords;
  out.data = std::make_shared<std::vector<double>>(*coords.data);
  for (auto& v : *out.data) v *= a;
  return out;
}

inline Tensor psi_global_shift(const Tensor& coords, const std::vector<double>& a) {
  Tensor out = coords;
  out.data = std::make_shared<std::vector<double>>(*coords.data);
  for (int i = 0; i < out.rows; ++i)
    for (int d = 0; d < out.cols; ++d) out.at(i, d) += a[d];
  return out;
}

}  // namespace equigraph
