#include <catch2/catch_amalgamated.hpp>

#include "equigraph/geometry.hpp"
#include "equigraph/harness.hpp"

using namespace equigraph;

namespace {

Tensor random_coords(int n, int dim, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(n, dim);
  for (int i = 0; i < t.size(); ++i) (*t.data)[i] = d(rng);
  return t;
}

}  // namespace

TEST_CASE("squared distance oracle") {
  Tensor x = Tensor::from_rows({{0.0, 0.0, 0.0}, {3.0, 4.0, 0.0}});
  CHECK(squared_distance(x, 0, 1) == 25.0);
  CHECK(squared_distance(x, 1, 0) == 25.0);
}

TEST_CASE("angle oracles") {
  Tensor x = Tensor::from_rows({{1.0, 0.0}, {0.0, 0.0}, {0.0, 1.0}});
  CHECK(angle_at(x, 0, 1, 2) == Catch::Approx(M_PI / 2).margin(1e-10));
  CHECK(angle_at(x, 2, 1, 0) == Catch::Approx(M_PI / 2).margin(1e-10));
  Tensor eq = Tensor::from_rows({{0.0, 0.0}, {1.0, 0.0}, {0.5, std::sqrt(3.0) / 2}});
  CHECK(angle_at(eq, 1, 0, 2) == Catch::Approx(M_PI / 3).margin(1e-10));
}

TEST_CASE("angles satisfy the law of cosines on random triangles") {
  Rng rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = random_coords(3, 3, rng);
    double a2 = squared_distance(x, 1, 2);
    double b2 = squared_distance(x, 0, 1);
    double c2 = squared_distance(x, 0, 2);
    double theta = angle_at(x, 1, 0, 2);
    CHECK(a2 == Catch::Approx(b2 + c2 - 2 * std::sqrt(b2 * c2) * std::cos(theta))
                    .margin(1e-9));
  }
}

TEST_CASE("degenerate rays are rejected with the offending triple") {
  Tensor x = Tensor::from_rows({{0.0, 0.0}, {0.0, 0.0}, {1.0, 0.0}});
  CHECK_THROWS_AS(angle_at(x, 0, 1, 2), DegenerateGeometryError);
  try {
    angle_at(x, 0, 1, 2);
  } catch (const DegenerateGeometryError& e) {
    CHECK(std::string(e.what()).find("(0,1,2)") != std::string::npos);
  }
}

TEST_CASE("Haar orthogonal sampling") {
  Rng rng = make_rng(3, "haar-test");
  int plus = 0, minus = 0;
  for (int t = 0; t < 1000; ++t) {
    EMat q = sample_orthogonal(3, rng);
    CHECK((q.transpose() * q - EMat::Identity(3, 3)).norm() < 1e-12);
    double det = q.determinant();
    CHECK(std::abs(std::abs(det) - 1.0) < 1e-12);
    (det > 0 ? plus : minus)++;
  }
  // Both determinant signs occur with substantial frequency.
  CHECK(plus > 300);
  CHECK(minus > 300);
}

TEST_CASE("mu calibration reproduces the target deviation", "[slow]") {
  double eps = calibrate_non_orthogonal_eps(3, 0.5);
  Rng rng = make_rng(17, "mu-verify");
  double v = 0;
  std::normal_distribution<double> normal(0.0, 1.0);
  int draws = 20000;
  for (int d = 0; d < draws; ++d) {
    EMat m(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = normal(rng);
    EMat a = EMat::Identity(3, 3) + eps * m;
    v += (a.transpose() * a - EMat::Identity(3, 3)).norm();
  }
  v /= draws;
  CHECK(v > 0.49);
  CHECK(v < 0.51);
  // cache hit returns the identical value
  CHECK(calibrate_non_orthogonal_eps(3, 0.5) == eps);
  CHECK(calibrate_non_orthogonal_eps(3, 0.0) == 0.0);
}

TEST_CASE("sampled transforms have the advertised structure") {
  Rng rng = make_rng(5, "transform-test");
  SECTION("orthogonal: gamma 1, A orthogonal") {
    auto s = sample_transform(TransformFamily::orthogonal, 4, {}, rng);
    CHECK(s.gamma == 1.0);
    CHECK((s.A.transpose() * s.A - EMat::Identity(4, 4)).norm() < 1e-12);
  }
  SECTION("dilation: gamma within range") {
    TransformOptions opt;
    opt.gamma_min = 0.5;
    opt.gamma_max = 2.0;
    for (int t = 0; t < 50; ++t) {
      auto s = sample_transform(TransformFamily::orthogonal_dilation, 3, opt, rng);
      CHECK(s.gamma >= 0.5);
      CHECK(s.gamma <= 2.0);
    }
  }
  SECTION("non-orthogonal: A is not orthogonal for mu = 1.5") {
    TransformOptions opt;
    opt.mu = 1.5;
    auto s = sample_transform(TransformFamily::non_orthogonal, 3, opt, rng);
    CHECK((s.A.transpose() * s.A - EMat::Identity(3, 3)).norm() > 0.1);
  }
  SECTION("invalid options are rejected") {
    TransformOptions opt;
    opt.mu = -1.0;
    CHECK_THROWS_AS(sample_transform(TransformFamily::non_orthogonal, 3, opt, rng),
                    ConfigError);
    TransformOptions bad_gamma;
    bad_gamma.gamma_min = 2.0;
    bad_gamma.gamma_max = 0.5;
    CHECK_THROWS_AS(sample_transform(TransformFamily::orthogonal, 3, bad_gamma, rng),
                    ConfigError);
  }
}

TEST_CASE("orthogonal transforms preserve distances and angles") {
  Rng rng = make_rng(6, "preserve-test");
  Tensor x = random_coords(6, 3, rng);
  auto spec = sample_transform(TransformFamily::orthogonal, 3, {}, rng);
  Tensor y = apply_transform(spec, x);
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j)
      CHECK(squared_distance(y, i, j) == Catch::Approx(squared_distance(x, i, j)).margin(1e-9));
  CHECK(angle_at(y, 0, 1, 2) == Catch::Approx(angle_at(x, 0, 1, 2)).margin(1e-10));
}

TEST_CASE("dilations preserve angles but scale distances by gamma^2") {
  Rng rng = make_rng(7, "dilate-test");
  Tensor x = random_coords(5, 3, rng);
  TransformOptions opt;
  opt.gamma_min = 1.7;
  opt.gamma_max = 1.7;
  auto spec = sample_transform(TransformFamily::orthogonal_dilation, 3, opt, rng);
  Tensor y = apply_transform(spec, x);
  CHECK(squared_distance(y, 0, 1) ==
        Catch::Approx(1.7 * 1.7 * squared_distance(x, 0, 1)).epsilon(1e-10));
  CHECK(angle_at(y, 0, 1, 2) == Catch::Approx(angle_at(x, 0, 1, 2)).margin(1e-10));
}

TEST_CASE("local rotation about a shared edge preserves all graph angles") {
  GraphSample g = local_transform_fixture();
  auto spec = local_rotation_about_edge(g.coords, 2, 3, 1.1, {3, 4, 5});
  GraphSample h = apply_transform(spec, g);
  // untransformed side untouched
  for (int i : {0, 1, 2})
    for (int d = 0; d < 3; ++d) CHECK(h.coords.at(i, d) == Catch::Approx(g.coords.at(i, d)).margin(1e-12));
  for (const auto& e : g.edges)
    CHECK(squared_distance(h.coords, e.src, e.dst) ==
          Catch::Approx(squared_distance(g.coords, e.src, e.dst)).margin(1e-9));
  for (const auto& a : g.angles)
    CHECK(angle_at(h.coords, a.j, a.i, a.k) ==
          Catch::Approx(angle_at(g.coords, a.j, a.i, a.k)).margin(1e-9));
  // but it genuinely moves the masked subgraph
  CHECK(max_abs_diff(h.coords, g.coords) > 1e-3);
}

TEST_CASE("weighted neighbour difference map: oracle vs differentiable form") {
  Rng rng = make_rng(8, "psi-test");
  Tensor x = random_coords(5, 3, rng);
  std::vector<Edge> edges = {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {3, 4}, {4, 3}, {0, 4}};
  std::uniform_real_distribution<double> uw(-0.2, 0.2);
  std::vector<double> a(edges.size());
  Tensor wt(static_cast<int>(edges.size()), 1);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    a[e] = uw(rng);
    wt.at(static_cast<int>(e), 0) = a[e];
  }
  Tensor o1 = psi_weighted_apply(x, edges, a);
  Tensor o2 = psi_weighted_apply(x, edges, wt);
  CHECK(max_abs_diff(o1, o2) < 1e-14);
  // hand oracle for node 1: incoming edges are {0,1} (a[0]) and {2,1} (a[3])
  for (int d = 0; d < 3; ++d) {
    double expect = x.at(1, d) + a[0] * (x.at(0, d) - x.at(1, d)) +
                    a[3] * (x.at(2, d) - x.at(1, d));
    CHECK(o1.at(1, d) == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("weighted map commutes with gamma Q x + q") {
  Rng rng = make_rng(9, "psi-commute");
  Tensor x = random_coords(6, 3, rng);
  std::vector<Edge> edges = {{0, 1}, {1, 0}, {1, 2}, {2, 3}, {3, 2}, {4, 5}, {5, 0}};
  std::uniform_real_distribution<double> uw(-0.3, 0.3);
  std::vector<double> a(edges.size());
  for (auto& w : a) w = uw(rng);
  TransformOptions opt;
  opt.gamma_min = 0.3;
  opt.gamma_max = 3.0;
  auto spec = sample_transform(TransformFamily::orthogonal_dilation, 3, opt, rng);
  Tensor lhs = psi_weighted_apply(apply_transform(spec, x), edges, a);
  Tensor rhs = apply_transform(spec, psi_weighted_apply(x, edges, a));
  CHECK(max_abs_diff(lhs, rhs) < 1e-9);
}

TEST_CASE("global psi fixtures") {
  Tensor x = Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  Tensor s = psi_global_scale(x, 2.0);
  CHECK(s.at(1, 1) == 8.0);
  Tensor t = psi_global_shift(x, {1.0, -1.0});
  CHECK(t.at(0, 0) == 2.0);
  CHECK(t.at(0, 1) == 1.0);
}
