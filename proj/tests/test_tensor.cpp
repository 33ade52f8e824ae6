#include <catch2/catch_amalgamated.hpp>

#include "equigraph/nn.hpp"
#include "equigraph/tensor.hpp"

using namespace equigraph;

namespace {

Tensor randt(int r, int c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(r, c);
  for (int i = 0; i < t.size(); ++i) (*t.data)[i] = d(rng);
  return t;
}

// Central finite difference of a scalar function of one tensor coordinate.
template <typename F>
double fd(F f, Tensor& x, int idx, double h = 1e-6) {
  double saved = (*x.data)[idx];
  (*x.data)[idx] = saved + h;
  double lp = f();
  (*x.data)[idx] = saved - h;
  double lm = f();
  (*x.data)[idx] = saved;
  return (lp - lm) / (2 * h);
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Tensor a = Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  Tensor b = Tensor::from_rows({{5.0, 6.0}, {7.0, 8.0}});
  CHECK(add(a, b).at(1, 1) == 12.0);
  CHECK(sub(b, a).at(0, 0) == 4.0);
  CHECK(mul(a, b).at(0, 1) == 12.0);
  CHECK(div(b, a).at(1, 0) == Catch::Approx(7.0 / 3.0));
  CHECK(scale(a, 2.0).at(1, 0) == 6.0);
  CHECK(square(a).at(1, 1) == 16.0);
  CHECK(sqrt_op(square(a)).at(1, 1) == Catch::Approx(4.0));
}

TEST_CASE("swish at zero is zero") {
  Tensor x = Tensor::scalar(0.0);
  CHECK(swish(x).value() == 0.0);
}

TEST_CASE("matmul identity maps a vector to itself") {
  Tensor eye(3, 3);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor v = Tensor::from_rows({{1.5}, {-2.0}, {0.25}});
  Tensor r = matmul(eye, v);
  for (int i = 0; i < 3; ++i) CHECK(r.at(i, 0) == v.at(i, 0));
}

TEST_CASE("mean reduce of 1,2,3") {
  Tensor m = Tensor::from_rows({{1.0}, {2.0}, {3.0}});
  CHECK(mean_rows(m).value() == 2.0);
}

TEST_CASE("shape mismatch raises a configuration error") {
  Tensor a(2, 3), b(3, 2);
  CHECK_THROWS_AS(add(a, b), ConfigError);
  CHECK_THROWS_AS(matmul(a, Tensor(2, 2)), ConfigError);
}

TEST_CASE("backward of x squared") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::scalar(3.0);
  tape.watch(x);
  Tensor y = square(x);
  tape.backward(y);
  CHECK(tape.grad(x.node)[0] == Catch::Approx(6.0));
}

TEST_CASE("gradient of a sum of constants is zero") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::scalar(2.0);
  tape.watch(x);
  Tensor c = Tensor::from_rows({{1.0, 2.0, 3.0}});  // constant, not watched
  Tensor loss = add(square(x), scale(square(x), 0.0));
  Tensor csum = sum_rows(c);
  (void)csum;
  tape.backward(loss);
  CHECK(tape.grad(x.node)[0] == Catch::Approx(4.0));
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x(2, 2);
  tape.watch(x);
  Tensor y = square(x);
  CHECK_THROWS_AS(tape.backward(y), ConfigError);
}

TEST_CASE("structural op gradients match finite differences") {
  Rng rng(12345);
  Tensor x = randt(4, 3, rng);

  auto check_op = [&](auto make_loss) {
    std::vector<double> analytic;
    {
      Tape tape;
      TapeScope scope(tape);
      tape.watch(x);
      Tensor loss = make_loss(x);
      tape.backward(loss);
      analytic = tape.grad(x.node);
      x.node = -1;
    }
    auto eval = [&] { return make_loss(x).value(); };
    for (int i = 0; i < x.size(); ++i) {
      double numeric = fd(eval, x, i);
      CHECK(std::abs(numeric - analytic[i]) <
            1e-4 * std::max({1.0, std::abs(numeric), std::abs(analytic[i])}));
    }
  };

  SECTION("gather + scatter + reduce") {
    check_op([](const Tensor& t) {
      std::vector<int> idx = {0, 2, 2, 1, 3};
      Tensor g = gather_rows(t, idx);
      Tensor s = scatter_rows(g, {1, 0, 1, 1, 0}, 2, true);
      return sum_rows(rowwise_sum(square(s)));
    });
  }
  SECTION("concat + swish + matmul") {
    check_op([](const Tensor& t) {
      Tensor w = Tensor::from_rows({{0.3, -0.2}, {0.1, 0.4}, {-0.5, 0.2},
                                    {0.7, 0.1}, {0.2, -0.3}, {0.6, -0.6}});
      Tensor c = concat_cols({t, t});
      return sum_rows(rowwise_sum(swish(matmul(c, w))));
    });
  }
  SECTION("colwise_scale and div") {
    check_op([](const Tensor& t) {
      Tensor s = rowwise_sum(square(t));
      Tensor scaled = colwise_scale(t, s);
      Tensor denom = repeat_row(add_rowvec(Tensor(1, t.cols), sum_rows(square(t))), t.rows);
      return sum_rows(rowwise_sum(div(scaled, denom)));
    });
  }
  SECTION("acos through clamp") {
    check_op([](const Tensor& t) {
      Tensor c = clamp(t, -0.9, 0.9);
      return sum_rows(rowwise_sum(acos_clamped(scale(c, 0.5))));
    });
  }
  SECTION("softmax") {
    check_op([](const Tensor& t) {
      Tensor w = Tensor::from_rows({{1.0}, {2.0}, {-1.0}});
      return sum_rows(rowwise_sum(mul(softmax(t), repeat_row(Tensor::from_rows({{0.2, -0.4, 0.7}}), t.rows))));
    });
  }
}

TEST_CASE("random two-layer MLP gradient vs finite differences") {
  Rng rng(99);
  ParameterStore store;
  Mlp mlp(store, "mlp", {5, 8, 3}, rng);
  Tensor input = randt(4, 5, rng);

  auto loss_fn = [&] {
    Tensor out = mlp.forward(store, input);
    return sum_rows(rowwise_sum(square(out))).value();
  };

  Tape tape;
  std::vector<std::vector<double>> grads;
  {
    TapeScope scope(tape);
    store.watch_all(tape);
    Tensor out = mlp.forward(store, input);
    Tensor loss = sum_rows(rowwise_sum(square(out)));
    grads = backward_gradients(tape, loss, store);
    store.unwatch_all();
  }

  double max_rel = 0;
  for (int p = 0; p < store.count(); ++p) {
    Tensor& param = store.value(p);
    for (int i = 0; i < param.size(); ++i) {
      double numeric = fd(loss_fn, param, i);
      double an = grads[p][i];
      if (std::max(std::abs(numeric), std::abs(an)) < 1e-10) continue;
      max_rel = std::max(max_rel,
                         std::abs(numeric - an) / std::max(std::abs(numeric), std::abs(an)));
    }
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("cross entropy with logits matches log-softmax and its gradient") {
  Tape tape;
  TapeScope scope(tape);
  Tensor logits = Tensor::from_rows({{0.5, -1.0, 2.0}});
  tape.watch(logits);
  Tensor loss = cross_entropy_with_logits(logits, 2);
  double z = std::exp(0.5) + std::exp(-1.0) + std::exp(2.0);
  CHECK(loss.value() == Catch::Approx(std::log(z) - 2.0));
  tape.backward(loss);
  auto g = tape.grad(logits.node);
  CHECK(g[0] == Catch::Approx(std::exp(0.5) / z));
  CHECK(g[2] == Catch::Approx(std::exp(2.0) / z - 1.0));
}

TEST_CASE("adam") {
  SECTION("zero gradient leaves parameters unchanged") {
    ParameterStore store;
    Rng rng(1);
    store.add("p", glorot_uniform(2, 2, rng));
    std::vector<double> before = *store.value(0).data;
    AdamState adam(store, 0.01);
    adam.step(store, {std::vector<double>(4, 0.0)});
    CHECK(*store.value(0).data == before);
    CHECK(adam.step_count() == 1);
  }
  SECTION("first step moves against the gradient sign by about lr") {
    ParameterStore store;
    Tensor p(1, 2);
    store.add("p", p);
    AdamState adam(store, 0.01);
    adam.step(store, {{0.5, -3.0}});
    CHECK(store.value(0).at(0, 0) == Catch::Approx(-0.01).epsilon(1e-4));
    CHECK(store.value(0).at(0, 1) == Catch::Approx(0.01).epsilon(1e-4));
  }
  SECTION("missing gradient is rejected") {
    ParameterStore store;
    store.add("p", Tensor(1, 2));
    AdamState adam(store);
    CHECK_THROWS_AS(adam.step(store, {}), ConfigError);
  }
  SECTION("quadratic bowl is minimized within 2000 steps") {
    ParameterStore store;
    Tensor x0(1, 3);
    x0.at(0, 0) = 1.0;
    x0.at(0, 1) = -2.0;
    x0.at(0, 2) = 0.5;
    store.add("x", x0);
    AdamState adam(store, 0.01);
    for (int i = 0; i < 2000; ++i) {
      Tape tape;
      TapeScope scope(tape);
      store.watch_all(tape);
      Tensor loss = sum_rows(rowwise_sum(square(store.value(0))));
      auto grads = backward_gradients(tape, loss, store);
      store.unwatch_all();
      adam.step(store, grads);
    }
    double norm = 0;
    for (double v : *store.value(0).data) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-3);
  }
}

TEST_CASE("dropout is deterministic per seed and off in evaluation") {
  Rng rng(5);
  Tensor m = randt(3, 4, rng);
  Tensor a = dropout(m, 0.5, 77, 0, true);
  Tensor b = dropout(m, 0.5, 77, 0, true);
  CHECK(*a.data == *b.data);
  Tensor c = dropout(m, 0.5, 77, 0, false);
  CHECK(*c.data == *m.data);
  CHECK_THROWS_AS(dropout(m, 1.0, 0, 0, true), ConfigError);
}

TEST_CASE("parameter checkpoint JSON round-trips bit-for-bit") {
  Rng rng(2024);
  ParameterStore store;
  store.add("a", randt(3, 5, rng));
  store.add("b", randt(1, 7, rng, 1e-9));
  std::vector<std::vector<double>> before;
  for (int i = 0; i < store.count(); ++i) before.push_back(*store.value(i).data);
  auto text = store.to_json().dump();
  ParameterStore loaded;
  loaded.add("a", Tensor(3, 5));
  loaded.add("b", Tensor(1, 7));
  loaded.from_json(nlohmann::json::parse(text));
  for (int i = 0; i < loaded.count(); ++i) CHECK(*loaded.value(i).data == before[i]);
}
