#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "equigraph/tensor.hpp"

namespace equigraph {

enum class Activation { swish, identity };

// Named, persistently-owned parameters. Values survive across passes; each
// forward pass watches them onto a fresh tape.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  int add(const std::string& name, Tensor init) {
    entries_.push_back({name, std::move(init)});
    return static_cast<int>(entries_.size()) - 1;
  }

  Tensor& value(int id) { return entries_[id].value; }
  const Tensor& value(int id) const { return entries_[id].value; }
  const std::string& name(int id) const { return entries_[id].name; }
  int count() const { return static_cast<int>(entries_.size()); }

  void watch_all(Tape& tape) {
    for (auto& e : entries_) tape.watch(e.value);
  }

  void unwatch_all() {
    for (auto& e : entries_) e.value.node = -1;
  }

  std::size_t coordinate_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& e : entries_) {
      j[e.name] = {{"shape", {e.value.rows, e.value.cols}},
                   {"data", *e.value.data}};
    }
    return j;
  }

  void from_json(const nlohmann::json& j) {
    for (auto& e : entries_) {
      if (!j.contains(e.name)) throw ConfigError("checkpoint missing parameter " + e.name);
      const auto& p = j.at(e.name);
      int r = p.at("shape").at(0), c = p.at("shape").at(1);
      if (r != e.value.rows || c != e.value.cols)
        throw ConfigError("checkpoint shape mismatch for " + e.name);
      *e.value.data = p.at("data").get<std::vector<double>>();
    }
  }

 private:
  std::vector<Entry> entries_;
};

// Uniform Glorot-style fan-based init.
inline Tensor glorot_uniform(int rows, int cols, Rng& rng) {
  Tensor t(rows, cols);
  double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (int i = 0; i < t.size(); ++i) (*t.data)[i] = dist(rng);
  return t;
}

// Multi-layer perceptron over row batches: input [R x widths.front()],
// output [R x widths.back()]. Activation after every layer but the last.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, std::vector<int> widths,
      Rng& rng, Activation act = Activation::swish, double dropout_rate = 0.0)
      : widths_(std::move(widths)), act_(act), dropout_rate_(dropout_rate) {
    if (widths_.size() < 2) throw ConfigError("Mlp needs at least two widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      weights_.push_back(store.add(name + ".w" + std::to_string(l),
                                   glorot_uniform(widths_[l], widths_[l + 1], rng)));
      Tensor b(1, widths_[l + 1]);
      biases_.push_back(store.add(name + ".b" + std::to_string(l), std::move(b)));
    }
  }

  Tensor forward(ParameterStore& store, const Tensor& x, bool training = false,
                 std::uint64_t dropout_seed = 0, std::uint64_t* dropout_counter = nullptr) const {
    if (x.cols != widths_.front()) throw ConfigError("Mlp: input width mismatch");
    Tensor h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = add_rowvec(matmul(h, store.value(weights_[l])), store.value(biases_[l]));
      if (l + 1 < weights_.size()) {
        if (act_ == Activation::swish) h = swish(h);
        if (dropout_rate_ > 0.0 && training && dropout_counter)
          h = dropout(h, dropout_rate_, dropout_seed, (*dropout_counter)++, true);
      }
    }
    return h;
  }

  int in_width() const { return widths_.front(); }
  int out_width() const { return widths_.back(); }

 private:
  std::vector<int> widths_;
  std::vector<int> weights_, biases_;
  Activation act_ = Activation::swish;
  double dropout_rate_ = 0.0;
};

// Standard Adam over all entries of a ParameterStore.
class AdamState {
 public:
  explicit AdamState(const ParameterStore& store, double lr = 1e-3,
                     double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (int i = 0; i < store.count(); ++i) {
      m_.emplace_back(store.value(i).size(), 0.0);
      v_.emplace_back(store.value(i).size(), 0.0);
    }
  }

  // grads[i] must cover parameter i (same length).
  void step(ParameterStore& store, const std::vector<std::vector<double>>& grads) {
    if (static_cast<int>(grads.size()) != store.count())
      throw ConfigError("adam: gradient map does not cover all parameters");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (int p = 0; p < store.count(); ++p) {
      auto& val = *store.value(p).data;
      if (grads[p].size() != val.size())
        throw ConfigError("adam: gradient size mismatch for " + store.name(p));
      for (std::size_t i = 0; i < val.size(); ++i) {
        double g = grads[p][i];
        m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g;
        v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g * g;
        val[i] -= lr_ * (m_[p][i] / bc1) / (std::sqrt(v_[p][i] / bc2) + eps_);
      }
    }
  }

  int step_count() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Runs one backward pass and collects per-parameter gradients (zeros where a
// parameter did not participate).
inline std::vector<std::vector<double>> backward_gradients(Tape& tape,
                                                           const Tensor& loss,
                                                           ParameterStore& store) {
  tape.backward(loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(store.count());
  for (int i = 0; i < store.count(); ++i) {
    const Tensor& p = store.value(i);
    if (p.node >= 0 && tape.has_grad(p.node))
      grads.push_back(tape.grad(p.node));
    else
      grads.emplace_back(p.size(), 0.0);
  }
  return grads;
}

}  // namespace equigraph
