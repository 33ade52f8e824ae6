#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "equigraph/rng.hpp"

namespace equigraph {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateGeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

Tape*& active_tape();

// Dense rank-2 tensor of doubles, row-major. Vectors are 1xC or Rx1.
// node >= 0 links the value into the active gradient tape.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::shared_ptr<std::vector<double>> data;
  int node = -1;

  Tensor() = default;
  Tensor(int r, int c)
      : rows(r), cols(c),
        data(std::make_shared<std::vector<double>>(
            static_cast<std::size_t>(r) * c, 0.0)) {
    if (r < 0 || c < 0) throw ConfigError("negative tensor extent");
  }
  static Tensor scalar(double v) {
    Tensor t(1, 1);
    (*t.data)[0] = v;
    return t;
  }
  static Tensor from_rows(const std::vector<std::vector<double>>& rows_in) {
    int r = static_cast<int>(rows_in.size());
    int c = r ? static_cast<int>(rows_in[0].size()) : 0;
    Tensor t(r, c);
    for (int i = 0; i < r; ++i) {
      if (static_cast<int>(rows_in[i].size()) != c)
        throw ConfigError("ragged rows in tensor construction");
      for (int j = 0; j < c; ++j) t.at(i, j) = rows_in[i][j];
    }
    return t;
  }

  int size() const { return rows * cols; }
  double& at(int i, int j) { return (*data)[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return (*data)[static_cast<std::size_t>(i) * cols + j]; }
  double value() const {
    assert(size() == 1);
    return (*data)[0];
  }
  const double* ptr() const { return data->data(); }
  double* ptr() { return data->data(); }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

inline CMap emap(const Tensor& t) { return CMap(t.ptr(), t.rows, t.cols); }
inline MMap emap(Tensor& t) { return MMap(t.ptr(), t.rows, t.cols); }

// Reverse-mode tape. Single use: record one forward pass, run backward once,
// then discard. Confined to one logical thread.
class Tape {
 public:
  int add_node(int size, std::function<void(Tape&)> back = nullptr) {
    sizes_.push_back(size);
    backs_.push_back(std::move(back));
    grads_.emplace_back();
    return static_cast<int>(sizes_.size()) - 1;
  }

  void set_back(int node, std::function<void(Tape&)> back) {
    backs_[node] = std::move(back);
  }

  // Registers a leaf (parameter or tracked input).
  void watch(Tensor& t) { t.node = add_node(t.size()); }

  std::vector<double>& grad(int node) {
    auto& g = grads_[node];
    if (g.empty()) g.assign(sizes_[node], 0.0);
    return g;
  }

  bool has_grad(int node) const { return !grads_[node].empty(); }

  void backward(const Tensor& loss) {
    if (loss.size() != 1 || loss.node < 0)
      throw ConfigError("backward requires a scalar tensor on the tape");
    grad(loss.node)[0] = 1.0;
    for (int i = loss.node; i >= 0; --i) {
      if (!grads_[i].empty() && backs_[i]) backs_[i](*this);
    }
  }

  std::size_t num_nodes() const { return sizes_.size(); }

 private:
  std::vector<int> sizes_;
  std::vector<std::function<void(Tape&)>> backs_;
  std::vector<std::vector<double>> grads_;
};

inline Tape*& active_tape() {
  thread_local Tape* t = nullptr;
  return t;
}

// RAII scope activating a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(active_tape()) { active_tape() = &t; }
  ~TapeScope() { active_tape() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline bool tracked(const Tensor& t) { return t.node >= 0 && active_tape(); }

inline void accumulate(Tape& tp, int node, const std::vector<double>& delta) {
  auto& g = tp.grad(node);
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops. Each op computes the forward value and, if
// a tape is active and an input is tracked, records a backward closure.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ConfigError("add: shape mismatch");
  Tensor c(a.rows, a.cols);
  emap(c) = emap(a) + emap(b);
  Tape* tp = active_tape();
  if (tp && (a.node >= 0 || b.node >= 0)) {
    int an = a.node, bn = b.node;
    c.node = tp->add_node(c.size(), [an, bn, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      if (an >= 0) detail::accumulate(t, an, g);
      if (bn >= 0) detail::accumulate(t, bn, g);
    });
  }
  return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ConfigError("sub: shape mismatch");
  Tensor c(a.rows, a.cols);
  emap(c) = emap(a) - emap(b);
  Tape* tp = active_tape();
  if (tp && (a.node >= 0 || b.node >= 0)) {
    int an = a.node, bn = b.node;
    c.node = tp->add_node(c.size(), [an, bn, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      if (an >= 0) detail::accumulate(t, an, g);
      if (bn >= 0) {
        auto& gb = t.grad(bn);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return c;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ConfigError("mul: shape mismatch");
  Tensor c(a.rows, a.cols);
  emap(c) = emap(a).cwiseProduct(emap(b));
  Tape* tp = active_tape();
  if (tp && (a.node >= 0 || b.node >= 0)) {
    int an = a.node, bn = b.node;
    auto ad = a.data, bd = b.data;
    c.node = tp->add_node(c.size(), [an, bn, ad, bd, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      if (an >= 0) {
        auto& ga = t.grad(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bd)[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad(bn);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*ad)[i];
      }
    });
  }
  return c;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ConfigError("div: shape mismatch");
  Tensor c(a.rows, a.cols);
  emap(c) = emap(a).cwiseQuotient(emap(b));
  Tape* tp = active_tape();
  if (tp && (a.node >= 0 || b.node >= 0)) {
    int an = a.node, bn = b.node;
    auto ad = a.data, bd = b.data;
    c.node = tp->add_node(c.size(), [an, bn, ad, bd, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      if (an >= 0) {
        auto& ga = t.grad(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*bd)[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad(bn);
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[i] -= g[i] * (*ad)[i] / ((*bd)[i] * (*bd)[i]);
      }
    });
  }
  return c;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor c(a.rows, a.cols);
  emap(c) = emap(a) * s;
  Tape* tp = active_tape();
  if (tp && a.node >= 0) {
    int an = a.node;
    c.node = tp->add_node(c.size(), [an, s, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& ga = t.grad(an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return c;
}

inline Tensor square(const Tensor& a) { return mul(a, a); }

inline Tensor sqrt_op(const Tensor& a) {
  Tensor c(a.rows, a.cols);
  for (int i = 0; i < a.size(); ++i) {
    double v = (*a.data)[i];
    if (v < 0) throw ConfigError("sqrt of negative value");
    (*c.data)[i] = std::sqrt(v);
  }
  Tape* tp = active_tape();
  if (tp && a.node >= 0) {
    int an = a.node;
    auto cd = c.data;
    c.node = tp->add_node(c.size(), [an, cd, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& ga = t.grad(an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / (*cd)[i];
    });
  }
  return c;
}

inline Tensor clamp(const Tensor& a, double lo, double hi) {
  Tensor c(a.rows, a.cols);
  for (int i = 0; i < a.size(); ++i)
    (*c.data)[i] = std::min(hi, std::max(lo, (*a.data)[i]));
  Tape* tp = active_tape();
  if (tp && a.node >= 0) {
    int an = a.node;
    auto ad = a.data;
    c.node = tp->add_node(c.size(), [an, ad, lo, hi, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& ga = t.grad(an);
      for (std::size_t i = 0; i < g.size(); ++i)
        if ((*ad)[i] > lo && (*ad)[i] < hi) ga[i] += g[i];
    });
  }
  return c;
}

// acos through the mandatory clamp; gradient is finite on all accepted inputs.
inline Tensor acos_clamped(const Tensor& a, double eps = 1e-12) {
  Tensor x = clamp(a, -1.0 + eps, 1.0 - eps);
  Tensor c(x.rows, x.cols);
  for (int i = 0; i < x.size(); ++i) (*c.data)[i] = std::acos((*x.data)[i]);
  Tape* tp = active_tape();
  if (tp && x.node >= 0) {
    int xn = x.node;
    auto xd = x.data;
    c.node = tp->add_node(c.size(), [xn, xd, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& gx = t.grad(xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double v = (*xd)[i];
        gx[i] += -g[i] / std::sqrt(1.0 - v * v);
      }
    });
  }
  return c;
}

inline Tensor swish(const Tensor& a) {
  Tensor c(a.rows, a.cols);
  for (int i = 0; i < a.size(); ++i) {
    double x = (*a.data)[i];
    (*c.data)[i] = x / (1.0 + std::exp(-x));
  }
  Tape* tp = active_tape();
  if (tp && a.node >= 0) {
    int an = a.node;
    auto ad = a.data;
    c.node = tp->add_node(c.size(), [an, ad, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& ga = t.grad(an);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = (*ad)[i];
        double s = 1.0 / (1.0 + std::exp(-x));
        ga[i] += g[i] * (s + x * s * (1.0 - s));
      }
    });
  }
  return c;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols != b.rows) throw ConfigError("matmul: inner dimension mismatch");
  Tensor c(a.rows, b.cols);
  // Row-by-row products: each output row's rounding then depends only on the
  // row's values, never its index, so row permutations commute bit-exactly
  // (blocked GEMM kernels round differently near panel boundaries).
  if (a.cols > 0) {
    auto bm = emap(b);
    for (int i = 0; i < a.rows; ++i) emap(c).row(i) = emap(a).row(i) * bm;
  }
  Tape* tp = active_tape();
  if (tp && (a.node >= 0 || b.node >= 0)) {
    int an = a.node, bn = b.node;
    auto ad = a.data, bd = b.data;
    int m = a.rows, k = a.cols, n = b.cols;
    c.node = tp->add_node(c.size(), [an, bn, ad, bd, m, k, n,
                                     cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      CMap G(g.data(), m, n);
      if (an >= 0 && k > 0) {
        auto& ga = t.grad(an);
        MMap(ga.data(), m, k).noalias() += G * CMap(bd->data(), k, n).transpose();
      }
      if (bn >= 0 && k > 0) {
        auto& gb = t.grad(bn);
        MMap(gb.data(), k, n).noalias() += CMap(ad->data(), m, k).transpose() * G;
      }
    });
  }
  return c;
}

// Adds a 1xC row vector to every row of M (bias broadcast).
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  if (v.rows != 1 || v.cols != m.cols) throw ConfigError("add_rowvec: shape mismatch");
  Tensor c(m.rows, m.cols);
  emap(c) = emap(m).rowwise() + emap(v).row(0);
  Tape* tp = active_tape();
  if (tp && (m.node >= 0 || v.node >= 0)) {
    int mn = m.node, vn = v.node;
    int R = m.rows, C = m.cols;
    c.node = tp->add_node(c.size(), [mn, vn, R, C, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      if (mn >= 0) detail::accumulate(t, mn, g);
      if (vn >= 0) {
        auto& gv = t.grad(vn);
        for (int i = 0; i < R; ++i)
          for (int j = 0; j < C; ++j) gv[j] += g[static_cast<std::size_t>(i) * C + j];
      }
    });
  }
  return c;
}

// Repeats a 1xC row R times.
inline Tensor repeat_row(const Tensor& v, int r) {
  if (v.rows != 1) throw ConfigError("repeat_row: expected a row vector");
  Tensor c(r, v.cols);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < v.cols; ++j) c.at(i, j) = v.at(0, j);
  Tape* tp = active_tape();
  if (tp && v.node >= 0) {
    int vn = v.node, C = v.cols;
    c.node = tp->add_node(c.size(), [vn, r, C, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& gv = t.grad(vn);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < C; ++j) gv[j] += g[static_cast<std::size_t>(i) * C + j];
    });
  }
  return c;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  int rows = -1, cols = 0;
  for (const auto& p : parts) {
    if (p.cols == 0) continue;
    if (rows < 0) rows = p.rows;
    if (p.rows != rows) throw ConfigError("concat_cols: row count mismatch");
    cols += p.cols;
  }
  if (rows < 0) rows = parts.empty() ? 0 : parts[0].rows;
  Tensor c(rows, cols);
  int off = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.cols == 0) continue;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < p.cols; ++j) c.at(i, off + j) = p.at(i, j);
    off += p.cols;
    if (p.node >= 0) track = true;
  }
  Tape* tp = active_tape();
  if (tp && track) {
    struct Part { int node, cols, off; };
    std::vector<Part> ps;
    int o = 0;
    for (const auto& p : parts) {
      if (p.cols == 0) continue;
      ps.push_back({p.node, p.cols, o});
      o += p.cols;
    }
    c.node = tp->add_node(c.size(), [ps, rows, cols, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      for (const auto& p : ps) {
        if (p.node < 0) continue;
        auto& gp = t.grad(p.node);
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < p.cols; ++j)
            gp[static_cast<std::size_t>(i) * p.cols + j] +=
                g[static_cast<std::size_t>(i) * cols + p.off + j];
      }
    });
  }
  return c;
}

inline Tensor gather_rows(const Tensor& m, const std::vector<int>& idx) {
  Tensor c(static_cast<int>(idx.size()), m.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= m.rows) throw ConfigError("gather_rows: index out of range");
    for (int j = 0; j < m.cols; ++j) c.at(static_cast<int>(i), j) = m.at(idx[i], j);
  }
  Tape* tp = active_tape();
  if (tp && m.node >= 0) {
    int mn = m.node, C = m.cols;
    c.node = tp->add_node(c.size(), [mn, idx, C, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& gm = t.grad(mn);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < C; ++j)
          gm[static_cast<std::size_t>(idx[i]) * C + j] += g[i * C + j];
    });
  }
  return c;
}

// Sums row i of m into output row dst[i]. Rows with no contribution stay zero
// (the empty-aggregation convention). Mean divides by the per-row count.
inline Tensor scatter_rows(const Tensor& m, const std::vector<int>& dst, int n_out,
                           bool mean) {
  if (static_cast<int>(dst.size()) != m.rows)
    throw ConfigError("scatter_rows: index count mismatch");
  std::vector<double> inv_count;
  if (mean) {
    std::vector<int> count(n_out, 0);
    for (int d : dst) ++count[d];
    inv_count.resize(n_out);
    for (int i = 0; i < n_out; ++i) inv_count[i] = count[i] ? 1.0 / count[i] : 0.0;
  }
  Tensor c(n_out, m.cols);
  // Accumulate each output cell in sorted-value order so the result is
  // independent of row order; node-permutation invariance is then exact.
  std::vector<std::vector<int>> rows_for(n_out);
  for (int i = 0; i < m.rows; ++i) rows_for[dst[i]].push_back(i);
  std::vector<double> buf;
  for (int r = 0; r < n_out; ++r) {
    double w = mean ? inv_count[r] : 1.0;
    for (int j = 0; j < m.cols; ++j) {
      buf.clear();
      for (int i : rows_for[r]) buf.push_back(m.at(i, j));
      std::sort(buf.begin(), buf.end());
      double s = 0;
      for (double v : buf) s += v;
      c.at(r, j) = w * s;
    }
  }
  Tape* tp = active_tape();
  if (tp && m.node >= 0) {
    int mn = m.node, C = m.cols;
    c.node = tp->add_node(c.size(), [mn, dst, inv_count, mean, C,
                                     cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& gm = t.grad(mn);
      for (std::size_t i = 0; i < dst.size(); ++i) {
        double w = mean ? inv_count[dst[i]] : 1.0;
        for (int j = 0; j < C; ++j)
          gm[i * C + j] += w * g[static_cast<std::size_t>(dst[i]) * C + j];
      }
    });
  }
  return c;
}

// Reduces all rows to a single 1xC row.
inline Tensor reduce_rows(const Tensor& m, bool mean) {
  Tensor c(1, m.cols);
  double w = (mean && m.rows > 0) ? 1.0 / m.rows : 1.0;
  // Sorted accumulation, for the same row-order independence as scatter_rows.
  std::vector<double> buf(m.rows);
  for (int j = 0; j < m.cols; ++j) {
    for (int i = 0; i < m.rows; ++i) buf[i] = m.at(i, j);
    std::sort(buf.begin(), buf.end());
    double s = 0;
    for (double v : buf) s += v;
    c.at(0, j) = w * s;
  }
  Tape* tp = active_tape();
  if (tp && m.node >= 0) {
    int mn = m.node, R = m.rows, C = m.cols;
    c.node = tp->add_node(c.size(), [mn, R, C, w, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& gm = t.grad(mn);
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) gm[static_cast<std::size_t>(i) * C + j] += w * g[j];
    });
  }
  return c;
}

inline Tensor sum_rows(const Tensor& m) { return reduce_rows(m, false); }
inline Tensor mean_rows(const Tensor& m) { return reduce_rows(m, true); }

// Per-row sum across columns, producing Rx1.
inline Tensor rowwise_sum(const Tensor& m) {
  Tensor c(m.rows, 1);
  for (int i = 0; i < m.rows; ++i) {
    double s = 0;
    for (int j = 0; j < m.cols; ++j) s += m.at(i, j);
    c.at(i, 0) = s;
  }
  Tape* tp = active_tape();
  if (tp && m.node >= 0) {
    int mn = m.node, R = m.rows, C = m.cols;
    c.node = tp->add_node(c.size(), [mn, R, C, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& gm = t.grad(mn);
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) gm[static_cast<std::size_t>(i) * C + j] += g[i];
    });
  }
  return c;
}

// Scales row i of m by s(i,0); s is Rx1.
inline Tensor colwise_scale(const Tensor& m, const Tensor& s) {
  if (s.rows != m.rows || s.cols != 1) throw ConfigError("colwise_scale: shape mismatch");
  Tensor c(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) c.at(i, j) = m.at(i, j) * s.at(i, 0);
  Tape* tp = active_tape();
  if (tp && (m.node >= 0 || s.node >= 0)) {
    int mn = m.node, sn = s.node, R = m.rows, C = m.cols;
    auto md = m.data, sd = s.data;
    c.node = tp->add_node(c.size(), [mn, sn, md, sd, R, C,
                                     cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      if (mn >= 0) {
        auto& gm = t.grad(mn);
        for (int i = 0; i < R; ++i)
          for (int j = 0; j < C; ++j)
            gm[static_cast<std::size_t>(i) * C + j] +=
                g[static_cast<std::size_t>(i) * C + j] * (*sd)[i];
      }
      if (sn >= 0) {
        auto& gs = t.grad(sn);
        for (int i = 0; i < R; ++i) {
          double acc = 0;
          for (int j = 0; j < C; ++j)
            acc += g[static_cast<std::size_t>(i) * C + j] *
                   (*md)[static_cast<std::size_t>(i) * C + j];
          gs[i] += acc;
        }
      }
    });
  }
  return c;
}

inline Tensor softmax(const Tensor& m) {
  Tensor c(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m.cols; ++j) mx = std::max(mx, m.at(i, j));
    double z = 0;
    for (int j = 0; j < m.cols; ++j) z += std::exp(m.at(i, j) - mx);
    for (int j = 0; j < m.cols; ++j) c.at(i, j) = std::exp(m.at(i, j) - mx) / z;
  }
  Tape* tp = active_tape();
  if (tp && m.node >= 0) {
    int mn = m.node, R = m.rows, C = m.cols;
    auto cd = c.data;
    c.node = tp->add_node(c.size(), [mn, cd, R, C, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& gm = t.grad(mn);
      for (int i = 0; i < R; ++i) {
        double dot = 0;
        for (int j = 0; j < C; ++j)
          dot += g[static_cast<std::size_t>(i) * C + j] * (*cd)[static_cast<std::size_t>(i) * C + j];
        for (int j = 0; j < C; ++j) {
          std::size_t k = static_cast<std::size_t>(i) * C + j;
          gm[k] += (*cd)[k] * (g[k] - dot);
        }
      }
    });
  }
  return c;
}

// Numerically stable softmax cross-entropy against an integer label.
// logits is 1xC; returns a scalar.
inline Tensor cross_entropy_with_logits(const Tensor& logits, int label) {
  if (logits.rows != 1) throw ConfigError("cross_entropy: expected 1xC logits");
  if (label < 0 || label >= logits.cols) throw ConfigError("cross_entropy: label out of range");
  int C = logits.cols;
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < C; ++j) mx = std::max(mx, logits.at(0, j));
  double z = 0;
  for (int j = 0; j < C; ++j) z += std::exp(logits.at(0, j) - mx);
  double loss = std::log(z) + mx - logits.at(0, label);
  Tensor c = Tensor::scalar(loss);
  Tape* tp = active_tape();
  if (tp && logits.node >= 0) {
    int ln = logits.node;
    std::vector<double> p(C);
    for (int j = 0; j < C; ++j) p[j] = std::exp(logits.at(0, j) - mx) / z;
    c.node = tp->add_node(1, [ln, p, label, cn = int(tp->num_nodes())](Tape& t) {
      double g = t.grad(cn)[0];
      auto& gl = t.grad(ln);
      for (std::size_t j = 0; j < p.size(); ++j)
        gl[j] += g * (p[j] - (static_cast<int>(j) == label ? 1.0 : 0.0));
    });
  }
  return c;
}

// Inverted dropout with a counter-based generator: mask depends only on
// (seed, counter, element index), so runs are bit-reproducible.
inline Tensor dropout(const Tensor& m, double rate, std::uint64_t seed,
                      std::uint64_t counter, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (!training || rate == 0.0) return m;
  Tensor c(m.rows, m.cols);
  std::vector<double> mask(m.size());
  double keep = 1.0 - rate;
  for (int i = 0; i < m.size(); ++i) {
    mask[i] = counter_uniform(seed, counter * 0x100000000ULL + i) < rate ? 0.0 : 1.0 / keep;
    (*c.data)[i] = (*m.data)[i] * mask[i];
  }
  Tape* tp = active_tape();
  if (tp && m.node >= 0) {
    int mn = m.node;
    c.node = tp->add_node(c.size(), [mn, mask, cn = int(tp->num_nodes())](Tape& t) {
      const auto& g = t.grad(cn);
      auto& gm = t.grad(mn);
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i] * mask[i];
    });
  }
  return c;
}

inline bool all_finite(const Tensor& t) {
  for (int i = 0; i < t.size(); ++i)
    if (!std::isfinite((*t.data)[i])) return false;
  return true;
}

}  // namespace equigraph
