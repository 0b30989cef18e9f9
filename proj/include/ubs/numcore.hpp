#pragma once

// Dense row-major matrices with a reverse-mode gradient tape, Adam, and the
// checkpoint format shared by every model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubs/common.hpp"
#include "ubs/io.hpp"

namespace ubs::nn {

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != r * c) fail("ShapeMismatch", "Mat data length != rows*cols");
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

inline std::string shape_str(const Mat& m) { return std::to_string(m.rows) + "x" + std::to_string(m.cols); }

inline void require_finite(const Mat& m, std::string_view op) {
  for (double v : m.data)
    if (!std::isfinite(v)) fail("NonFinite", "non-finite input to " + std::string(op));
}

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Xavier-uniform weights for a fan_in x fan_out layer.
inline Mat xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Mat m(fan_in, fan_out);
  for (auto& v : m.data) v = uniform(rng, -a, a);
  return m;
}

// ---------------------------------------------------------------------------
// Plain kernels (no tape).

// c += a * b, or a * b^T when b_transposed.
inline void gemm_acc(const Mat& a, const Mat& b, Mat& c, bool b_transposed = false) {
  if (!b_transposed) {
    for (std::size_t i = 0; i < a.rows; ++i) {
      double* crow = c.data.data() + i * c.cols;
      for (std::size_t k = 0; k < a.cols; ++k) {
        const double aik = a.data[i * a.cols + k];
        if (aik == 0.0) continue;
        const double* brow = b.data.data() + k * b.cols;
        for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double* arow = a.data.data() + i * a.cols;
      for (std::size_t j = 0; j < b.rows; ++j) {
        const double* brow = b.data.data() + j * b.cols;
        double s = 0.0;
        for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
        c.data[i * c.cols + j] += s;
      }
    }
  }
}

// c += a^T * b
inline void gemm_tn_acc(const Mat& a, const Mat& b, Mat& c) {
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.data.data() + k * a.cols;
    const double* brow = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c.data.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Tape

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Mat& value() const;
  const Mat& grad() const;
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&)>;

  Var constant(Mat m) { return push(std::move(m), nullptr); }
  // The tape reads p.value now and adds into p.grad during backward().
  Var param(const Param& p) { return push_param(const_cast<Param&>(p)); }

  Var push(Mat value, BackFn back) {
    nodes_.push_back(Node{std::move(value), Mat{}, std::move(back), nullptr});
    return Var{this, nodes_.size() - 1};
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  Mat& grad(std::size_t id) { return nodes_[id].grad; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1, runs the tape in reverse, and adds each
  // parameter leaf's gradient into its Param::grad.
  void backward(Var loss) {
    if (loss.tape != this) fail("ShapeMismatch", "loss belongs to another tape");
    const Mat& lv = nodes_[loss.id].value;
    if (lv.rows != 1 || lv.cols != 1) fail("ShapeMismatch", "backward needs a 1x1 loss, got " + shape_str(lv));
    for (auto& n : nodes_) n.grad = Mat(n.value.rows, n.value.cols);
    nodes_[loss.id].grad.data[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;)
      if (nodes_[i].back) nodes_[i].back(*this);
    for (auto& n : nodes_)
      if (n.param != nullptr)
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad.data[k] += n.grad.data[k];
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    BackFn back;
    Param* param;
  };

  Var push_param(Param& p) {
    nodes_.push_back(Node{p.value, Mat{}, nullptr, &p});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(id); }
inline const Mat& Var::grad() const { return tape->grad(id); }

// ---------------------------------------------------------------------------
// Recorded ops. Each validates shapes and rejects non-finite inputs.

inline Var matmul(Var a, Var b) {
  const Mat& A = a.value();
  const Mat& B = b.value();
  if (A.cols != B.rows) fail("ShapeMismatch", "matmul " + shape_str(A) + " * " + shape_str(B));
  require_finite(A, "matmul");
  require_finite(B, "matmul");
  Mat C(A.rows, B.cols);
  gemm_acc(A, B, C);
  const auto ia = a.id, ib = b.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(C), [ia, ib, out](Tape& t) {
    const Mat& g = t.grad(out);
    gemm_acc(g, t.value(ib), t.grad(ia), true);  // dA = G B^T
    gemm_tn_acc(t.value(ia), g, t.grad(ib));     // dB = A^T G
  });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  const Mat& A = a.value();
  const Mat& B = b.value();
  if (A.cols != B.cols) fail("ShapeMismatch", "matmul_nt " + shape_str(A) + " * " + shape_str(B) + "^T");
  require_finite(A, "matmul_nt");
  require_finite(B, "matmul_nt");
  Mat C(A.rows, B.rows);
  gemm_acc(A, B, C, true);
  const auto ia = a.id, ib = b.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(C), [ia, ib, out](Tape& t) {
    const Mat& g = t.grad(out);
    gemm_acc(g, t.value(ib), t.grad(ia));     // dA = G B
    gemm_tn_acc(g, t.value(ia), t.grad(ib));  // dB = G^T A
  });
}

inline Var add(Var a, Var b) {
  const Mat& A = a.value();
  const Mat& B = b.value();
  if (!A.same_shape(B)) fail("ShapeMismatch", "add " + shape_str(A) + " + " + shape_str(B));
  require_finite(A, "add");
  require_finite(B, "add");
  Mat C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
  const auto ia = a.id, ib = b.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(C), [ia, ib, out](Tape& t) {
    const Mat& g = t.grad(out);
    Mat& ga = t.grad(ia);
    Mat& gb = t.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] += g.data[i];
    }
  });
}

// a (r x c) + bias (1 x c) broadcast over rows.
inline Var add_row(Var a, Var bias) {
  const Mat& A = a.value();
  const Mat& B = bias.value();
  if (B.rows != 1 || B.cols != A.cols) fail("ShapeMismatch", "add_row " + shape_str(A) + " + " + shape_str(B));
  require_finite(A, "add_row");
  require_finite(B, "add_row");
  Mat C = A;
  for (std::size_t r = 0; r < C.rows; ++r)
    for (std::size_t c = 0; c < C.cols; ++c) C(r, c) += B.data[c];
  const auto ia = a.id, ib = bias.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(C), [ia, ib, out](Tape& t) {
    const Mat& g = t.grad(out);
    Mat& ga = t.grad(ia);
    Mat& gb = t.grad(ib);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) {
        ga(r, c) += g(r, c);
        gb.data[c] += g(r, c);
      }
  });
}

inline Var scale(Var a, double s) {
  require_finite(a.value(), "scale");
  Mat C = a.value();
  for (auto& v : C.data) v *= s;
  const auto ia = a.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(C), [ia, out, s](Tape& t) {
    const Mat& g = t.grad(out);
    Mat& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += s * g.data[i];
  });
}

inline Var relu(Var a) {
  require_finite(a.value(), "relu");
  Mat C = a.value();
  for (auto& v : C.data) v = v > 0.0 ? v : 0.0;
  const auto ia = a.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(C), [ia, out](Tape& t) {
    const Mat& g = t.grad(out);
    const Mat& x = t.value(ia);
    Mat& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.data[i] > 0.0) ga.data[i] += g.data[i];
  });
}

// Row-wise softmax with the row max subtracted first.
inline Mat softmax_rows_value(const Mat& x) {
  Mat y(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const auto in = x.row(r);
    auto o = y.row(r);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) {
      o[c] = std::exp(in[c] - m);
      z += o[c];
    }
    for (auto& v : o) v /= z;
  }
  return y;
}

inline Var softmax_rows(Var a) {
  require_finite(a.value(), "softmax_rows");
  if (a.value().cols == 0) fail("ShapeMismatch", "softmax over zero columns");
  Mat Y = softmax_rows_value(a.value());
  const auto ia = a.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(Y), [ia, out](Tape& t) {
    const Mat& g = t.grad(out);
    const Mat& y = t.value(out);
    Mat& ga = t.grad(ia);
    for (std::size_t r = 0; r < y.rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols; ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols; ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Per-row normalization followed by gamma * x_hat + beta (gamma, beta: 1 x c).
inline Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = kLayerNormEps) {
  const Mat& X = x.value();
  const Mat& G = gamma.value();
  const Mat& B = beta.value();
  if (G.rows != 1 || B.rows != 1 || G.cols != X.cols || B.cols != X.cols)
    fail("ShapeMismatch", "layer_norm gamma/beta must be 1x" + std::to_string(X.cols));
  require_finite(X, "layer_norm_rows");
  require_finite(G, "layer_norm_rows");
  require_finite(B, "layer_norm_rows");
  const std::size_t n = X.cols;
  Mat xhat(X.rows, n);
  std::vector<double> inv_std(X.rows);
  Mat Y(X.rows, n);
  for (std::size_t r = 0; r < X.rows; ++r) {
    const auto in = X.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (in[c] - mean) * inv_std[r];
      Y(r, c) = G.data[c] * xhat(r, c) + B.data[c];
    }
  }
  const auto ix = x.id, ig = gamma.id, ib = beta.id;
  const std::size_t out = x.tape->size();
  return x.tape->push(std::move(Y), [ix, ig, ib, out, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t) {
    const Mat& g = t.grad(out);
    const Mat& G = t.value(ig);
    Mat& gx = t.grad(ix);
    Mat& gg = t.grad(ig);
    Mat& gb = t.grad(ib);
    const std::size_t n = g.cols;
    std::vector<double> dxhat(n);
    for (std::size_t r = 0; r < g.rows; ++r) {
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        gg.data[c] += g(r, c) * xhat(r, c);
        gb.data[c] += g(r, c);
        dxhat[c] = g(r, c) * G.data[c];
        mean_d += dxhat[c];
        mean_dx += dxhat[c] * xhat(r, c);
      }
      mean_d /= static_cast<double>(n);
      mean_dx /= static_cast<double>(n);
      for (std::size_t c = 0; c < n; ++c) gx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
    }
  });
}

// Inverted dropout: kept entries are scaled by 1/(1-p). Identity when !train.
inline Var dropout(Var a, double p, Rng& rng, bool train) {
  if (!(p >= 0.0 && p < 1.0)) fail("ConfigError", "dropout p must be in [0,1)");
  require_finite(a.value(), "dropout");
  if (!train || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> m(a.value().size());
  for (auto& v : m) v = uniform01(rng) >= p ? keep_scale : 0.0;
  Mat C = a.value();
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= m[i];
  const auto ia = a.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(C), [ia, out, m = std::move(m)](Tape& t) {
    const Mat& g = t.grad(out);
    Mat& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * m[i];
  });
}

// Rows of a picked by index (duplicates allowed).
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  const Mat& A = a.value();
  Mat C(idx.size(), A.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= A.rows) fail("ShapeMismatch", "gather_rows index out of range");
    std::copy_n(A.data.data() + idx[i] * A.cols, A.cols, C.data.data() + i * A.cols);
  }
  const auto ia = a.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(C), [ia, out, idx = std::move(idx)](Tape& t) {
    const Mat& g = t.grad(out);
    Mat& ga = t.grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < g.cols; ++c) ga(idx[i], c) += g(i, c);
  });
}

// Columns [c0, c1).
inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  const Mat& A = a.value();
  if (c0 > c1 || c1 > A.cols) fail("ShapeMismatch", "slice_cols range");
  Mat C(A.rows, c1 - c0);
  for (std::size_t r = 0; r < A.rows; ++r)
    for (std::size_t c = c0; c < c1; ++c) C(r, c - c0) = A(r, c);
  const auto ia = a.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(std::move(C), [ia, out, c0](Tape& t) {
    const Mat& g = t.grad(out);
    Mat& ga = t.grad(ia);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) ga(r, c + c0) += g(r, c);
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail("ShapeMismatch", "concat_cols of nothing");
  const std::size_t rows = parts[0].value().rows;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.value().rows != rows) fail("ShapeMismatch", "concat_cols row mismatch");
    cols += p.value().cols;
  }
  Mat C(rows, cols);
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (node id, column offset)
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Mat& P = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < P.cols; ++c) C(r, off + c) = P(r, c);
    spans.emplace_back(p.id, off);
    off += P.cols;
  }
  Tape* tape = parts[0].tape;
  const std::size_t out = tape->size();
  return tape->push(std::move(C), [out, spans = std::move(spans)](Tape& t) {
    const Mat& g = t.grad(out);
    for (const auto& [id, o] : spans) {
      Mat& gp = t.grad(id);
      for (std::size_t r = 0; r < gp.rows; ++r)
        for (std::size_t c = 0; c < gp.cols; ++c) gp(r, c) += g(r, o + c);
    }
  });
}

inline Var sum(Var a) {
  require_finite(a.value(), "sum");
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const auto ia = a.id;
  const std::size_t out = a.tape->size();
  return a.tape->push(Mat(1, 1, s), [ia, out](Tape& t) {
    const double g = t.grad(out).data[0];
    for (auto& v : t.grad(ia).data) v += g;
  });
}

// Mean squared error over mask-true entries (mask has one byte per entry).
// An all-false mask gives loss 0 with zero gradient.
inline Var mse_masked(Var pred, const Mat& target, std::span<const std::uint8_t> mask) {
  const Mat& P = pred.value();
  if (!P.same_shape(target)) fail("ShapeMismatch", "mse_masked " + shape_str(P) + " vs " + shape_str(target));
  if (mask.size() != P.size()) fail("ShapeMismatch", "mse_masked mask length");
  require_finite(P, "mse_masked");
  require_finite(target, "mse_masked");
  std::size_t n = 0;
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i)
    if (mask[i]) {
      const double d = P.data[i] - target.data[i];
      s += d * d;
      ++n;
    }
  const double loss = n == 0 ? 0.0 : s / static_cast<double>(n);
  const auto ip = pred.id;
  const std::size_t out = pred.tape->size();
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return pred.tape->push(Mat(1, 1, loss), [ip, out, n, target, m = std::move(m)](Tape& t) {
    if (n == 0) return;
    const double g = t.grad(out).data[0] * 2.0 / static_cast<double>(n);
    const Mat& P = t.value(ip);
    Mat& gp = t.grad(ip);
    for (std::size_t i = 0; i < P.size(); ++i)
      if (m[i]) gp.data[i] += g * (P.data[i] - target.data[i]);
  });
}

// Every entry counts.
inline Var mse(Var pred, const Mat& target) {
  std::vector<std::uint8_t> all(pred.value().size(), 1);
  return mse_masked(pred, target, all);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Bias-corrected update of every parameter, then zeroes the gradients.
  void step(std::span<Param* const> params) {
    if (m_.empty()) {
      for (const Param* p : params) {
        m_.emplace_back(p->value.rows, p->value.cols);
        v_.emplace_back(p->value.rows, p->value.cols);
      }
    }
    if (m_.size() != params.size()) fail("ShapeMismatch", "Adam parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Param& P = *params[p];
      if (!P.grad.same_shape(m_[p])) fail("ShapeMismatch", "Adam state shape for " + P.name);
      for (std::size_t i = 0; i < P.value.size(); ++i) {
        const double g = P.grad.data[i];
        double& m = m_[p].data[i];
        double& v = v_[p].data[i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        P.value.data[i] -= cfg_.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
      }
      P.zero_grad();
    }
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "UBSM", u32 version, u32 config length + JSON text, then until
// EOF: u16 name length, name, u32 rows, u32 cols, rows*cols float64.

inline constexpr char kCheckpointMagic[4] = {'U', 'B', 'S', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json config;
  std::vector<std::pair<std::string, Mat>> params;
};

inline void write_checkpoint(std::ostream& out, const nlohmann::json& config, std::span<const Param* const> params) {
  io::put_bytes(out, std::string_view(kCheckpointMagic, 4));
  io::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = config.dump();
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  io::put_bytes(out, text);
  for (const Param* p : params) {
    io::put<std::uint16_t>(out, static_cast<std::uint16_t>(p->name.size()));
    io::put_bytes(out, p->name);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rows));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.cols));
    out.write(reinterpret_cast<const char*>(p->value.data.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
}

inline void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                             std::span<const Param* const> params) {
  auto out = io::open_out(path, true);
  write_checkpoint(out, config, params);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  io::Reader r(in);
  char magic[4];
  try {
    r.read_raw(magic, 4);
  } catch (const Error&) {
    fail("BadMagic", "file too short for checkpoint magic");
  }
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) fail("BadMagic", "not a model checkpoint");
  if (r.get<std::uint32_t>() != kCheckpointVersion) fail("BadMagic", "unsupported checkpoint version");
  Checkpoint ck;
  const auto len = r.get<std::uint32_t>();
  ck.config = nlohmann::json::parse(r.get_bytes(len));
  while (!r.at_eof()) {
    const auto nlen = r.get<std::uint16_t>();
    std::string name = r.get_bytes(nlen);
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    Mat m(rows, cols);
    r.read_raw(reinterpret_cast<char*>(m.data.data()), m.size() * sizeof(double));
    ck.params.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto in = io::open_in(path, true);
  return read_checkpoint(in);
}

// Copies checkpoint values into same-named parameters; every parameter must be
// present with a matching shape.
inline void load_params(const Checkpoint& ck, std::span<Param* const> params) {
  if (ck.params.size() != params.size()) fail("DimMismatch", "checkpoint parameter count differs from model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, m] = ck.params[i];
    if (name != params[i]->name || !m.same_shape(params[i]->value))
      fail("DimMismatch", "checkpoint parameter '" + name + "' does not match '" + params[i]->name + "'");
    params[i]->value = m;
    params[i]->zero_grad();
  }
}

inline std::size_t parameter_count(std::span<const Param* const> params) {
  std::size_t n = 0;
  for (const Param* p : params) n += p->value.size();
  return n;
}

}  // namespace ubs::nn
