#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "refex/mat.hpp"

namespace refex {

class Tape;

/// Handle to a node on a Tape: forward value plus adjoint slot.
class Value {
 public:
  Value() = default;

  const Mat& data() const;
  const Mat& grad() const;
  int rows() const { return data().rows; }
  int cols() const { return data().cols; }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Value(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Define-by-run tape: nodes are recorded in execution order, which is
/// already topological, so the backward sweep just walks them in reverse.
/// A tape is rebuilt per training example and confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value leaf(Mat m) { return emplace(std::move(m), nullptr); }
  Value leaf(double x) { return leaf(Mat::scalar(x)); }

  /// Constant input: same as a leaf, just a naming convenience. Adjoints
  /// accumulate here too but no optimizer ever reads them.
  Value constant(Mat m) { return leaf(std::move(m)); }

  int size() const { return static_cast<int>(nodes_.size()); }

  const Mat& data(int id) const { return nodes_[static_cast<std::size_t>(id)].data; }
  Mat& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Mat& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Reverse sweep from a scalar loss. Leaf adjoints hold d(loss)/d(leaf)
  /// afterwards. One backward per tape.
  void backward(const Value& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss from another tape");
    const Mat& l = data(loss.id());
    if (l.rows != 1 || l.cols != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " + l.shape_str());
    grad(loss.id()).a[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back) n.back();
    }
  }

  Value emplace(Mat out, std::function<void()> back) {
    Node n;
    n.grad = Mat::zeros(out.rows, out.cols);
    n.data = std::move(out);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value(this, static_cast<int>(nodes_.size()) - 1);
  }

 private:
  struct Node {
    Mat data;
    Mat grad;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
};

inline const Mat& Value::data() const { return tape_->data(id_); }
inline const Mat& Value::grad() const { return tape_->grad(id_); }
inline double Value::scalar() const {
  const Mat& m = data();
  if (m.rows != 1 || m.cols != 1)
    throw std::invalid_argument("scalar(): value is " + m.shape_str());
  return m.a[0];
}

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Mat& a, const Mat& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                              b.shape_str());
}

inline Tape& same_tape(const Value& a, const Value& b, const char* op) {
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": values from different tapes");
  return *a.tape();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Recorded operations. Each computes its forward result eagerly and appends
// a backward closure that adds into the inputs' adjoints.
// ---------------------------------------------------------------------------

inline Value add(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b, "add");
  if (!a.data().same_shape(b.data())) detail::shape_error("add", a.data(), b.data());
  Mat out = a.data();
  for (int i = 0; i < out.size(); ++i) out.a[i] += b.data().a[i];
  int ia = a.id(), ib = b.id();
  return t.emplace(std::move(out), [&t, ia, ib, io = t.size()] {
    const Mat& go = t.grad(io);
    Mat& ga = t.grad(ia);
    Mat& gb = t.grad(ib);
    for (int i = 0; i < go.size(); ++i) {
      ga.a[i] += go.a[i];
      gb.a[i] += go.a[i];
    }
  });
}

inline Value mul(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b, "elementwise-multiply");
  if (!a.data().same_shape(b.data())) detail::shape_error("elementwise-multiply", a.data(), b.data());
  Mat out = a.data();
  for (int i = 0; i < out.size(); ++i) out.a[i] *= b.data().a[i];
  int ia = a.id(), ib = b.id();
  return t.emplace(std::move(out), [&t, ia, ib, io = t.size()] {
    const Mat& go = t.grad(io);
    const Mat& da = t.data(ia);
    const Mat& db = t.data(ib);
    Mat& ga = t.grad(ia);
    Mat& gb = t.grad(ib);
    for (int i = 0; i < go.size(); ++i) {
      ga.a[i] += go.a[i] * db.a[i];
      gb.a[i] += go.a[i] * da.a[i];
    }
  });
}

inline Value matmul(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  const Mat& A = a.data();
  const Mat& B = b.data();
  if (A.cols != B.rows) detail::shape_error("matmul", A, B);
  Mat out(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int k = 0; k < A.cols; ++k) {
      double aik = A(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < B.cols; ++j) out(i, j) += aik * B(k, j);
    }
  int ia = a.id(), ib = b.id();
  return t.emplace(std::move(out), [&t, ia, ib, io = t.size()] {
    const Mat& go = t.grad(io);
    const Mat& A2 = t.data(ia);
    const Mat& B2 = t.data(ib);
    Mat& ga = t.grad(ia);
    Mat& gb = t.grad(ib);
    // dA += go * B^T
    for (int i = 0; i < A2.rows; ++i)
      for (int j = 0; j < go.cols; ++j) {
        double g = go(i, j);
        if (g == 0.0) continue;
        for (int k = 0; k < A2.cols; ++k) ga(i, k) += g * B2(k, j);
      }
    // dB += A^T * go
    for (int k = 0; k < B2.rows; ++k)
      for (int i = 0; i < A2.rows; ++i) {
        double av = A2(i, k);
        if (av == 0.0) continue;
        for (int j = 0; j < go.cols; ++j) gb(k, j) += av * go(i, j);
      }
  });
}

inline Value concat_rows(std::span<const Value> parts) {
  if (parts.empty()) throw std::invalid_argument("concat-rows: no inputs");
  Tape& t = *parts[0].tape();
  int cols = parts[0].cols();
  int rows = 0;
  for (const Value& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("concat-rows: values from different tapes");
    if (p.cols() != cols) detail::shape_error("concat-rows", parts[0].data(), p.data());
    rows += p.rows();
  }
  Mat out(rows, cols);
  int r = 0;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Value& p : parts) {
    const Mat& d = p.data();
    std::copy(d.a.begin(), d.a.end(), out.a.begin() + static_cast<std::ptrdiff_t>(r) * cols);
    r += d.rows;
    ids.push_back(p.id());
  }
  return t.emplace(std::move(out), [&t, ids = std::move(ids), io = t.size()] {
    const Mat& go = t.grad(io);
    int r0 = 0;
    for (int id : ids) {
      Mat& g = t.grad(id);
      for (int i = 0; i < g.size(); ++i) g.a[i] += go.a[static_cast<std::size_t>(r0) * go.cols + i];
      r0 += g.rows;
    }
  });
}

inline Value concat_rows(std::initializer_list<Value> parts) {
  std::vector<Value> v(parts);
  return concat_rows(std::span<const Value>(v));
}

/// rows [r0, r1) of a
inline Value slice_rows(const Value& a, int r0, int r1) {
  Tape& t = *a.tape();
  const Mat& A = a.data();
  if (r0 < 0 || r1 > A.rows || r0 >= r1)
    throw std::invalid_argument("slice-rows: range [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ") of " + A.shape_str());
  Mat out(r1 - r0, A.cols);
  std::copy(A.a.begin() + static_cast<std::ptrdiff_t>(r0) * A.cols,
            A.a.begin() + static_cast<std::ptrdiff_t>(r1) * A.cols, out.a.begin());
  int ia = a.id();
  return t.emplace(std::move(out), [&t, ia, r0, io = t.size()] {
    const Mat& go = t.grad(io);
    Mat& ga = t.grad(ia);
    for (int i = 0; i < go.size(); ++i) ga.a[static_cast<std::size_t>(r0) * go.cols + i] += go.a[i];
  });
}

inline Value sigmoid(const Value& a) {
  Tape& t = *a.tape();
  Mat out = a.data();
  for (double& x : out.a) x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  int ia = a.id();
  return t.emplace(std::move(out), [&t, ia, io = t.size()] {
    const Mat& go = t.grad(io);
    const Mat& y = t.data(io);
    Mat& ga = t.grad(ia);
    for (int i = 0; i < go.size(); ++i) ga.a[i] += go.a[i] * y.a[i] * (1.0 - y.a[i]);
  });
}

inline Value tanh(const Value& a) {
  Tape& t = *a.tape();
  Mat out = a.data();
  for (double& x : out.a) x = std::tanh(x);
  int ia = a.id();
  return t.emplace(std::move(out), [&t, ia, io = t.size()] {
    const Mat& go = t.grad(io);
    const Mat& y = t.data(io);
    Mat& ga = t.grad(ia);
    for (int i = 0; i < go.size(); ++i) ga.a[i] += go.a[i] * (1.0 - y.a[i] * y.a[i]);
  });
}

/// softmax of each column independently, max-subtracted for stability
inline Value col_softmax(const Value& a) {
  Tape& t = *a.tape();
  const Mat& A = a.data();
  Mat out(A.rows, A.cols);
  for (int j = 0; j < A.cols; ++j) {
    double m = A(0, j);
    for (int i = 1; i < A.rows; ++i) m = std::max(m, A(i, j));
    double z = 0.0;
    for (int i = 0; i < A.rows; ++i) z += (out(i, j) = std::exp(A(i, j) - m));
    for (int i = 0; i < A.rows; ++i) out(i, j) /= z;
  }
  int ia = a.id();
  return t.emplace(std::move(out), [&t, ia, io = t.size()] {
    const Mat& go = t.grad(io);
    const Mat& y = t.data(io);
    Mat& ga = t.grad(ia);
    for (int j = 0; j < y.cols; ++j) {
      double dot = 0.0;
      for (int i = 0; i < y.rows; ++i) dot += go(i, j) * y(i, j);
      for (int i = 0; i < y.rows; ++i) ga(i, j) += y(i, j) * (go(i, j) - dot);
    }
  });
}

/// fused log(softmax(column)); avoids log(0) for saturated columns
inline Value col_log_softmax(const Value& a) {
  Tape& t = *a.tape();
  const Mat& A = a.data();
  Mat out(A.rows, A.cols);
  for (int j = 0; j < A.cols; ++j) {
    double m = A(0, j);
    for (int i = 1; i < A.rows; ++i) m = std::max(m, A(i, j));
    double z = 0.0;
    for (int i = 0; i < A.rows; ++i) z += std::exp(A(i, j) - m);
    double lz = std::log(z);
    for (int i = 0; i < A.rows; ++i) out(i, j) = A(i, j) - m - lz;
  }
  int ia = a.id();
  return t.emplace(std::move(out), [&t, ia, io = t.size()] {
    const Mat& go = t.grad(io);
    const Mat& y = t.data(io);
    Mat& ga = t.grad(ia);
    for (int j = 0; j < y.cols; ++j) {
      double s = 0.0;
      for (int i = 0; i < y.rows; ++i) s += go(i, j);
      for (int i = 0; i < y.rows; ++i) ga(i, j) += go(i, j) - std::exp(y(i, j)) * s;
    }
  });
}

/// fused log(sigmoid(x)), stable at both tails
inline Value log_sigmoid(const Value& a) {
  Tape& t = *a.tape();
  Mat out = a.data();
  for (double& x : out.a) x = x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  int ia = a.id();
  return t.emplace(std::move(out), [&t, ia, io = t.size()] {
    const Mat& go = t.grad(io);
    const Mat& x = t.data(ia);
    Mat& ga = t.grad(ia);
    for (int i = 0; i < go.size(); ++i) {
      double v = x.a[i];
      double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      ga.a[i] += go.a[i] * (1.0 - sig);
    }
  });
}

inline Value log(const Value& a) {
  Tape& t = *a.tape();
  Mat out = a.data();
  for (double& x : out.a) x = std::log(x);
  int ia = a.id();
  return t.emplace(std::move(out), [&t, ia, io = t.size()] {
    const Mat& go = t.grad(io);
    const Mat& x = t.data(ia);
    Mat& ga = t.grad(ia);
    for (int i = 0; i < go.size(); ++i) ga.a[i] += go.a[i] / x.a[i];
  });
}

/// mean of all entries -> 1x1
inline Value mean(const Value& a) {
  Tape& t = *a.tape();
  const Mat& A = a.data();
  double s = 0.0;
  for (double x : A.a) s += x;
  int n = A.size();
  int ia = a.id();
  return t.emplace(Mat::scalar(s / n), [&t, ia, n, io = t.size()] {
    double g = t.grad(io).a[0] / n;
    Mat& ga = t.grad(ia);
    for (double& x : ga.a) x += g;
  });
}

/// sum of all entries -> 1x1
inline Value sum(const Value& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double x : a.data().a) s += x;
  int ia = a.id();
  return t.emplace(Mat::scalar(s), [&t, ia, io = t.size()] {
    double g = t.grad(io).a[0];
    Mat& ga = t.grad(ia);
    for (double& x : ga.a) x += g;
  });
}

inline Value scale(const Value& a, double c) {
  Tape& t = *a.tape();
  Mat out = a.data();
  for (double& x : out.a) x *= c;
  int ia = a.id();
  return t.emplace(std::move(out), [&t, ia, c, io = t.size()] {
    const Mat& go = t.grad(io);
    Mat& ga = t.grad(ia);
    for (int i = 0; i < go.size(); ++i) ga.a[i] += c * go.a[i];
  });
}

/// sum of elementwise products -> 1x1
inline Value dot(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b, "dot-product");
  if (!a.data().same_shape(b.data())) detail::shape_error("dot-product", a.data(), b.data());
  double s = 0.0;
  for (int i = 0; i < a.data().size(); ++i) s += a.data().a[i] * b.data().a[i];
  int ia = a.id(), ib = b.id();
  return t.emplace(Mat::scalar(s), [&t, ia, ib, io = t.size()] {
    double g = t.grad(io).a[0];
    const Mat& da = t.data(ia);
    const Mat& db = t.data(ib);
    Mat& ga = t.grad(ia);
    Mat& gb = t.grad(ib);
    for (int i = 0; i < da.size(); ++i) {
      ga.a[i] += g * db.a[i];
      gb.a[i] += g * da.a[i];
    }
  });
}

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator*(double c, const Value& a) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Parameters and optimizers
// ---------------------------------------------------------------------------

/// A trainable matrix living outside any tape. Bound onto a tape as a leaf
/// per training example; the optimizer consumes `grad` after each backward.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m, adam_v;  // lazily sized by the optimizer

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {}
};

/// Per-tape binding of Params to leaf Values. Binding the same Param twice
/// returns the same leaf so adjoints from all uses accumulate on one node.
class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape) : tape_(&tape) {}

  Value operator()(Param& p) {
    for (auto& [q, v] : bound_)
      if (q == &p) return v;
    Value v = tape_->leaf(p.value);
    bound_.emplace_back(&p, v);
    return v;
  }

  Tape& tape() const { return *tape_; }

  /// After backward: copy each bound leaf's adjoint into Param::grad.
  void harvest() {
    for (auto& [p, v] : bound_) p->grad = v.grad();
  }

 private:
  Tape* tape_;
  std::vector<std::pair<Param*, Value>> bound_;
};

enum class OptKind { sgd, adam };

/// SGD or Adam over a parameter list, with global-norm gradient clipping.
/// Grads are zeroed after each step.
struct Optimizer {
  OptKind kind = OptKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
  long long t = 0;

  void step(const std::vector<Param*>& params) {
    double sq = 0.0;
    for (Param* p : params) {
      if (p->grad.size() != p->value.size()) p->grad = Mat::zeros(p->value.rows, p->value.cols);
      for (double g : p->grad.a) sq += g * g;
    }
    double scale = 1.0;
    double norm = std::sqrt(sq);
    if (clip_norm > 0.0 && norm > clip_norm) scale = clip_norm / norm;

    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (Param* p : params) {
      if (kind == OptKind::adam && p->adam_m.size() != p->value.size()) {
        p->adam_m = Mat::zeros(p->value.rows, p->value.cols);
        p->adam_v = Mat::zeros(p->value.rows, p->value.cols);
      }
      for (int i = 0; i < p->value.size(); ++i) {
        double g = scale * p->grad.a[i];
        if (kind == OptKind::sgd) {
          p->value.a[i] -= lr * g;
        } else {
          double& m = p->adam_m.a[i];
          double& v = p->adam_v.a[i];
          m = beta1 * m + (1.0 - beta1) * g;
          v = beta2 * v + (1.0 - beta2) * g * g;
          p->value.a[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
        }
        p->grad.a[i] = 0.0;
      }
    }
  }
};

/// FNV-1a over the raw bit patterns of every parameter entry; used for
/// freezing checks and checkpoint lineage.
inline std::uint64_t params_checksum(const std::vector<Param*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t bits) {
    for (int k = 0; k < 8; ++k) {
      h ^= (bits >> (8 * k)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const Param* p : params) {
    for (double x : p->value.a) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(x));
      std::memcpy(&bits, &x, sizeof(bits));
      mix(bits);
    }
  }
  return h;
}

}  // namespace refex
