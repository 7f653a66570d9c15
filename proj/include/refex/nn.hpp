#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "refex/autodiff.hpp"
#include "refex/rng.hpp"

namespace refex {

inline Mat uniform_init(int rows, int cols, Rng& rng, double half_width = 0.08) {
  Mat m(rows, cols);
  for (double& x : m.a) x = rng.uniform(-half_width, half_width);
  return m;
}

// ---------------------------------------------------------------------------
// Embedding table
// ---------------------------------------------------------------------------

/// E: embed_dim x vocab_size. A word column (one-hot or a distribution over
/// the vocabulary) maps to E * column.
struct EmbeddingTable {
  Param e;

  int embed_dim() const { return e.value.rows; }
  int vocab_size() const { return e.value.cols; }
};

inline EmbeddingTable make_embedding(const std::string& name, int embed_dim, int vocab_size,
                                     Rng& rng) {
  return EmbeddingTable{Param(name, uniform_init(embed_dim, vocab_size, rng))};
}

/// E times a distribution-or-one-hot column over the vocabulary.
inline Value embed(ParamBinder& b, EmbeddingTable& table, const Value& column) {
  if (column.rows() != table.vocab_size() || column.cols() != 1)
    throw std::invalid_argument("embed: column is " + column.data().shape_str() + ", vocab is " +
                                std::to_string(table.vocab_size()));
  return matmul(b(table.e), column);
}

inline Value embed_token(ParamBinder& b, EmbeddingTable& table, int token) {
  return embed(b, table, b.tape().constant(onehot_column(table.vocab_size(), token)));
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// Canonical LSTM cell. Each gate has a hidden x (input+hidden) weight and a
/// hidden x 1 bias applied to [x; h].
struct LstmParams {
  int input_dim = 0;
  int hidden_dim = 0;
  Param w_i, b_i;
  Param w_f, b_f;
  Param w_o, b_o;
  Param w_g, b_g;

  std::vector<Param*> params() { return {&w_i, &b_i, &w_f, &b_f, &w_o, &b_o, &w_g, &b_g}; }
};

/// Forget-gate bias starts at 1.0, everything else uniform in [-0.08, 0.08].
inline LstmParams make_lstm(const std::string& prefix, int input_dim, int hidden_dim, Rng& rng) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  int z = input_dim + hidden_dim;
  p.w_i = Param(prefix + ".w_i", uniform_init(hidden_dim, z, rng));
  p.b_i = Param(prefix + ".b_i", uniform_init(hidden_dim, 1, rng));
  p.w_f = Param(prefix + ".w_f", uniform_init(hidden_dim, z, rng));
  p.b_f = Param(prefix + ".b_f", uniform_init(hidden_dim, 1, rng));
  p.w_o = Param(prefix + ".w_o", uniform_init(hidden_dim, z, rng));
  p.b_o = Param(prefix + ".b_o", uniform_init(hidden_dim, 1, rng));
  p.w_g = Param(prefix + ".w_g", uniform_init(hidden_dim, z, rng));
  p.b_g = Param(prefix + ".b_g", uniform_init(hidden_dim, 1, rng));
  for (double& x : p.b_f.value.a) x = 1.0;
  return p;
}

struct LstmState {
  Value h;
  Value c;
};

inline LstmState lstm_begin(Tape& t, int hidden_dim) {
  return {t.constant(Mat::zeros(hidden_dim, 1)), t.constant(Mat::zeros(hidden_dim, 1))};
}

inline LstmState lstm_step(ParamBinder& b, LstmParams& p, const Value& x, const LstmState& s) {
  if (x.rows() != p.input_dim || x.cols() != 1)
    throw std::invalid_argument("lstm_step: input is " + x.data().shape_str() + ", expected " +
                                std::to_string(p.input_dim) + "x1");
  if (s.h.rows() != p.hidden_dim)
    throw std::invalid_argument("lstm_step: hidden is " + s.h.data().shape_str() + ", expected " +
                                std::to_string(p.hidden_dim) + "x1");
  Value z = concat_rows({x, s.h});
  Value i = sigmoid(add(matmul(b(p.w_i), z), b(p.b_i)));
  Value f = sigmoid(add(matmul(b(p.w_f), z), b(p.b_f)));
  Value o = sigmoid(add(matmul(b(p.w_o), z), b(p.b_o)));
  Value g = tanh(add(matmul(b(p.w_g), z), b(p.b_g)));
  Value c = add(mul(f, s.c), mul(i, g));
  Value h = mul(o, tanh(c));
  return {h, c};
}

/// All hidden states of a forward run over the sequence.
inline std::vector<Value> lstm_run(ParamBinder& b, LstmParams& p, std::span<const Value> inputs) {
  LstmState s = lstm_begin(b.tape(), p.hidden_dim);
  std::vector<Value> hs;
  hs.reserve(inputs.size());
  for (const Value& x : inputs) {
    s = lstm_step(b, p, x, s);
    hs.push_back(s.h);
  }
  return hs;
}

/// Bi-directional encoding with mean pooling: run fw left-to-right and bw
/// right-to-left, concatenate the per-step hidden pairs, average over steps.
/// Output is 2*hidden x 1 for any sequence length >= 1.
inline Value bilstm_mean_encode(ParamBinder& b, LstmParams& fw, LstmParams& bw,
                                std::span<const Value> embedded) {
  if (embedded.empty()) throw std::invalid_argument("bilstm_mean_encode: empty sequence");
  std::vector<Value> fh = lstm_run(b, fw, embedded);
  std::vector<Value> rev(embedded.rbegin(), embedded.rend());
  std::vector<Value> bh = lstm_run(b, bw, rev);

  const int n = static_cast<int>(embedded.size());
  Value acc = concat_rows({fh[0], bh[static_cast<std::size_t>(n - 1)]});
  for (int t = 1; t < n; ++t)
    acc = add(acc, concat_rows({fh[static_cast<std::size_t>(t)],
                                bh[static_cast<std::size_t>(n - 1 - t)]}));
  return scale(acc, 1.0 / n);
}

// ---------------------------------------------------------------------------
// Affine map
// ---------------------------------------------------------------------------

struct Affine {
  Param w;
  Param b;

  int out_dim() const { return w.value.rows; }
  int in_dim() const { return w.value.cols; }
  std::vector<Param*> params() { return {&w, &b}; }
};

inline Affine make_affine(const std::string& prefix, int out_dim, int in_dim, Rng& rng) {
  return Affine{Param(prefix + ".w", uniform_init(out_dim, in_dim, rng)),
                Param(prefix + ".b", uniform_init(out_dim, 1, rng))};
}

inline Value apply(ParamBinder& bind, Affine& f, const Value& x) {
  return add(matmul(bind(f.w), x), bind(f.b));
}

}  // namespace refex
