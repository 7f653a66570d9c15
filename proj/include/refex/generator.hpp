#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "refex/autodiff.hpp"
#include "refex/features.hpp"
#include "refex/nn.hpp"
#include "refex/rng.hpp"
#include "refex/vocab.hpp"

namespace refex {

/// Additive logit mask that keeps <pad> and <bos> out of decoded output.
/// Training passes stay unmasked.
inline constexpr double kMaskLogit = -1e30;

/// Per-step word distributions: vocab x 1 columns, one per scored step,
/// each summing to 1. Columns stay connected to the tape so comprehension
/// gradients reach the generator parameters. `tokens` holds the realized
/// (or forced) token of each column, including the <eos> id when present.
struct SoftSeq {
  std::vector<Value> cols;
  std::vector<int> tokens;
  bool terminated = false;

  int length() const { return static_cast<int>(cols.size()); }
};

/// One-hot SoftSeq of a discrete expression (content tokens plus <eos>),
/// as constants. Used for hard/soft equivalence and SMIXEC prefixes.
inline SoftSeq soft_from_tokens(Tape& t, const Vocab& v, const TokenSeq& q) {
  SoftSeq s;
  s.terminated = true;
  for (int tok : q.tokens) {
    s.cols.push_back(t.constant(onehot_column(v.size(), tok)));
    s.tokens.push_back(tok);
  }
  s.cols.push_back(t.constant(onehot_column(v.size(), v.eos())));
  s.tokens.push_back(v.eos());
  return s;
}

// ---------------------------------------------------------------------------
// Generation model: visual encoder + uni-directional LSTM decoder
// ---------------------------------------------------------------------------

struct GeneratorParams {
  int vocab_size = 0;
  int feature_dim = 0;
  int embed_dim = 0;
  int hidden_dim = 0;
  int visual_dim = 0;
  int t_max = 10;

  Affine visual;         // visual_dim x feature_dim
  EmbeddingTable embed;  // embed_dim x vocab
  LstmParams decoder;    // input = visual_dim + embed_dim
  Affine output;         // vocab x hidden

  std::vector<Param*> params() {
    std::vector<Param*> out = {&visual.w, &visual.b, &embed.e};
    for (Param* p : decoder.params()) out.push_back(p);
    out.push_back(&output.w);
    out.push_back(&output.b);
    return out;
  }
};

inline GeneratorParams make_generator(int vocab_size, int feature_dim, int embed_dim,
                                      int hidden_dim, int visual_dim, int t_max, Rng& rng) {
  GeneratorParams g;
  g.vocab_size = vocab_size;
  g.feature_dim = feature_dim;
  g.embed_dim = embed_dim;
  g.hidden_dim = hidden_dim;
  g.visual_dim = visual_dim;
  g.t_max = t_max;
  g.visual = make_affine("gen.visual", visual_dim, feature_dim, rng);
  g.embed = make_embedding("gen.embed.e", embed_dim, vocab_size, rng);
  g.decoder = make_lstm("gen.decoder", visual_dim + embed_dim, hidden_dim, rng);
  g.output = make_affine("gen.output", vocab_size, hidden_dim, rng);
  return g;
}

/// v = W [o, g, l] + b
inline Value encode_visual(ParamBinder& b, GeneratorParams& g, const RegionFeatures& f) {
  Mat x = f.concat();
  if (x.rows != g.feature_dim)
    throw std::invalid_argument("encode_visual: features are " + x.shape_str() + ", expected " +
                                std::to_string(g.feature_dim) + "x1");
  return apply(b, g.visual, b.tape().constant(std::move(x)));
}

struct GenStep {
  Value logits;  // vocab x 1
  LstmState state;
};

/// One decoder step: LSTM over concat(v, embed(prev)), affine to logits.
/// `prev_col` is a vocab column, one-hot or soft.
inline GenStep generator_step(ParamBinder& b, GeneratorParams& g, const Value& v,
                              const Value& prev_col, const LstmState& s) {
  Value x = concat_rows({v, embed(b, g.embed, prev_col)});
  LstmState next = lstm_step(b, g.decoder, x, s);
  return {apply(b, g.output, next.h), next};
}

/// Distribution over the next word (column softmax of the step logits).
inline std::pair<Value, LstmState> step_distribution(ParamBinder& b, GeneratorParams& g,
                                                     const Value& v, const Value& prev_col,
                                                     const LstmState& s) {
  GenStep st = generator_step(b, g, v, prev_col, s);
  return {col_softmax(st.logits), st.state};
}

// ---------------------------------------------------------------------------
// Teacher-forced pass: one forward serves both the cross-entropy loss and
// the ground-truth soft sequence.
// ---------------------------------------------------------------------------

struct ForcedPass {
  std::vector<Value> logits;  // one per scored step: content tokens then <eos>
  std::vector<int> targets;
};

inline ForcedPass forced_pass(ParamBinder& b, GeneratorParams& g, const Vocab& v,
                              const RegionFeatures& f, const TokenSeq& expr) {
  if (!expr.terminated) throw std::invalid_argument("forced_pass: expression must end with <eos>");
  for (int tok : expr.tokens)
    if (tok < 0 || tok >= v.size()) throw std::invalid_argument("forced_pass: token outside vocab");
  ForcedPass fp;
  fp.targets = expr.tokens;
  fp.targets.push_back(v.eos());

  Value vis = encode_visual(b, g, f);
  LstmState s = lstm_begin(b.tape(), g.hidden_dim);
  int prev = v.bos();
  for (int tgt : fp.targets) {
    GenStep st = generator_step(b, g, vis, b.tape().constant(onehot_column(v.size(), prev)), s);
    fp.logits.push_back(st.logits);
    s = st.state;
    prev = tgt;
  }
  return fp;
}

/// L_gen = -(1/T) sum_t log P_G(w_t | w_<t, I, r), <eos> step included.
inline Value xent_of(const ForcedPass& fp) {
  std::vector<Value> picked;
  picked.reserve(fp.logits.size());
  for (std::size_t t = 0; t < fp.logits.size(); ++t) {
    Value ls = col_log_softmax(fp.logits[t]);
    picked.push_back(slice_rows(ls, fp.targets[t], fp.targets[t] + 1));
  }
  return scale(mean(concat_rows(std::span<const Value>(picked))), -1.0);
}

inline SoftSeq soft_of(const ForcedPass& fp) {
  SoftSeq s;
  s.terminated = true;
  for (std::size_t t = 0; t < fp.logits.size(); ++t) {
    s.cols.push_back(col_softmax(fp.logits[t]));
    s.tokens.push_back(fp.targets[t]);
  }
  return s;
}

inline Value xent_loss(ParamBinder& b, GeneratorParams& g, const Vocab& v,
                       const RegionFeatures& f, const TokenSeq& expr) {
  return xent_of(forced_pass(b, g, v, f, expr));
}

/// Teacher-forced soft sequence (columns are the same distributions the
/// cross-entropy loss scores).
inline SoftSeq soft_sequence_teacher_forced(ParamBinder& b, GeneratorParams& g, const Vocab& v,
                                            const RegionFeatures& f, const TokenSeq& expr) {
  return soft_of(forced_pass(b, g, v, f, expr));
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

namespace detail {

inline Mat decode_mask(const Vocab& v) {
  Mat m(v.size(), 1);
  m.a[static_cast<std::size_t>(v.pad())] = kMaskLogit;
  m.a[static_cast<std::size_t>(v.bos())] = kMaskLogit;
  return m;
}

inline int sample_from_column(const Mat& dist, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  int last_positive = 0;
  for (int i = 0; i < dist.rows; ++i) {
    double p = dist.a[static_cast<std::size_t>(i)];
    if (p > 0.0) last_positive = i;
    acc += p;
    if (u < acc) return i;
  }
  return last_positive;  // guards the acc < 1 rounding sliver
}

}  // namespace detail

/// Argmax token each step, fed back, until <eos> or t_max steps.
/// Deterministic; never emits <pad> or <bos>.
inline TokenSeq greedy_decode(GeneratorParams& g, const Vocab& v, const RegionFeatures& f,
                              int t_max) {
  if (t_max < 1) throw std::invalid_argument("greedy_decode: t_max must be >= 1");
  Tape tape;
  ParamBinder b(tape);
  Value vis = encode_visual(b, g, f);
  Value mask = tape.constant(detail::decode_mask(v));
  LstmState s = lstm_begin(tape, g.hidden_dim);
  int prev = v.bos();
  TokenSeq out;
  for (int t = 0; t < t_max; ++t) {
    GenStep st = generator_step(b, g, vis, tape.constant(onehot_column(v.size(), prev)), s);
    int tok = argmax_column(add(st.logits, mask).data());
    s = st.state;
    if (tok == v.eos()) {
      out.terminated = true;
      break;
    }
    out.tokens.push_back(tok);
    prev = tok;
  }
  return out;
}

struct SampledSeq {
  TokenSeq seq;
  SoftSeq soft;  // the masked step distributions actually sampled from
};

/// Ancestral sampling. Returns the sequence and the per-step distribution
/// columns (still on the caller's tape) so sampled-prefix soft sequences
/// can feed the comprehension loss.
inline SampledSeq sample_decode(ParamBinder& b, GeneratorParams& g, const Vocab& v,
                                const RegionFeatures& f, int t_max, Rng& rng) {
  if (t_max < 1) throw std::invalid_argument("sample_decode: t_max must be >= 1");
  Tape& tape = b.tape();
  Value vis = encode_visual(b, g, f);
  Value mask = tape.constant(detail::decode_mask(v));
  LstmState s = lstm_begin(tape, g.hidden_dim);
  int prev = v.bos();
  SampledSeq out;
  for (int t = 0; t < t_max; ++t) {
    GenStep st = generator_step(b, g, vis, tape.constant(onehot_column(v.size(), prev)), s);
    Value dist = col_softmax(add(st.logits, mask));
    int tok = detail::sample_from_column(dist.data(), rng);
    out.soft.cols.push_back(dist);
    out.soft.tokens.push_back(tok);
    s = st.state;
    if (tok == v.eos()) {
      out.seq.terminated = true;
      out.soft.terminated = true;
      break;
    }
    out.seq.tokens.push_back(tok);
    prev = tok;
  }
  return out;
}

/// Fully sampled soft sequence (modified scheduled sampling, alpha = 0).
inline SoftSeq soft_sequence_sampled(ParamBinder& b, GeneratorParams& g, const Vocab& v,
                                     const RegionFeatures& f, int t_max, Rng& rng) {
  return sample_decode(b, g, v, f, t_max, rng).soft;
}

/// SMIXEC forward: ground-truth input for the first `prefix_steps` steps,
/// sampled continuation after. The prefix columns of the soft sequence are
/// constant one-hots (no gradient path into the generator); the prefix
/// logits are kept for the partial cross-entropy term.
struct MixedSoft {
  SoftSeq soft;
  std::vector<Value> prefix_logits;
  std::vector<int> prefix_targets;
};

inline MixedSoft soft_sequence_mixed(ParamBinder& b, GeneratorParams& g, const Vocab& v,
                                     const RegionFeatures& f, const TokenSeq& expr,
                                     long long prefix_steps, int t_max, Rng& rng) {
  if (!expr.terminated)
    throw std::invalid_argument("soft_sequence_mixed: expression must end with <eos>");
  Tape& tape = b.tape();
  MixedSoft out;
  std::vector<int> targets = expr.tokens;
  targets.push_back(v.eos());

  Value vis = encode_visual(b, g, f);
  LstmState s = lstm_begin(tape, g.hidden_dim);
  int prev = v.bos();
  int n_prefix = static_cast<int>(std::min<long long>(prefix_steps,
                                                      static_cast<long long>(targets.size())));
  for (int t = 0; t < n_prefix; ++t) {
    GenStep st = generator_step(b, g, vis, tape.constant(onehot_column(v.size(), prev)), s);
    out.prefix_logits.push_back(st.logits);
    out.prefix_targets.push_back(targets[static_cast<std::size_t>(t)]);
    out.soft.cols.push_back(tape.constant(onehot_column(v.size(), targets[static_cast<std::size_t>(t)])));
    out.soft.tokens.push_back(targets[static_cast<std::size_t>(t)]);
    s = st.state;
    prev = targets[static_cast<std::size_t>(t)];
  }
  if (n_prefix == static_cast<int>(targets.size())) {
    out.soft.terminated = true;  // whole sentence forced, <eos> column included
    return out;
  }

  Value mask = tape.constant(detail::decode_mask(v));
  for (int t = n_prefix; t < t_max; ++t) {
    GenStep st = generator_step(b, g, vis, tape.constant(onehot_column(v.size(), prev)), s);
    Value dist = col_softmax(add(st.logits, mask));
    int tok = detail::sample_from_column(dist.data(), rng);
    out.soft.cols.push_back(dist);
    out.soft.tokens.push_back(tok);
    s = st.state;
    if (tok == v.eos()) {
      out.soft.terminated = true;
      break;
    }
    prev = tok;
  }
  return out;
}

}  // namespace refex
