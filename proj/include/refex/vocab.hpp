#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "refex/rng.hpp"

namespace refex {

/// Closed vocabulary; index = position in the token list, stable across runs.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
      auto [it, fresh] = index_.emplace(tokens_[i], i);
      if (!fresh) throw std::invalid_argument("Vocab: duplicate token '" + tokens_[i] + "'");
    }
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& word(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return tokens_; }

  int id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) throw std::invalid_argument("Vocab: unknown token '" + w + "'");
    return it->second;
  }
  bool contains(const std::string& w) const { return index_.count(w) != 0; }

  int pad() const { return id("<pad>"); }
  int bos() const { return id("<bos>"); }
  int eos() const { return id("<eos>"); }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : tokens_) {
      h = detail::fnv1a64(w, h);
      h = detail::fnv1a64("\n", h);
    }
    return h;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// A discrete expression: content token indices only. <bos>, <eos> and <pad>
/// never appear inside `tokens`; `terminated` records the trailing <eos>.
struct TokenSeq {
  std::vector<int> tokens;
  bool terminated = false;

  int content_size() const { return static_cast<int>(tokens.size()); }

  bool operator==(const TokenSeq& o) const {
    return terminated == o.terminated && tokens == o.tokens;
  }
};

inline std::string to_text(const Vocab& v, const TokenSeq& s) {
  std::string out;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (i) out += ' ';
    out += v.word(s.tokens[i]);
  }
  return out;
}

}  // namespace refex
