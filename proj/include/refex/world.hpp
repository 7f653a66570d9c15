#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "refex/features.hpp"
#include "refex/rng.hpp"
#include "refex/vocab.hpp"

namespace refex {

// Attribute inventories. Vocabulary indices are fixed by construction order:
// specials, colors, shapes, sizes, spatial, glue.
inline constexpr std::array<const char*, 8> kColors = {"red",    "green", "blue",  "yellow",
                                                       "orange", "purple", "black", "white"};
inline constexpr std::array<const char*, 6> kShapes = {"circle",  "square", "triangle",
                                                       "star",    "diamond", "hexagon"};
inline constexpr std::array<const char*, 3> kSizes = {"small", "medium", "large"};
inline constexpr std::array<const char*, 5> kSpatial = {"left", "right", "top", "bottom", "middle"};
inline constexpr std::array<const char*, 2> kGlue = {"the", "object"};

inline Vocab make_vocab() {
  std::vector<std::string> t = {"<pad>", "<bos>", "<eos>"};
  for (auto w : kColors) t.emplace_back(w);
  for (auto w : kShapes) t.emplace_back(w);
  for (auto w : kSizes) t.emplace_back(w);
  for (auto w : kSpatial) t.emplace_back(w);
  for (auto w : kGlue) t.emplace_back(w);
  return Vocab(std::move(t));
}

/// One attributed region. bbox in unit-square coordinates, size class tied
/// to bbox area: small < 0.04, medium < 0.12, large >= 0.12.
struct Region {
  int color = 0;  // index into kColors
  int shape = 0;  // index into kShapes
  int size = 0;   // 0 small, 1 medium, 2 large
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  double area() const { return (x1 - x0) * (y1 - y0); }
  int quadrant() const { return (cy() < 0.5 ? 0 : 2) + (cx() < 0.5 ? 0 : 1); }
};

struct Scene {
  long long id = 0;
  std::uint64_t rng_seed = 0;
  std::vector<Region> regions;
};

struct ExampleRec {
  int target = 0;
  TokenSeq expr;
  std::string text;
};

struct SceneRecord {
  Scene scene;
  std::vector<ExampleRec> examples;
};

// ---------------------------------------------------------------------------
// Exact symbolic comprehension
// ---------------------------------------------------------------------------

namespace detail {

inline bool spatial_holds(const Region& r, const std::string& w) {
  if (w == "left") return r.cx() < 0.5;
  if (w == "right") return r.cx() > 0.5;
  if (w == "top") return r.cy() < 0.5;
  if (w == "bottom") return r.cy() > 0.5;
  if (w == "middle") return r.cx() >= 0.3 && r.cx() <= 0.7 && r.cy() >= 0.3 && r.cy() <= 0.7;
  return false;
}

template <std::size_t N>
inline int table_index(const std::array<const char*, N>& table, const std::string& w) {
  for (std::size_t i = 0; i < N; ++i)
    if (w == table[i]) return static_cast<int>(i);
  return -1;
}

}  // namespace detail

/// All regions consistent with every attribute/spatial word in the
/// expression. Glue and special tokens are ignored; an empty result is valid.
inline std::vector<int> oracle_comprehend(const Vocab& v, const Scene& scene,
                                          const TokenSeq& expr) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(scene.regions.size()); ++i) {
    const Region& r = scene.regions[static_cast<std::size_t>(i)];
    bool ok = true;
    for (int tok : expr.tokens) {
      const std::string& w = v.word(tok);
      int k;
      if ((k = detail::table_index(kColors, w)) >= 0) {
        if (r.color != k) ok = false;
      } else if ((k = detail::table_index(kShapes, w)) >= 0) {
        if (r.shape != k) ok = false;
      } else if ((k = detail::table_index(kSizes, w)) >= 0) {
        if (r.size != k) ok = false;
      } else if (detail::table_index(kSpatial, w) >= 0) {
        if (!detail::spatial_holds(r, w)) ok = false;
      }
      if (!ok) break;
    }
    if (ok) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle expressions
// ---------------------------------------------------------------------------

/// Which optional attributes an expression includes, besides the mandatory
/// shape word. `spatial_word` is set iff spatial is included.
struct ExprAttrs {
  bool color = false;
  bool size = false;
  std::optional<std::string> spatial_word;
};

inline TokenSeq build_expression(const Vocab& v, const Scene& scene, int target,
                                 const ExprAttrs& at) {
  const Region& r = scene.regions.at(static_cast<std::size_t>(target));
  TokenSeq s;
  s.terminated = true;
  s.tokens.push_back(v.id("the"));
  if (at.size) s.tokens.push_back(v.id(kSizes[static_cast<std::size_t>(r.size)]));
  if (at.color) s.tokens.push_back(v.id(kColors[static_cast<std::size_t>(r.color)]));
  s.tokens.push_back(v.id(kShapes[static_cast<std::size_t>(r.shape)]));
  if (at.spatial_word) s.tokens.push_back(v.id(*at.spatial_word));
  return s;
}

namespace detail {

inline bool unique_match(const Vocab& v, const Scene& scene, int target, const ExprAttrs& at) {
  auto m = oracle_comprehend(v, scene, build_expression(v, scene, target, at));
  return m.size() == 1 && m[0] == target;
}

/// Minimal attribute subset making `target` unique: subsets tried by fewest
/// words, ties broken color < size < spatial; spatial words tried in the
/// fixed order left, right, top, bottom, middle.
inline std::optional<ExprAttrs> minimal_attrs(const Vocab& v, const Scene& scene, int target) {
  const Region& r = scene.regions.at(static_cast<std::size_t>(target));
  std::vector<std::string> spatials;
  for (auto w : kSpatial)
    if (spatial_holds(r, w)) spatials.emplace_back(w);

  // (color?, size?, spatial?) in enumeration order
  constexpr std::array<std::array<bool, 3>, 8> kOrder = {{{false, false, false},
                                                          {true, false, false},
                                                          {false, true, false},
                                                          {false, false, true},
                                                          {true, true, false},
                                                          {true, false, true},
                                                          {false, true, true},
                                                          {true, true, true}}};
  for (const auto& u : kOrder) {
    ExprAttrs at;
    at.color = u[0];
    at.size = u[1];
    if (!u[2]) {
      if (unique_match(v, scene, target, at)) return at;
    } else {
      for (const auto& w : spatials) {
        at.spatial_word = w;
        if (unique_match(v, scene, target, at)) return at;
      }
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Deterministic "the [size?] [color?] [shape] [spatial?]" with the minimal
/// disambiguating attribute subset. Throws if no subset works (excluded by
/// scene sampling).
inline TokenSeq oracle_expression(const Vocab& v, const Scene& scene, int target) {
  auto at = detail::minimal_attrs(v, scene, target);
  if (!at)
    throw std::runtime_error("oracle_expression: no disambiguating subset for region " +
                             std::to_string(target) + " of scene " + std::to_string(scene.id));
  return build_expression(v, scene, target, *at);
}

/// Minimal subset minus one random attribute, when that leaves a valid
/// sentence; nullopt when the minimal expression is already shape-only.
/// Dropping any element of a minimal subset always yields an ambiguous
/// expression, since every smaller subset was tried first.
inline std::optional<TokenSeq> ambiguous_expression(const Vocab& v, const Scene& scene, int target,
                                                    Rng& rng) {
  auto at = detail::minimal_attrs(v, scene, target);
  if (!at) return std::nullopt;
  int count = (at->color ? 1 : 0) + (at->size ? 1 : 0) + (at->spatial_word ? 1 : 0);
  if (count == 0) return std::nullopt;
  int drop = rng.uniform_int(count);
  int seen = 0;
  if (at->color && seen++ == drop) at->color = false;
  else if (at->size && seen++ == drop) at->size = false;
  else if (at->spatial_word && seen++ == drop) at->spatial_word.reset();
  return build_expression(v, scene, target, *at);
}

// ---------------------------------------------------------------------------
// Scene sampling
// ---------------------------------------------------------------------------

/// Rejection-samples a scene of n regions. A draw is rejected when two
/// regions share the (color, shape, size, quadrant) tuple or when some
/// region has no disambiguating expression. Budget of 1000 rejections.
inline Scene sample_scene(Rng& rng, int n_regions, const Vocab* vocab_for_check = nullptr) {
  if (n_regions < 2 || n_regions > 10)
    throw std::invalid_argument("sample_scene: n_regions must be in [2, 10]");
  static const Vocab kCheckVocab = make_vocab();
  const Vocab& v = vocab_for_check ? *vocab_for_check : kCheckVocab;

  int rejections = 0;
  auto charge = [&rejections] {
    if (++rejections > 1000) throw std::runtime_error("sample_scene: resampling budget exceeded");
  };

  for (;;) {
    Scene s;
    s.regions.reserve(static_cast<std::size_t>(n_regions));
    while (static_cast<int>(s.regions.size()) < n_regions) {
      Region r;
      r.color = rng.uniform_int(static_cast<int>(kColors.size()));
      r.shape = rng.uniform_int(static_cast<int>(kShapes.size()));
      r.size = rng.uniform_int(static_cast<int>(kSizes.size()));
      // area ranges keep clear of the 0.04 / 0.12 class boundaries
      double lo = r.size == 0 ? 0.010 : r.size == 1 ? 0.045 : 0.125;
      double hi = r.size == 0 ? 0.035 : r.size == 1 ? 0.115 : 0.300;
      double area = rng.uniform(lo, hi);
      double aspect = rng.uniform(0.5, 2.0);
      double w = std::sqrt(area * aspect);
      double h = std::sqrt(area / aspect);
      r.x0 = rng.uniform(0.0, 1.0 - w);
      r.y0 = rng.uniform(0.0, 1.0 - h);
      r.x1 = r.x0 + w;
      r.y1 = r.y0 + h;

      bool clash = false;
      for (const Region& q : s.regions)
        if (q.color == r.color && q.shape == r.shape && q.size == r.size &&
            q.quadrant() == r.quadrant()) {
          clash = true;
          break;
        }
      if (clash) {
        charge();
        continue;
      }
      s.regions.push_back(r);
    }

    bool all_describable = true;
    for (int i = 0; i < n_regions && all_describable; ++i)
      all_describable = detail::minimal_attrs(v, s, i).has_value();
    if (all_describable) return s;
    charge();
  }
}

// ---------------------------------------------------------------------------
// Region features
// ---------------------------------------------------------------------------

inline constexpr int kAttrDim =
    static_cast<int>(kColors.size() + kShapes.size() + kSizes.size());  // 17
inline constexpr int kFeatureDim = 2 * kAttrDim + 5;                    // concat(o, g, l)

inline Mat clean_attr_vector(const Region& r) {
  Mat m(kAttrDim, 1);
  m.a[static_cast<std::size_t>(r.color)] = 1.0;
  m.a[kColors.size() + static_cast<std::size_t>(r.shape)] = 1.0;
  m.a[kColors.size() + kShapes.size() + static_cast<std::size_t>(r.size)] = 1.0;
  return m;
}

/// o: noisy one-hot attribute stack (noise fixed per scene seed and index),
/// g: mean of all regions' clean attribute vectors, l: corners plus area.
inline RegionFeatures region_features(const Scene& scene, int index, double sigma) {
  const Region& r = scene.regions.at(static_cast<std::size_t>(index));
  RegionFeatures f;
  f.o = clean_attr_vector(r);
  if (sigma > 0.0) {
    Rng noise(derive_seed(scene.rng_seed, "feat", static_cast<std::uint64_t>(index)));
    for (double& x : f.o.a) x += noise.normal(0.0, sigma);
  }
  f.g = Mat(kAttrDim, 1);
  for (const Region& q : scene.regions) {
    Mat c = clean_attr_vector(q);
    for (int i = 0; i < kAttrDim; ++i) f.g.a[static_cast<std::size_t>(i)] += c.a[static_cast<std::size_t>(i)];
  }
  for (double& x : f.g.a) x /= static_cast<double>(scene.regions.size());
  f.l = Mat::column({r.x0, r.y0, r.x1, r.y1, r.area()});
  return f;
}

inline std::vector<RegionFeatures> all_region_features(const Scene& scene, double sigma) {
  std::vector<RegionFeatures> out;
  out.reserve(scene.regions.size());
  for (int i = 0; i < static_cast<int>(scene.regions.size()); ++i)
    out.push_back(region_features(scene, i, sigma));
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation and persistence
// ---------------------------------------------------------------------------

struct WorldConfig {
  int n_scenes = 2000;
  int regions_per_scene = 5;
  double ambiguity_fraction = 0.30;
  double noise_sigma = 0.05;
  double split_train = 0.7;
  double split_val = 0.1;
};

struct DataSplits {
  std::vector<SceneRecord> train, val, test;
};

/// Pure function of (config, master seed): scene i always gets the stream
/// derived from ("scene", i). Ambiguous variants only exist in the train
/// split; val and test stay oracle-clean.
inline DataSplits generate_corpus(const WorldConfig& cfg, const Vocab& v,
                                  std::uint64_t master_seed) {
  if (cfg.n_scenes < 1) throw std::invalid_argument("generate_corpus: n_scenes must be >= 1");
  long long n_train = std::llround(cfg.split_train * cfg.n_scenes);
  long long n_val = std::llround(cfg.split_val * cfg.n_scenes);
  if (n_train + n_val > cfg.n_scenes)
    throw std::invalid_argument("generate_corpus: splits exceed scene count");

  Rng amb(derive_seed(master_seed, "ambiguity"));
  DataSplits out;
  for (int i = 0; i < cfg.n_scenes; ++i) {
    std::uint64_t scene_seed = derive_seed(master_seed, "scene", static_cast<std::uint64_t>(i));
    Rng rng(scene_seed);
    SceneRecord rec;
    rec.scene = sample_scene(rng, cfg.regions_per_scene, &v);
    rec.scene.id = i;
    rec.scene.rng_seed = scene_seed;

    bool is_train = i < n_train;
    for (int t = 0; t < cfg.regions_per_scene; ++t) {
      ExampleRec ex;
      ex.target = t;
      ex.expr = oracle_expression(v, rec.scene, t);
      if (is_train && amb.bernoulli(cfg.ambiguity_fraction)) {
        if (auto a = ambiguous_expression(v, rec.scene, t, amb)) ex.expr = *a;
      }
      ex.text = to_text(v, ex.expr);
      rec.examples.push_back(std::move(ex));
    }
    if (is_train)
      out.train.push_back(std::move(rec));
    else if (i < n_train + n_val)
      out.val.push_back(std::move(rec));
    else
      out.test.push_back(std::move(rec));
  }
  return out;
}

inline nlohmann::json scene_record_json(const SceneRecord& rec) {
  nlohmann::json regions = nlohmann::json::array();
  for (const Region& r : rec.scene.regions) {
    regions.push_back({{"color", kColors[static_cast<std::size_t>(r.color)]},
                       {"shape", kShapes[static_cast<std::size_t>(r.shape)]},
                       {"size", kSizes[static_cast<std::size_t>(r.size)]},
                       {"bbox", {r.x0, r.y0, r.x1, r.y1}}});
  }
  nlohmann::json examples = nlohmann::json::array();
  for (const ExampleRec& e : rec.examples)
    examples.push_back({{"target", e.target}, {"tokens", e.expr.tokens}, {"text", e.text}});
  return {{"scene-id", rec.scene.id},
          {"rng-seed", rec.scene.rng_seed},
          {"regions", regions},
          {"examples", examples}};
}

inline void write_corpus_jsonl(const std::string& path, const std::vector<SceneRecord>& recs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const SceneRecord& rec : recs) out << scene_record_json(rec).dump() << '\n';
}

inline std::vector<SceneRecord> read_corpus_jsonl(const std::string& path, const Vocab& v) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<SceneRecord> recs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    SceneRecord rec;
    rec.scene.id = j.at("scene-id").get<long long>();
    rec.scene.rng_seed = j.at("rng-seed").get<std::uint64_t>();
    for (const auto& rj : j.at("regions")) {
      Region r;
      r.color = detail::table_index(kColors, rj.at("color").get<std::string>());
      r.shape = detail::table_index(kShapes, rj.at("shape").get<std::string>());
      r.size = detail::table_index(kSizes, rj.at("size").get<std::string>());
      if (r.color < 0 || r.shape < 0 || r.size < 0)
        throw std::runtime_error(path + ": unknown attribute in scene " +
                                 std::to_string(rec.scene.id));
      const auto& bb = rj.at("bbox");
      r.x0 = bb.at(0).get<double>();
      r.y0 = bb.at(1).get<double>();
      r.x1 = bb.at(2).get<double>();
      r.y1 = bb.at(3).get<double>();
      rec.scene.regions.push_back(r);
    }
    for (const auto& ej : j.at("examples")) {
      ExampleRec e;
      e.target = ej.at("target").get<int>();
      e.expr.tokens = ej.at("tokens").get<std::vector<int>>();
      e.expr.terminated = true;
      for (int tok : e.expr.tokens)
        if (tok < 0 || tok >= v.size())
          throw std::runtime_error(path + ": token index out of vocabulary");
      e.text = ej.at("text").get<std::string>();
      rec.examples.push_back(std::move(e));
    }
    recs.push_back(std::move(rec));
  }
  return recs;
}

inline void write_vocab_json(const std::string& path, const Vocab& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << nlohmann::json(v.words()).dump() << '\n';
}

inline Vocab read_vocab_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  in >> j;
  return Vocab(j.get<std::vector<std::string>>());
}

/// Flat (scene, example) index pairs for training loops.
struct ItemRef {
  int scene = 0;
  int ex = 0;
};

inline std::vector<ItemRef> flatten(const std::vector<SceneRecord>& recs) {
  std::vector<ItemRef> out;
  for (int s = 0; s < static_cast<int>(recs.size()); ++s)
    for (int e = 0; e < static_cast<int>(recs[static_cast<std::size_t>(s)].examples.size()); ++e)
      out.push_back({s, e});
  return out;
}

}  // namespace refex
