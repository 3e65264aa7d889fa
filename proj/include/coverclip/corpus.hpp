#pragma once

// Procedural cover-image corpus: topic-colored backgrounds, token titles,
// optional rendered cover-text strips with machine-exact glyphs, and
// graded-relevance evaluation queries. Everything is a pure function of the
// generator seed.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "coverclip/errors.hpp"
#include "coverclip/image.hpp"
#include "coverclip/rng.hpp"
#include "coverclip/tokenizer.hpp"

namespace coverclip {

struct TopicSpec {
  int topic_id = 0;
  std::array<std::array<double, 3>, 3> palette{};  // base, secondary, accent
  std::uint64_t layout_seed = 0;
  std::vector<std::string> vocab_slice;
};

struct CorpusConfig {
  int n_samples = 1000;
  int n_topics = 8;
  double ocr_fraction = 0.33;
  std::uint64_t seed = 1;
  int resolution = 64;
  int tokens_per_topic = 40;
  int themes_per_topic = 5;
};

// ---------------------------------------------------------------------------
// Tokens and glyphs
// ---------------------------------------------------------------------------

// Global token index -> a unique pronounceable 4-letter string.
inline std::string corpus_token(int global_index) {
  static const char* consonants = "bcdfgklmnprstvz";
  static const char* vowels = "aeiou";
  auto syllable = [&](int k) {
    std::string s;
    s += consonants[(k / 5) % 15];
    s += vowels[k % 5];
    return s;
  };
  return syllable(global_index % 75) + syllable((global_index / 75) % 75);
}

inline std::vector<std::string> corpus_tokens(const CorpusConfig& cfg) {
  std::vector<std::string> tokens;
  tokens.reserve(static_cast<std::size_t>(cfg.n_topics) * cfg.tokens_per_topic);
  for (int g = 0; g < cfg.n_topics * cfg.tokens_per_topic; ++g)
    tokens.push_back(corpus_token(g));
  return tokens;
}

// Fixed bijection token index <-> 5x5 binary pattern: the bits of (index+1)
// scattered over the 25 cells by a constant permutation.
inline const std::array<int, 25>& glyph_bit_positions() {
  static const std::array<int, 25> perm = [] {
    std::array<int, 25> p{};
    for (int i = 0; i < 25; ++i) p[static_cast<std::size_t>(i)] = i;
    Rng rng(0x515f9a11u);  // constant: the bijection never varies with corpus seed
    for (int i = 24; i > 0; --i) {
      int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
      std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
  }();
  return perm;
}

inline std::array<bool, 25> glyph_pattern(int token_index) {
  const std::uint32_t v = static_cast<std::uint32_t>(token_index) + 1;
  if (v >= (1u << 25)) throw ConfigError("vocabulary too large for glyph encoding");
  std::array<bool, 25> cells{};
  const auto& perm = glyph_bit_positions();
  for (int bit = 0; bit < 25; ++bit)
    if (v & (1u << bit)) cells[static_cast<std::size_t>(perm[static_cast<std::size_t>(bit)])] = true;
  return cells;
}

// Strip geometry, derived from the image resolution. The band stays within
// the bottom quarter of the image.
struct StripGeometry {
  int cell = 0;       // pixels per glyph cell
  int band_top = 0;   // first row of the band
  int band_h = 0;     // band height in pixels
  int slot_w = 0;     // glyph width plus gap
  int margin = 0;
  int max_glyphs = 0;

  static StripGeometry for_resolution(int res) {
    StripGeometry g;
    g.cell = std::max(1, res / 32);
    const int glyph_px = 5 * g.cell;
    g.band_h = glyph_px + 2;
    g.band_top = res - g.band_h - 2;
    g.slot_w = glyph_px + 2;
    g.margin = 2;
    g.max_glyphs = (res - 2 * g.margin) / g.slot_w;
    if (g.band_h + 2 > res / 4)
      throw ConfigError("resolution too small for a cover-text strip within 25% of height");
    return g;
  }
};

inline void render_strip(Image& img, const std::vector<int>& token_indices) {
  const StripGeometry g = StripGeometry::for_resolution(img.width);
  if (static_cast<int>(token_indices.size()) > g.max_glyphs)
    throw ConfigError("too many strip tokens for this resolution");
  constexpr std::uint8_t bg = 18, fg = 245;
  for (int y = g.band_top; y < g.band_top + g.band_h; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg;
  for (std::size_t slot = 0; slot < token_indices.size(); ++slot) {
    const std::array<bool, 25> cells = glyph_pattern(token_indices[slot]);
    const int gx = g.margin + static_cast<int>(slot) * g.slot_w;
    const int gy = g.band_top + 1;
    for (int cy = 0; cy < 5; ++cy)
      for (int cx = 0; cx < 5; ++cx) {
        if (!cells[static_cast<std::size_t>(cy * 5 + cx)]) continue;
        for (int py = 0; py < g.cell; ++py)
          for (int px = 0; px < g.cell; ++px)
            for (int c = 0; c < 3; ++c)
              img.at(gy + cy * g.cell + py, gx + cx * g.cell + px, c) = fg;
      }
  }
}

// Reads the strip band back into the cover text. Returns nullopt when the
// band does not decode to valid token indices (e.g. no strip was rendered).
inline std::optional<std::string> decode_strip(const Image& img,
                                               const std::vector<std::string>& tokens) {
  const StripGeometry g = StripGeometry::for_resolution(img.width);
  const auto& perm = glyph_bit_positions();
  std::string text;
  for (int slot = 0; slot < g.max_glyphs; ++slot) {
    const int gx = g.margin + slot * g.slot_w;
    const int gy = g.band_top + 1;
    std::uint32_t v = 0;
    for (int bit = 0; bit < 25; ++bit) {
      const int cellpos = perm[static_cast<std::size_t>(bit)];
      const int cy = cellpos / 5, cx = cellpos % 5;
      const int py = gy + cy * g.cell + g.cell / 2;
      const int px = gx + cx * g.cell + g.cell / 2;
      const int lum = img.at(py, px, 0) + img.at(py, px, 1) + img.at(py, px, 2);
      if (lum > 3 * 128) v |= (1u << bit);
    }
    if (v == 0) break;  // empty slot terminates the strip
    if (v - 1 >= tokens.size()) return std::nullopt;
    if (!text.empty()) text += ' ';
    text += tokens[v - 1];
  }
  if (text.empty()) return std::nullopt;
  return text;
}

// ---------------------------------------------------------------------------
// Topics
// ---------------------------------------------------------------------------

// Base colors on a 3-d grid with at least 0.15 separation in some channel,
// assigned to topics through a seeded permutation.
inline std::vector<TopicSpec> make_topics(const CorpusConfig& cfg) {
  if (cfg.n_topics < 2) throw ConfigError("need at least 2 topics");
  int per_axis = 2;
  while (per_axis * per_axis * per_axis < cfg.n_topics) ++per_axis;
  const double lo = 0.2, hi = 0.85;
  const double step = per_axis > 1 ? (hi - lo) / (per_axis - 1) : 0.0;
  if (per_axis > 1 && step < 0.15)
    throw ConfigError("too many topics for distinct palettes at 0.15 channel separation");

  std::vector<int> cells(static_cast<std::size_t>(per_axis) * per_axis * per_axis);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  Rng prng(derive_seed(cfg.seed, "palette"));
  prng.shuffle(cells);

  std::vector<TopicSpec> topics(static_cast<std::size_t>(cfg.n_topics));
  for (int t = 0; t < cfg.n_topics; ++t) {
    TopicSpec& spec = topics[static_cast<std::size_t>(t)];
    spec.topic_id = t;
    const int cell = cells[static_cast<std::size_t>(t)];
    const double r = lo + step * (cell % per_axis);
    const double g = lo + step * ((cell / per_axis) % per_axis);
    const double b = lo + step * (cell / (per_axis * per_axis));
    auto clamp01 = [](double v) { return std::min(0.95, std::max(0.05, v)); };
    spec.palette[0] = {r, g, b};
    spec.palette[1] = {clamp01(0.75 * r + 0.18), clamp01(0.75 * g + 0.18), clamp01(0.75 * b + 0.18)};
    spec.palette[2] = {clamp01(0.6 * r + 0.32), clamp01(0.6 * g + 0.05), clamp01(0.6 * b + 0.2)};
    spec.layout_seed = derive_seed(cfg.seed, "layout", static_cast<std::uint64_t>(t));
    spec.vocab_slice.reserve(static_cast<std::size_t>(cfg.tokens_per_topic));
    for (int k = 0; k < cfg.tokens_per_topic; ++k)
      spec.vocab_slice.push_back(corpus_token(t * cfg.tokens_per_topic + k));
  }
  return topics;
}

// ---------------------------------------------------------------------------
// Sample synthesis
// ---------------------------------------------------------------------------

namespace corpusdetail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
}

inline void draw_background(Image& img, const TopicSpec& topic) {
  const auto& c0 = topic.palette[0];
  const auto& c1 = topic.palette[1];
  for (int y = 0; y < img.height; ++y) {
    const double t = img.height > 1 ? static_cast<double>(y) / (img.height - 1) : 0.0;
    for (int c = 0; c < 3; ++c) {
      const std::uint8_t v = to_byte(c0[static_cast<std::size_t>(c)] * (1 - t) +
                                     c1[static_cast<std::size_t>(c)] * t);
      for (int x = 0; x < img.width; ++x) img.at(y, x, c) = v;
    }
  }
}

inline void draw_shapes(Image& img, const TopicSpec& topic, Rng& rng) {
  const int n_shapes = 2 + static_cast<int>(rng.uniform_int(3));
  for (int s = 0; s < n_shapes; ++s) {
    const auto& col = topic.palette[(topic.layout_seed + static_cast<std::uint64_t>(s)) % 2 + 1];
    const bool circle = ((topic.layout_seed >> (s % 16)) & 1) != 0;
    const int size = img.width / 8 + static_cast<int>(rng.uniform_int(img.width / 8 + 1));
    const int cx = static_cast<int>(rng.uniform_int(img.width));
    const int cy = static_cast<int>(rng.uniform_int(img.height * 3 / 4));  // keep off the strip band
    for (int y = std::max(0, cy - size); y < std::min(img.height, cy + size); ++y)
      for (int x = std::max(0, cx - size); x < std::min(img.width, cx + size); ++x) {
        if (circle && (x - cx) * (x - cx) + (y - cy) * (y - cy) > size * size) continue;
        for (int c = 0; c < 3; ++c)
          img.at(y, x, c) = to_byte(0.65 * col[static_cast<std::size_t>(c)] +
                                    0.35 * img.at(y, x, c) / 255.0);
      }
  }
}

inline std::vector<std::string> pick_title(const TopicSpec& topic, int themes, Rng& rng) {
  const int theme_size = static_cast<int>(topic.vocab_slice.size()) / themes;
  const int theme = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(themes)));
  std::vector<int> idx(static_cast<std::size_t>(theme_size));
  for (int i = 0; i < theme_size; ++i) idx[static_cast<std::size_t>(i)] = theme * theme_size + i;
  rng.shuffle(idx);
  const int count = 2 + static_cast<int>(rng.uniform_int(5));  // 2..6 tokens
  std::vector<std::string> title;
  for (int i = 0; i < std::min(count, theme_size); ++i)
    title.push_back(topic.vocab_slice[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  // occasional crossover outside the theme adds single-token overlaps
  if (rng.bernoulli(0.25))
    title.back() = topic.vocab_slice[rng.uniform_int(topic.vocab_slice.size())];
  return title;
}

inline std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += ' ';
    out += parts[i];
  }
  return out;
}

}  // namespace corpusdetail

struct GeneratedSample {
  std::string id;
  int topic_id = 0;
  std::string title;
  std::optional<std::string> ocr_text;
  Image image;
};

inline GeneratedSample generate_sample(const CorpusConfig& cfg,
                                       const std::vector<TopicSpec>& topics, int index) {
  using namespace corpusdetail;
  Rng rng(derive_seed(cfg.seed, "sample", static_cast<std::uint64_t>(index)));
  const TopicSpec& topic = topics[rng.uniform_int(static_cast<std::uint64_t>(topics.size()))];

  GeneratedSample s;
  char idbuf[16];
  std::snprintf(idbuf, sizeof(idbuf), "s%06d", index);
  s.id = idbuf;
  s.topic_id = topic.topic_id;

  const std::vector<std::string> title_tokens = pick_title(topic, cfg.themes_per_topic, rng);
  s.title = join(title_tokens);

  s.image = Image::filled(cfg.resolution, cfg.resolution, 0, 0, 0);
  draw_background(s.image, topic);
  draw_shapes(s.image, topic, rng);

  if (rng.bernoulli(cfg.ocr_fraction)) {
    const int k = 1 + static_cast<int>(rng.uniform_int(4));  // 1..4 strip tokens
    std::vector<int> strip_indices;
    std::vector<std::string> strip_tokens;
    for (int i = 0; i < k; ++i) {
      std::string tok;
      if (rng.bernoulli(0.8))
        tok = title_tokens[rng.uniform_int(title_tokens.size())];
      else
        tok = topic.vocab_slice[rng.uniform_int(topic.vocab_slice.size())];
      strip_tokens.push_back(tok);
      strip_indices.push_back(topic.topic_id * cfg.tokens_per_topic +
                              static_cast<int>(std::find(topic.vocab_slice.begin(),
                                                         topic.vocab_slice.end(), tok) -
                                               topic.vocab_slice.begin()));
    }
    render_strip(s.image, strip_indices);
    s.ocr_text = join(strip_tokens);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Corpus and evaluation-set emission
// ---------------------------------------------------------------------------

inline std::string generate_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (cfg.n_topics < 2) throw ConfigError("need at least 2 topics");
  if (cfg.ocr_fraction < 0.0 || cfg.ocr_fraction > 1.0)
    throw ConfigError("ocr_fraction must lie in [0, 1], got " + std::to_string(cfg.ocr_fraction));

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

  const std::vector<TopicSpec> topics = make_topics(cfg);

  const fs::path manifest_path = fs::path(out_dir) / "corpus.jsonl";
  std::ofstream manifest(manifest_path, std::ios::binary);
  if (!manifest) throw IoError("cannot write manifest " + manifest_path.string());

  for (int i = 0; i < cfg.n_samples; ++i) {
    GeneratedSample s = generate_sample(cfg, topics, i);
    const std::string rel = "images/" + s.id + ".png";
    write_png((fs::path(out_dir) / rel).string(), s.image);
    nlohmann::json line{{"id", s.id}, {"image_path", rel}, {"title", s.title}, {"topic", s.topic_id}};
    if (s.ocr_text) line["ocr_text"] = *s.ocr_text;
    manifest << line.dump() << "\n";
  }
  manifest.close();

  // vocabulary: specials then every topic token in global order
  std::ofstream vocab(fs::path(out_dir) / "vocab.txt", std::ios::binary);
  vocab << "[PAD]\n[CLS]\n[UNK]\n";
  for (const std::string& t : corpus_tokens(cfg)) vocab << t << "\n";
  vocab.close();

  nlohmann::json sidecar{{"n_samples", cfg.n_samples},     {"n_topics", cfg.n_topics},
                         {"ocr_fraction", cfg.ocr_fraction}, {"seed", cfg.seed},
                         {"resolution", cfg.resolution},   {"tokens_per_topic", cfg.tokens_per_topic},
                         {"themes_per_topic", cfg.themes_per_topic}};
  std::ofstream side(fs::path(out_dir) / "gen_config.json", std::ios::binary);
  side << sidecar.dump(2) << "\n";

  return manifest_path.string();
}

inline CorpusConfig load_corpus_sidecar(const std::string& corpus_manifest) {
  namespace fs = std::filesystem;
  const fs::path side_path = fs::path(corpus_manifest).parent_path() / "gen_config.json";
  std::ifstream in(side_path);
  if (!in) throw IoError("corpus sidecar not found: " + side_path.string());
  nlohmann::json j;
  in >> j;
  CorpusConfig cfg;
  cfg.n_samples = j.at("n_samples").get<int>();
  cfg.n_topics = j.at("n_topics").get<int>();
  cfg.ocr_fraction = j.at("ocr_fraction").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.resolution = j.at("resolution").get<int>();
  cfg.tokens_per_topic = j.at("tokens_per_topic").get<int>();
  cfg.themes_per_topic = j.at("themes_per_topic").get<int>();
  return cfg;
}

struct EvalGenStats {
  int queries_emitted = 0;
  int queries_skipped = 0;
};

// Builds graded-relevance query pools over an existing corpus. Grades follow
// the construction rule: same topic with >=2 title/query token overlap -> 2,
// same topic with exactly 1 -> 1, different topic -> 0. Pool sizes stay in
// [5, 30) and the pooled grade mix targets roughly 30/31/39.
inline std::string generate_eval_set(const std::string& corpus_manifest, int n_queries,
                                     std::uint64_t seed, EvalGenStats* stats = nullptr) {
  namespace fs = std::filesystem;
  const CorpusConfig cfg = load_corpus_sidecar(corpus_manifest);
  const std::vector<TopicSpec> topics = make_topics(cfg);

  struct Item {
    std::string id, image_path, title;
    std::optional<std::string> ocr_text;
    int topic = 0;
    std::set<std::string> title_set;
  };
  std::vector<Item> items;
  {
    std::ifstream in(corpus_manifest);
    if (!in) throw IoError("corpus manifest not found: " + corpus_manifest);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        Item it;
        it.id = j.at("id").get<std::string>();
        it.image_path = j.at("image_path").get<std::string>();
        it.title = j.at("title").get<std::string>();
        it.topic = j.at("topic").get<int>();
        if (j.contains("ocr_text")) it.ocr_text = j.at("ocr_text").get<std::string>();
        for (const std::string& t : split_whitespace(it.title)) it.title_set.insert(t);
        items.push_back(std::move(it));
      } catch (const nlohmann::json::exception& e) {
        throw IoError("corpus manifest line " + std::to_string(line_no) +
                      " is malformed: " + e.what());
      }
    }
  }
  if (items.empty()) throw IoError("corpus manifest is empty: " + corpus_manifest);

  std::vector<std::vector<std::size_t>> by_topic(static_cast<std::size_t>(cfg.n_topics));
  for (std::size_t i = 0; i < items.size(); ++i)
    by_topic[static_cast<std::size_t>(items[i].topic)].push_back(i);

  Rng rng(derive_seed(seed, "eval-queries"));
  std::set<std::string> used_queries;
  const fs::path out_path = fs::path(corpus_manifest).parent_path() / "eval.jsonl";
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write eval manifest " + out_path.string());

  EvalGenStats local;
  const int theme_size = cfg.tokens_per_topic / cfg.themes_per_topic;
  const int max_attempts = std::max(1, n_queries) * 40;
  for (int attempt = 0; attempt < max_attempts && local.queries_emitted < n_queries; ++attempt) {
    const int topic = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.n_topics)));
    const TopicSpec& spec = topics[static_cast<std::size_t>(topic)];
    const int theme = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.themes_per_topic)));
    std::vector<int> idx(static_cast<std::size_t>(theme_size));
    for (int i = 0; i < theme_size; ++i) idx[static_cast<std::size_t>(i)] = theme * theme_size + i;
    rng.shuffle(idx);
    const int qlen = 2 + static_cast<int>(rng.uniform_int(3));  // 2..4 tokens
    std::vector<std::string> qtok;
    for (int i = 0; i < std::min(qlen, theme_size); ++i)
      qtok.push_back(spec.vocab_slice[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    const std::string query = corpusdetail::join(qtok);
    if (used_queries.count(query)) continue;
    std::set<std::string> qset(qtok.begin(), qtok.end());

    std::vector<std::size_t> strong, weak, irrelevant;
    for (std::size_t i : by_topic[static_cast<std::size_t>(topic)]) {
      int overlap = 0;
      for (const std::string& t : qset) overlap += items[i].title_set.count(t) ? 1 : 0;
      if (overlap >= 2)
        strong.push_back(i);
      else if (overlap == 1)
        weak.push_back(i);
    }
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].topic != topic) irrelevant.push_back(i);

    const int m = 5 + static_cast<int>(rng.uniform_int(25));  // pool size in [5, 30)
    int n2 = static_cast<int>(std::lround(0.30 * m));
    int n1 = static_cast<int>(std::lround(0.31 * m));
    int n0 = m - n2 - n1;
    if (n2 < 1) n2 = 1;
    if (n1 < 1) n1 = 1;
    if (n0 < 1) n0 = 1;
    if (static_cast<int>(strong.size()) < n2 || static_cast<int>(weak.size()) < n1 ||
        static_cast<int>(irrelevant.size()) < n0) {
      ++local.queries_skipped;
      continue;
    }
    rng.shuffle(strong);
    rng.shuffle(weak);
    rng.shuffle(irrelevant);

    auto emit = [&](std::size_t i, int grade) {
      const Item& it = items[i];
      nlohmann::json line{{"id", it.id},       {"image_path", it.image_path},
                          {"title", it.title}, {"query", query},
                          {"relevance", grade}};
      if (it.ocr_text) line["ocr_text"] = *it.ocr_text;
      out << line.dump() << "\n";
    };
    for (int i = 0; i < n2; ++i) emit(strong[static_cast<std::size_t>(i)], 2);
    for (int i = 0; i < n1; ++i) emit(weak[static_cast<std::size_t>(i)], 1);
    for (int i = 0; i < n0; ++i) emit(irrelevant[static_cast<std::size_t>(i)], 0);

    used_queries.insert(query);
    ++local.queries_emitted;
  }
  if (stats != nullptr) *stats = local;
  if (local.queries_emitted < n_queries)
    throw ConfigError("could only build " + std::to_string(local.queries_emitted) + " of " +
                      std::to_string(n_queries) + " queries (" +
                      std::to_string(local.queries_skipped) + " skipped); corpus too small");
  return out_path.string();
}

}  // namespace coverclip
