#pragma once

// Vocabulary, tokenization, and title segmentation. The vocabulary is
// corpus-derived and closed; tokenization is a whitespace/character hybrid:
// unknown words fall back to per-character lookup before [UNK].

#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "coverclip/errors.hpp"

namespace coverclip {

struct TokenSequence {
  std::vector<int> ids;  // padded to max_len with kPad
  int true_len = 0;      // [CLS] plus real tokens

  std::vector<std::uint8_t> attention_mask() const {
    std::vector<std::uint8_t> m(ids.size(), 0);
    for (int i = 0; i < true_len; ++i) m[static_cast<std::size_t>(i)] = 1;
    return m;
  }
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kUnk = 2;
  static constexpr const char* kPadToken = "[PAD]";
  static constexpr const char* kClsToken = "[CLS]";
  static constexpr const char* kUnkToken = "[UNK]";

  Vocabulary() { add_specials(); }

  explicit Vocabulary(const std::vector<std::string>& corpus_tokens) {
    add_specials();
    for (const std::string& t : corpus_tokens) add(t);
  }

  // Full ordered token list, specials first (as written by save()).
  static Vocabulary from_ordered_tokens(const std::vector<std::string>& all_tokens) {
    if (all_tokens.size() < 3 || all_tokens[0] != kPadToken || all_tokens[1] != kClsToken ||
        all_tokens[2] != kUnkToken)
      throw ConfigError("ordered vocabulary must start with [PAD], [CLS], [UNK]");
    Vocabulary v;
    v.tokens_.clear();
    v.index_.clear();
    for (const std::string& t : all_tokens) {
      v.index_.emplace(t, static_cast<int>(v.tokens_.size()));
      v.tokens_.push_back(t);
    }
    return v;
  }

  const std::vector<std::string>& ordered_tokens() const { return tokens_; }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("vocabulary file not found: " + path);
    Vocabulary v;
    v.tokens_.clear();
    v.index_.clear();
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      v.index_.emplace(line, static_cast<int>(v.tokens_.size()));
      v.tokens_.push_back(line);
    }
    if (v.tokens_.size() < 3 || v.tokens_[0] != kPadToken || v.tokens_[1] != kClsToken ||
        v.tokens_[2] != kUnkToken)
      throw IoError("vocabulary file " + path + " must start with [PAD], [CLS], [UNK]");
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    for (const std::string& t : tokens_) out << t << "\n";
  }

  int add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    index_.emplace(token, id);
    tokens_.push_back(token);
    return id;
  }

  int id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
  }

  const std::string& token(int id) const { return tokens_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(tokens_.size()); }

 private:
  void add_specials() {
    tokens_ = {kPadToken, kClsToken, kUnkToken};
    index_ = {{kPadToken, kPad}, {kClsToken, kCls}, {kUnkToken, kUnk}};
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

inline std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> parts;
  std::istringstream iss(text);
  std::string w;
  while (iss >> w) parts.push_back(w);
  return parts;
}

// [CLS]-prefixed, truncated to max_len, padded with [PAD].
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, int max_len) {
  if (max_len < 1) throw ConfigError("tokenize: max_len must be at least 1");
  TokenSequence seq;
  seq.ids.reserve(static_cast<std::size_t>(max_len));
  seq.ids.push_back(Vocabulary::kCls);
  for (const std::string& word : split_whitespace(text)) {
    if (static_cast<int>(seq.ids.size()) >= max_len) break;
    int id = vocab.id_of(word);
    if (id >= 0) {
      seq.ids.push_back(id);
      continue;
    }
    // character fallback for out-of-vocabulary words
    for (std::size_t i = 0; i < word.size() && static_cast<int>(seq.ids.size()) < max_len; ++i) {
      int cid = vocab.id_of(std::string(1, word[i]));
      seq.ids.push_back(cid >= 0 ? cid : Vocabulary::kUnk);
    }
  }
  seq.true_len = static_cast<int>(seq.ids.size());
  seq.ids.resize(static_cast<std::size_t>(max_len), Vocabulary::kPad);
  return seq;
}

// ---------------------------------------------------------------------------
// Title segmentation
// ---------------------------------------------------------------------------

struct Segmenter {
  virtual ~Segmenter() = default;
  virtual std::vector<std::string> segment(const std::string& text) const = 0;
};

struct WhitespaceSegmenter final : Segmenter {
  std::vector<std::string> segment(const std::string& text) const override {
    return split_whitespace(text);
  }
};

// Greedy longest-match over a closed dictionary; throws when a span cannot be
// matched so the caller falls back to the original text.
struct DictionarySegmenter final : Segmenter {
  explicit DictionarySegmenter(std::set<std::string> dictionary)
      : dict_(std::move(dictionary)) {
    for (const std::string& w : dict_) max_word_ = std::max(max_word_, w.size());
  }

  std::vector<std::string> segment(const std::string& text) const override {
    std::vector<std::string> out;
    for (const std::string& chunk : split_whitespace(text)) {
      std::size_t pos = 0;
      while (pos < chunk.size()) {
        std::size_t len = std::min(max_word_, chunk.size() - pos);
        for (; len > 0; --len)
          if (dict_.count(chunk.substr(pos, len))) break;
        if (len == 0)
          throw std::runtime_error("segmentation failed at '" + chunk.substr(pos) + "'");
        out.push_back(chunk.substr(pos, len));
        pos += len;
      }
    }
    return out;
  }

 private:
  std::set<std::string> dict_;
  std::size_t max_word_ = 0;
};

// Splits the title into lexical units joined by single spaces; any segmenter
// failure returns the original title unchanged.
inline std::string segment_title(const std::string& title, const Segmenter& segmenter) {
  try {
    std::vector<std::string> units = segmenter.segment(title);
    std::string out;
    for (std::size_t i = 0; i < units.size(); ++i) {
      if (i > 0) out += ' ';
      out += units[i];
    }
    return out;
  } catch (const std::exception&) {
    return title;
  }
}

}  // namespace coverclip
