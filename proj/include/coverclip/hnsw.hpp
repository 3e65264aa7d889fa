#pragma once

// Hierarchical navigable small-world index over unit vectors with cosine
// distance, plus the text-level wrapper used for negative mining and an
// exact-search oracle. Construction is deterministic: seeded level draws,
// insertion ordered by id, and index-based tie-breaks throughout.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "coverclip/data.hpp"
#include "coverclip/errors.hpp"
#include "coverclip/rng.hpp"

namespace coverclip {

struct HnswParams {
  int M = 16;
  int ef_construction = 200;
  int ef_search = 128;
  std::uint64_t seed = 1;

  int m0() const { return 2 * M; }
  double level_multiplier() const { return 1.0 / std::log(static_cast<double>(M)); }
};

class HnswIndex {
 public:
  struct Hit {
    int node = -1;
    double distance = 0.0;
  };

  HnswIndex() = default;
  HnswIndex(int dim, const HnswParams& params)
      : dim_(dim), params_(params), level_rng_(derive_seed(params.seed, "hnsw-levels")) {}

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  int max_layer() const { return max_layer_; }
  int entry_point() const { return entry_; }
  const HnswParams& params() const { return params_; }
  const std::vector<double>& vector_of(int node) const {
    return nodes_[static_cast<std::size_t>(node)].vec;
  }
  const std::vector<std::vector<int>>& layers_of(int node) const {
    return nodes_[static_cast<std::size_t>(node)].links;
  }

  // cosine distance over unit vectors
  double distance(const double* a, const double* b) const {
    double dot = 0.0;
    for (int i = 0; i < dim_; ++i) dot += a[i] * b[i];
    return 1.0 - dot;
  }

  int insert(const std::vector<double>& vec) {
    if (static_cast<int>(vec.size()) != dim_)
      throw ShapeError("hnsw insert: vector has " + std::to_string(vec.size()) +
                       " dims, index expects " + std::to_string(dim_));
    const int id = size();
    const int level = draw_level();
    nodes_.push_back({vec, std::vector<std::vector<int>>(static_cast<std::size_t>(level) + 1)});

    if (entry_ < 0) {
      entry_ = id;
      max_layer_ = level;
      return id;
    }

    int current = entry_;
    for (int l = max_layer_; l > level; --l) current = greedy_closest(vec.data(), current, l);

    for (int l = std::min(level, max_layer_); l >= 0; --l) {
      std::vector<Hit> cands = search_layer(vec.data(), current, params_.ef_construction, l);
      const int cap = l == 0 ? params_.m0() : params_.M;
      std::vector<Hit> neighbors = select_neighbors(vec.data(), cands, params_.M);
      for (const Hit& nb : neighbors) {
        link(id, nb.node, l);
        link(nb.node, id, l);
        shrink(nb.node, l, cap);
      }
      shrink(id, l, cap);
      if (!cands.empty()) current = cands.front().node;
    }

    if (level > max_layer_) {
      entry_ = id;
      max_layer_ = level;
    }
    return id;
  }

  // Top-k by ascending cosine distance; ties break toward the lower node id.
  // Requesting more than the index holds returns everything, flagged.
  std::vector<Hit> search(const std::vector<double>& query, int k, int ef,
                          bool* truncated = nullptr) const {
    if (truncated != nullptr) *truncated = false;
    if (entry_ < 0) return {};
    if (ef < k) ef = k;
    if (k > size()) {
      if (truncated != nullptr) *truncated = true;
      k = size();
      ef = std::max(ef, size());
    }
    int current = entry_;
    for (int l = max_layer_; l > 0; --l) current = greedy_closest(query.data(), current, l);
    std::vector<Hit> found = search_layer(query.data(), current, ef, 0);
    if (static_cast<int>(found.size()) > k) found.resize(static_cast<std::size_t>(k));
    return found;
  }

  // Full linear scan; the verification oracle.
  std::vector<Hit> exact_topk(const std::vector<double>& query, int k) const {
    std::vector<Hit> all;
    all.reserve(nodes_.size());
    for (int i = 0; i < size(); ++i)
      all.push_back({i, distance(query.data(), nodes_[static_cast<std::size_t>(i)].vec.data())});
    std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.node < b.node;
    });
    if (static_cast<int>(all.size()) > k) all.resize(static_cast<std::size_t>(std::max(k, 0)));
    return all;
  }

  // Degree bounds and symmetric links; used by tests after construction.
  void check_invariants() const {
    for (int i = 0; i < size(); ++i) {
      const auto& links = nodes_[static_cast<std::size_t>(i)].links;
      for (std::size_t l = 0; l < links.size(); ++l) {
        const int cap = l == 0 ? params_.m0() : params_.M;
        if (static_cast<int>(links[l].size()) > cap)
          throw ContractError("hnsw: node " + std::to_string(i) + " exceeds degree bound at layer " +
                              std::to_string(l));
        for (int nb : links[l]) {
          const auto& back = nodes_[static_cast<std::size_t>(nb)].links;
          if (l >= back.size() ||
              std::find(back[l].begin(), back[l].end(), i) == back[l].end())
            throw ContractError("hnsw: asymmetric link " + std::to_string(i) + "->" +
                                std::to_string(nb));
        }
      }
    }
  }

 private:
  struct Node {
    std::vector<double> vec;
    std::vector<std::vector<int>> links;  // per layer
  };

  int draw_level() {
    const double u = 1.0 - level_rng_.uniform();  // (0,1]
    return static_cast<int>(-std::log(u) * params_.level_multiplier());
  }

  void link(int from, int to, int layer) {
    if (from == to) return;
    auto& lst = nodes_[static_cast<std::size_t>(from)].links[static_cast<std::size_t>(layer)];
    if (std::find(lst.begin(), lst.end(), to) == lst.end()) lst.push_back(to);
  }

  void unlink(int from, int to, int layer) {
    auto& lst = nodes_[static_cast<std::size_t>(from)].links[static_cast<std::size_t>(layer)];
    lst.erase(std::remove(lst.begin(), lst.end(), to), lst.end());
  }

  // Keeps at most cap links, chosen by the selection heuristic; removed edges
  // drop their reverse side too so links stay bidirectional.
  void shrink(int node, int layer, int cap) {
    auto& lst = nodes_[static_cast<std::size_t>(node)].links[static_cast<std::size_t>(layer)];
    if (static_cast<int>(lst.size()) <= cap) return;
    const double* base = nodes_[static_cast<std::size_t>(node)].vec.data();
    std::vector<Hit> cands;
    cands.reserve(lst.size());
    for (int nb : lst)
      cands.push_back({nb, distance(base, nodes_[static_cast<std::size_t>(nb)].vec.data())});
    sort_hits(cands);
    std::vector<Hit> kept = select_neighbors(base, cands, cap);
    std::vector<int> keep_ids;
    keep_ids.reserve(kept.size());
    for (const Hit& h : kept) keep_ids.push_back(h.node);
    for (int nb : std::vector<int>(lst)) {
      if (std::find(keep_ids.begin(), keep_ids.end(), nb) == keep_ids.end()) {
        unlink(node, nb, layer);
        unlink(nb, node, layer);
      }
    }
  }

  static void sort_hits(std::vector<Hit>& hits) {
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.node < b.node;
    });
  }

  int greedy_closest(const double* query, int start, int layer) const {
    int current = start;
    double best = distance(query, nodes_[static_cast<std::size_t>(current)].vec.data());
    bool improved = true;
    while (improved) {
      improved = false;
      const auto& links = nodes_[static_cast<std::size_t>(current)].links;
      if (static_cast<std::size_t>(layer) >= links.size()) break;
      for (int nb : links[static_cast<std::size_t>(layer)]) {
        const double d = distance(query, nodes_[static_cast<std::size_t>(nb)].vec.data());
        if (d < best || (d == best && nb < current)) {
          best = d;
          current = nb;
          improved = true;
        }
      }
    }
    return current;
  }

  // Best-first beam of width ef within one layer; results ascending.
  std::vector<Hit> search_layer(const double* query, int entry, int ef, int layer) const {
    auto cmp_far = [](const Hit& a, const Hit& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.node < b.node;
    };
    auto cmp_near = [](const Hit& a, const Hit& b) {
      if (a.distance != b.distance) return a.distance > b.distance;
      return a.node > b.node;
    };
    std::priority_queue<Hit, std::vector<Hit>, decltype(cmp_near)> candidates(cmp_near);
    std::priority_queue<Hit, std::vector<Hit>, decltype(cmp_far)> results(cmp_far);
    std::vector<std::uint8_t> visited(nodes_.size(), 0);

    const double d0 = distance(query, nodes_[static_cast<std::size_t>(entry)].vec.data());
    candidates.push({entry, d0});
    results.push({entry, d0});
    visited[static_cast<std::size_t>(entry)] = 1;

    while (!candidates.empty()) {
      const Hit c = candidates.top();
      candidates.pop();
      if (c.distance > results.top().distance && static_cast<int>(results.size()) >= ef) break;
      const auto& links = nodes_[static_cast<std::size_t>(c.node)].links;
      if (static_cast<std::size_t>(layer) >= links.size()) continue;
      for (int nb : links[static_cast<std::size_t>(layer)]) {
        if (visited[static_cast<std::size_t>(nb)]) continue;
        visited[static_cast<std::size_t>(nb)] = 1;
        const double d = distance(query, nodes_[static_cast<std::size_t>(nb)].vec.data());
        if (static_cast<int>(results.size()) < ef || d < results.top().distance) {
          candidates.push({nb, d});
          results.push({nb, d});
          if (static_cast<int>(results.size()) > ef) results.pop();
        }
      }
    }
    std::vector<Hit> out;
    out.reserve(results.size());
    while (!results.empty()) {
      out.push_back(results.top());
      results.pop();
    }
    std::reverse(out.begin(), out.end());
    sort_hits(out);
    return out;
  }

  // The construction heuristic: keep a candidate only when it is closer to
  // the base than to every already-kept neighbor; backfill with the nearest
  // pruned candidates when slots remain.
  std::vector<Hit> select_neighbors(const double* base, std::vector<Hit> cands, int m) const {
    sort_hits(cands);
    std::vector<Hit> kept, pruned;
    for (const Hit& c : cands) {
      if (static_cast<int>(kept.size()) >= m) break;
      bool closer_to_kept = false;
      for (const Hit& s : kept) {
        const double d = distance(nodes_[static_cast<std::size_t>(c.node)].vec.data(),
                                  nodes_[static_cast<std::size_t>(s.node)].vec.data());
        if (d < c.distance) {
          closer_to_kept = true;
          break;
        }
      }
      if (closer_to_kept)
        pruned.push_back(c);
      else
        kept.push_back(c);
    }
    for (const Hit& c : pruned) {
      if (static_cast<int>(kept.size()) >= m) break;
      kept.push_back(c);
    }
    return kept;
  }

  int dim_ = 0;
  HnswParams params_;
  Rng level_rng_{0};
  std::vector<Node> nodes_;
  int entry_ = -1;
  int max_layer_ = 0;

  friend class TextIndex;
};

// ---------------------------------------------------------------------------
// Text-level index: exact-string dedup, id-sorted insertion, serialization
// ---------------------------------------------------------------------------

struct MinedNegative {
  std::string anchor_id;
  std::string negative_text;
  int rank_in_topk = 0;  // 1-based rank among surviving candidates
  bool used_fallback = false;
};

class TextIndex {
 public:
  struct TextHit {
    std::string id;  // canonical (smallest) id of the node
    std::string text;
    double distance = 0.0;
  };

  TextIndex() = default;

  // Deduplicates exact strings (one node, many ids), sorts nodes by canonical
  // id, embeds, and inserts in that fixed order.
  static TextIndex build(const std::vector<std::pair<std::string, std::string>>& id_texts,
                         const std::function<std::vector<double>(const std::string&)>& embed,
                         const HnswParams& params) {
    if (id_texts.empty()) throw ContractError("hnsw text index: no texts to index");
    std::map<std::string, std::vector<std::string>> by_text;
    for (const auto& [id, text] : id_texts) by_text[text].push_back(id);

    struct Entry {
      std::string canonical;
      std::string text;
      std::vector<std::string> ids;
    };
    std::vector<Entry> entries;
    entries.reserve(by_text.size());
    for (auto& [text, ids] : by_text) {
      std::sort(ids.begin(), ids.end());
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
      entries.push_back({ids.front(), text, ids});
    }
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.canonical < b.canonical; });

    TextIndex index;
    std::vector<double> first = embed(entries.front().text);
    index.graph_ = HnswIndex(static_cast<int>(first.size()), params);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      std::vector<double> vec = i == 0 ? first : embed(entries[i].text);
      index.graph_.insert(vec);
      index.texts_.push_back(entries[i].text);
      index.canonical_ids_.push_back(entries[i].canonical);
      index.all_ids_.push_back(entries[i].ids);
      index.node_of_text_.emplace(entries[i].text, static_cast<int>(i));
    }
    return index;
  }

  int size() const { return graph_.size(); }
  const HnswIndex& graph() const { return graph_; }
  const std::string& text_of(int node) const { return texts_[static_cast<std::size_t>(node)]; }
  const std::vector<std::string>& ids_of(int node) const {
    return all_ids_[static_cast<std::size_t>(node)];
  }
  const std::vector<std::string>& all_texts() const { return texts_; }
  int node_of_text(const std::string& text) const {
    auto it = node_of_text_.find(text);
    return it == node_of_text_.end() ? -1 : it->second;
  }
  const std::vector<double>& vector_of(int node) const { return graph_.vector_of(node); }

  std::vector<TextHit> search(const std::vector<double>& query, int k, int ef,
                              bool* truncated = nullptr) const {
    std::vector<TextHit> out;
    for (const HnswIndex::Hit& h : graph_.search(query, k, ef, truncated))
      out.push_back({canonical_ids_[static_cast<std::size_t>(h.node)],
                     texts_[static_cast<std::size_t>(h.node)], h.distance});
    return out;
  }

  std::vector<TextHit> exact_topk(const std::vector<double>& query, int k) const {
    std::vector<TextHit> out;
    for (const HnswIndex::Hit& h : graph_.exact_topk(query, k))
      out.push_back({canonical_ids_[static_cast<std::size_t>(h.node)],
                     texts_[static_cast<std::size_t>(h.node)], h.distance});
    return out;
  }

  void save(const std::string& path) const {
    nlohmann::json header{{"format", "coverclip-hnsw"},
                          {"format_version", 1},
                          {"count", size()},
                          {"dim", graph_.dim()},
                          {"M", graph_.params().M},
                          {"ef_construction", graph_.params().ef_construction},
                          {"ef_search", graph_.params().ef_search},
                          {"seed", graph_.params().seed},
                          {"entry_point", graph_.entry_point()},
                          {"max_layer", graph_.max_layer()}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write index " + path);
    out << header.dump() << "\n";
    auto write_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto write_str = [&](const std::string& s) {
      write_u32(static_cast<std::uint32_t>(s.size()));
      out.write(s.data(), static_cast<std::streamsize>(s.size()));
    };
    for (int n = 0; n < size(); ++n) {
      write_str(texts_[static_cast<std::size_t>(n)]);
      write_u32(static_cast<std::uint32_t>(all_ids_[static_cast<std::size_t>(n)].size()));
      for (const std::string& id : all_ids_[static_cast<std::size_t>(n)]) write_str(id);
      const auto& vec = graph_.vector_of(n);
      out.write(reinterpret_cast<const char*>(vec.data()),
                static_cast<std::streamsize>(vec.size() * sizeof(double)));
      const auto& layers = graph_.layers_of(n);
      write_u32(static_cast<std::uint32_t>(layers.size()));
      for (const auto& layer : layers) {
        write_u32(static_cast<std::uint32_t>(layer.size()));
        for (int nb : layer) write_u32(static_cast<std::uint32_t>(nb));
      }
    }
    if (!out) throw IoError("short write to index " + path);
  }

  static TextIndex load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("index not found: " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw IoError("index " + path + " is empty");
    nlohmann::json header = nlohmann::json::parse(header_line);
    if (header.value("format", "") != "coverclip-hnsw")
      throw IoError("index " + path + " has an unknown format tag");

    TextIndex index;
    HnswParams params;
    params.M = header.at("M").get<int>();
    params.ef_construction = header.at("ef_construction").get<int>();
    params.ef_search = header.at("ef_search").get<int>();
    params.seed = header.at("seed").get<std::uint64_t>();
    const int dim = header.at("dim").get<int>();
    const int count = header.at("count").get<int>();
    index.graph_ = HnswIndex(dim, params);
    index.graph_.entry_ = header.at("entry_point").get<int>();
    index.graph_.max_layer_ = header.at("max_layer").get<int>();

    auto read_u32 = [&]() {
      std::uint32_t v = 0;
      in.read(reinterpret_cast<char*>(&v), 4);
      return v;
    };
    auto read_str = [&]() {
      std::string s(read_u32(), '\0');
      in.read(s.data(), static_cast<std::streamsize>(s.size()));
      return s;
    };
    for (int n = 0; n < count; ++n) {
      HnswIndex::Node node;
      index.texts_.push_back(read_str());
      const std::uint32_t id_count = read_u32();
      std::vector<std::string> ids;
      for (std::uint32_t i = 0; i < id_count; ++i) ids.push_back(read_str());
      index.canonical_ids_.push_back(ids.front());
      index.all_ids_.push_back(ids);
      node.vec.resize(static_cast<std::size_t>(dim));
      in.read(reinterpret_cast<char*>(node.vec.data()),
              static_cast<std::streamsize>(node.vec.size() * sizeof(double)));
      node.links.resize(read_u32());
      for (auto& layer : node.links) {
        layer.resize(read_u32());
        for (int& nb : layer) nb = static_cast<int>(read_u32());
      }
      index.graph_.nodes_.push_back(std::move(node));
      index.node_of_text_.emplace(index.texts_.back(), n);
    }
    if (!in) throw IoError("index " + path + " is truncated");
    return index;
  }

 private:
  HnswIndex graph_;
  std::vector<std::string> texts_;
  std::vector<std::string> canonical_ids_;
  std::vector<std::vector<std::string>> all_ids_;
  std::unordered_map<std::string, int> node_of_text_;
};

// Top-K lookup, exact-string filter, uniform pick. Falls back to a uniform
// draw over the remaining pool when no candidate survives the filter.
inline MinedNegative mine_negative(const TextIndex& index, const std::string& anchor_id,
                                   const std::string& anchor_text,
                                   const std::vector<double>& anchor_vec, int k, Rng& rng) {
  if (index.size() == 0) throw ContractError("mine_negative: empty index");
  const int ef = std::max(index.graph().params().ef_search, k + 16);
  std::vector<TextIndex::TextHit> hits = index.search(anchor_vec, k + 1, ef);

  std::vector<TextIndex::TextHit> surviving;
  for (const auto& h : hits) {
    if (h.text == anchor_text) continue;
    surviving.push_back(h);
    if (static_cast<int>(surviving.size()) == k) break;
  }
  MinedNegative out;
  out.anchor_id = anchor_id;
  if (!surviving.empty()) {
    const std::size_t pick = rng.uniform_int(surviving.size());
    out.negative_text = surviving[pick].text;
    out.rank_in_topk = static_cast<int>(pick) + 1;
    return out;
  }
  // every candidate was the anchor string: uniform fallback over the pool
  std::vector<int> others;
  for (int n = 0; n < index.size(); ++n)
    if (index.text_of(n) != anchor_text) others.push_back(n);
  if (others.empty())
    throw ContractError("mine_negative: the index holds no text distinct from the anchor");
  const int node = others[rng.uniform_int(others.size())];
  out.negative_text = index.text_of(node);
  out.rank_in_topk = 1;
  out.used_fallback = true;
  return out;
}

// Bridges the index into the batching layer's sampler interface.
class HnswNegativeSampler final : public NegativeSampler {
 public:
  HnswNegativeSampler(const TextIndex* index, int k) : index_(index), k_(k) {}

  std::string sample_near(const std::string& anchor_text, Rng& rng) override {
    const int node = index_->node_of_text(anchor_text);
    std::vector<double> vec;
    if (node >= 0) {
      vec = index_->vector_of(node);
    } else {
      throw ContractError("hnsw sampler: anchor text missing from the index");
    }
    MinedNegative mined = mine_negative(*index_, "", anchor_text, vec, k_, rng);
    if (mined.used_fallback) ++fallback_count_;
    ++mined_count_;
    rank_histogram_[static_cast<std::size_t>(mined.rank_in_topk - 1)]++;
    return mined.negative_text;
  }

  std::string sample_any(const std::string& exclude, Rng& rng) override {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int node = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(index_->size())));
      if (index_->text_of(node) != exclude) return index_->text_of(node);
    }
    for (int n = 0; n < index_->size(); ++n)
      if (index_->text_of(n) != exclude) return index_->text_of(n);
    throw ContractError("hnsw sampler: no text distinct from the anchor");
  }

  bool empty() const override { return index_ == nullptr || index_->size() == 0; }

  std::uint64_t fallback_count() const { return fallback_count_; }
  std::uint64_t mined_count() const { return mined_count_; }
  const std::vector<std::uint64_t>& rank_histogram() const { return rank_histogram_; }

 private:
  const TextIndex* index_;
  int k_;
  std::uint64_t fallback_count_ = 0;
  std::uint64_t mined_count_ = 0;
  std::vector<std::uint64_t> rank_histogram_ = std::vector<std::uint64_t>(64, 0);
};

}  // namespace coverclip
