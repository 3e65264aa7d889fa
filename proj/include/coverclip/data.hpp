#pragma once

// Dataset records, JSONL manifest loading, and deterministic batching with
// per-item matching-task sample assignment.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coverclip/errors.hpp"
#include "coverclip/image.hpp"
#include "coverclip/rng.hpp"
#include "coverclip/tensor.hpp"
#include "coverclip/tokenizer.hpp"

namespace coverclip {

struct CoverSample {
  std::string id;
  Image image;
  std::string title;
  std::optional<std::string> ocr_text;  // normalized: never present-but-empty
  bool presence = false;                // derived: ocr_text present and non-empty
  std::optional<int> relevance;         // 0/1/2, evaluation manifests only
  std::optional<std::string> query;     // evaluation manifests only
};

enum class Split { train, eval };

// One JSON object per line: id, image_path, title, ocr_text?, query?, relevance?.
inline std::vector<CoverSample> load_manifest(const std::string& path, int resolution,
                                              Split split) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest not found: " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();

  std::vector<CoverSample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                    " is malformed: " + e.what());
    }
    CoverSample s;
    try {
      s.id = j.at("id").get<std::string>();
      s.title = j.at("title").get<std::string>();
      const std::string image_path = j.at("image_path").get<std::string>();
      const std::filesystem::path full = base / image_path;
      if (!std::filesystem::exists(full))
        throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                      ": missing image for id '" + s.id + "' at " + full.string());
      s.image = resize_bilinear(read_png(full.string()), resolution, resolution);
      if (j.contains("ocr_text")) {
        std::string ocr = j.at("ocr_text").get<std::string>();
        if (!ocr.empty()) s.ocr_text = std::move(ocr);
      }
      s.presence = s.ocr_text.has_value();
      if (j.contains("query")) s.query = j.at("query").get<std::string>();
      if (j.contains("relevance")) s.relevance = j.at("relevance").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                    " is malformed: " + e.what());
    }
    if (s.relevance.has_value() != s.query.has_value())
      throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                    ": relevance and query must appear together");
    if (split == Split::eval && !s.query.has_value())
      throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                    ": evaluation record lacks a query");
    if (s.relevance && (*s.relevance < 0 || *s.relevance > 2))
      throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                    ": relevance grade must be 0, 1, or 2");
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Matching-task sample assignment
// ---------------------------------------------------------------------------

enum class ItmSource { positive, mined_negative, random_negative };

struct ItmSample {
  TokenSequence sample_text;
  std::string text;
  bool match_label = false;
  ItmSource source = ItmSource::random_negative;
};

// Supplies negative text samples for the matching task. Implementations must
// never return a text equal to the anchor.
struct NegativeSampler {
  virtual ~NegativeSampler() = default;
  // A text semantically close to (but not equal to) the anchor text.
  virtual std::string sample_near(const std::string& anchor_text, Rng& rng) = 0;
  // Uniform over the text pool, avoiding `exclude` when more than one text exists.
  virtual std::string sample_any(const std::string& exclude, Rng& rng) = 0;
  virtual bool empty() const = 0;
};

// Uniform sampler over a fixed pool; also the fallback policy, and enough for
// configurations that never train the matching head.
class UniformNegativeSampler final : public NegativeSampler {
 public:
  explicit UniformNegativeSampler(std::vector<std::string> pool) : pool_(std::move(pool)) {}

  std::string sample_near(const std::string& anchor_text, Rng& rng) override {
    return sample_any(anchor_text, rng);
  }

  std::string sample_any(const std::string& exclude, Rng& rng) override {
    if (pool_.empty()) throw ContractError("negative sampler: empty text pool");
    for (int attempt = 0; attempt < 64; ++attempt) {
      const std::string& pick = pool_[rng.uniform_int(pool_.size())];
      if (pick != exclude) return pick;
    }
    // pool may contain only the excluded text
    for (const std::string& p : pool_)
      if (p != exclude) return p;
    return pool_.front();
  }

  bool empty() const override { return pool_.empty(); }

 private:
  std::vector<std::string> pool_;
};

struct Batch {
  Tensor images;  // [b,H,W,3], values in [0,1]
  std::vector<TokenSequence> title_tokens;
  std::vector<std::uint8_t> presence_labels;
  std::vector<std::optional<ItmSample>> itm;
  std::vector<std::size_t> sample_indices;  // into the source dataset

  int size() const { return static_cast<int>(sample_indices.size()); }
};

struct BatchingConfig {
  int batch_size = 64;
  double itm_positive_fraction = 0.7;
  int max_text_len = 12;
};

// Deterministic per-epoch batch stream. The shuffle and the matching-task
// draws run on independent streams derived from (seed, epoch), so resumed
// runs and head-disabled runs see identical batches.
class BatchStream {
 public:
  BatchStream(const std::vector<CoverSample>& samples, const BatchingConfig& config,
              std::uint64_t seed, std::uint64_t epoch, const Vocabulary& vocab,
              const Segmenter& segmenter, NegativeSampler* sampler)
      : samples_(samples),
        config_(config),
        vocab_(vocab),
        segmenter_(segmenter),
        sampler_(sampler),
        shuffle_rng_(derive_seed(seed, "batch-shuffle", epoch)),
        itm_rng_(derive_seed(seed, "batch-itm", epoch)) {
    if (config.batch_size < 2)
      throw ConfigError("batch_size must be at least 2 for the contrastive loss, got " +
                        std::to_string(config.batch_size));
    order_.resize(samples.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    shuffle_rng_.shuffle(order_);
  }

  const std::vector<std::size_t>& plan() const { return order_; }

  std::optional<Batch> next() {
    const std::size_t remaining = order_.size() - cursor_;
    if (remaining < 2) return std::nullopt;  // a 1-sample tail cannot form a contrastive batch
    const std::size_t b = std::min<std::size_t>(remaining, config_.batch_size);

    Batch batch;
    batch.sample_indices.assign(order_.begin() + cursor_, order_.begin() + cursor_ + b);
    cursor_ += b;

    const int res_h = samples_[batch.sample_indices[0]].image.height;
    const int res_w = samples_[batch.sample_indices[0]].image.width;
    batch.images = Tensor::zeros({static_cast<int>(b), res_h, res_w, 3});
    double* px = batch.images.mutable_data().data();
    for (std::size_t i = 0; i < b; ++i) {
      const CoverSample& s = samples_[batch.sample_indices[i]];
      if (s.image.height != res_h || s.image.width != res_w)
        throw ShapeError("batch images must share one resolution");
      for (std::size_t p = 0; p < s.image.rgb.size(); ++p)
        px[i * s.image.rgb.size() + p] = s.image.rgb[p] / 255.0;

      batch.title_tokens.push_back(
          tokenize(segment_title(s.title, segmenter_), vocab_, config_.max_text_len));
      batch.presence_labels.push_back(s.presence ? 1 : 0);
      batch.itm.push_back(assign_itm(s));
    }
    return batch;
  }

 private:
  std::optional<ItmSample> assign_itm(const CoverSample& s) {
    if (sampler_ == nullptr || sampler_->empty()) return std::nullopt;
    ItmSample itm;
    if (s.presence && itm_rng_.bernoulli(config_.itm_positive_fraction)) {
      itm.text = *s.ocr_text;
      itm.match_label = true;
      itm.source = ItmSource::positive;
    } else if (s.presence) {
      itm.text = sampler_->sample_near(*s.ocr_text, itm_rng_);
      itm.match_label = false;
      itm.source = ItmSource::mined_negative;
    } else {
      // covers without cover text contribute negatives only
      itm.text = sampler_->sample_any("", itm_rng_);
      itm.match_label = false;
      itm.source = ItmSource::random_negative;
    }
    itm.sample_text = tokenize(itm.text, vocab_, config_.max_text_len);
    return itm;
  }

  const std::vector<CoverSample>& samples_;
  BatchingConfig config_;
  const Vocabulary& vocab_;
  const Segmenter& segmenter_;
  NegativeSampler* sampler_;
  Rng shuffle_rng_;
  Rng itm_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

inline std::vector<std::string> collect_ocr_texts(const std::vector<CoverSample>& samples) {
  std::vector<std::string> out;
  for (const CoverSample& s : samples)
    if (s.ocr_text) out.push_back(*s.ocr_text);
  return out;
}

}  // namespace coverclip
