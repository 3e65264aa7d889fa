#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "coverclip/corpus.hpp"
#include "coverclip/data.hpp"
#include "support/tmpdir.hpp"

using namespace coverclip;
using cctest::TmpDir;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("palette separation across topics") {
  CorpusConfig cfg;
  cfg.n_topics = 32;
  cfg.seed = 5;
  auto topics = make_topics(cfg);
  for (std::size_t a = 0; a < topics.size(); ++a)
    for (std::size_t b = a + 1; b < topics.size(); ++b) {
      double max_channel = 0.0;
      for (int c = 0; c < 3; ++c)
        max_channel = std::max(max_channel,
                               std::abs(topics[a].palette[0][static_cast<std::size_t>(c)] -
                                        topics[b].palette[0][static_cast<std::size_t>(c)]));
      REQUIRE(max_channel >= 0.15);
    }
}

TEST_CASE("corpus tokens are globally unique and sliced per topic") {
  CorpusConfig cfg;
  cfg.n_topics = 32;
  auto tokens = corpus_tokens(cfg);
  std::set<std::string> uniq(tokens.begin(), tokens.end());
  REQUIRE(uniq.size() == tokens.size());

  auto topics = make_topics(cfg);
  std::set<std::string> seen;
  for (const auto& t : topics) {
    REQUIRE(t.vocab_slice.size() == static_cast<std::size_t>(cfg.tokens_per_topic));
    for (const auto& tok : t.vocab_slice) REQUIRE(seen.insert(tok).second);
  }
}

TEST_CASE("glyph bijection and strip decoding") {
  SECTION("patterns are distinct over the full token range") {
    std::set<std::array<bool, 25>> seen;
    for (int i = 0; i < 32 * 40; ++i) REQUIRE(seen.insert(glyph_pattern(i)).second);
  }

  SECTION("render then decode recovers the tokens") {
    CorpusConfig cfg;
    auto tokens = corpus_tokens(cfg);
    Image img = Image::filled(64, 64, 120, 60, 60);
    render_strip(img, {5, 0, 311});
    auto text = decode_strip(img, tokens);
    REQUIRE(text.has_value());
    REQUIRE(*text == tokens[5] + " " + tokens[0] + " " + tokens[311]);
  }

  SECTION("strip stays within a quarter of the image height") {
    const StripGeometry g = StripGeometry::for_resolution(64);
    REQUIRE(g.band_h <= 64 / 4);
    REQUIRE(g.band_top + g.band_h <= 64);
    REQUIRE(g.max_glyphs >= 4);
  }
}

TEST_CASE("generated corpus honors the ocr fraction and determinism") {
  TmpDir tmp("gen");
  CorpusConfig cfg;
  cfg.n_samples = 1000;
  cfg.n_topics = 8;
  cfg.ocr_fraction = 0.33;
  cfg.seed = 7;

  const std::string manifest = generate_corpus(cfg, tmp.file("run1"));
  int presence = 0, total = 0;
  {
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      ++total;
      if (j.contains("ocr_text") && !j.at("ocr_text").get<std::string>().empty()) ++presence;
    }
  }
  REQUIRE(total == 1000);
  REQUIRE(presence >= 300);
  REQUIRE(presence <= 360);

  SECTION("ocr_fraction zero yields no presence samples") {
    CorpusConfig none = cfg;
    none.n_samples = 200;
    none.ocr_fraction = 0.0;
    const std::string m2 = generate_corpus(none, tmp.file("none"));
    std::ifstream in(m2);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) REQUIRE_FALSE(nlohmann::json::parse(line).contains("ocr_text"));
  }

  SECTION("same seed twice gives byte-identical output") {
    CorpusConfig small = cfg;
    small.n_samples = 60;
    const std::string m1 = generate_corpus(small, tmp.file("rep1"));
    const std::string m2 = generate_corpus(small, tmp.file("rep2"));
    REQUIRE(slurp(m1) == slurp(m2));
    REQUIRE(slurp(tmp.file("rep1") + "/vocab.txt") == slurp(tmp.file("rep2") + "/vocab.txt"));
    REQUIRE(slurp(tmp.file("rep1") + "/images/s000000.png") ==
            slurp(tmp.file("rep2") + "/images/s000000.png"));
  }

  SECTION("invalid ocr fraction is rejected") {
    CorpusConfig bad = cfg;
    bad.ocr_fraction = 1.2;
    REQUIRE_THROWS_AS(generate_corpus(bad, tmp.file("bad")), ConfigError);
  }
}

TEST_CASE("glyph decoding inverts every generated presence sample") {
  TmpDir tmp("inv");
  CorpusConfig cfg;
  cfg.n_samples = 300;
  cfg.n_topics = 8;
  cfg.ocr_fraction = 0.5;
  cfg.seed = 13;
  const std::string manifest = generate_corpus(cfg, tmp.str());
  const auto tokens = corpus_tokens(cfg);

  auto samples = load_manifest(manifest, cfg.resolution, Split::train);
  int checked = 0;
  for (const CoverSample& s : samples) {
    if (!s.presence) continue;
    auto decoded = decode_strip(s.image, tokens);
    REQUIRE(decoded.has_value());
    REQUIRE(*decoded == *s.ocr_text);
    ++checked;
  }
  REQUIRE(checked > 100);
}

TEST_CASE("titles come from the sample topic's vocabulary slice") {
  TmpDir tmp("titles");
  CorpusConfig cfg;
  cfg.n_samples = 200;
  cfg.n_topics = 8;
  cfg.seed = 3;
  const std::string manifest = generate_corpus(cfg, tmp.str());
  auto topics = make_topics(cfg);
  std::ifstream in(manifest);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    const int topic = j.at("topic").get<int>();
    std::set<std::string> slice(topics[static_cast<std::size_t>(topic)].vocab_slice.begin(),
                                topics[static_cast<std::size_t>(topic)].vocab_slice.end());
    const auto words = split_whitespace(j.at("title").get<std::string>());
    REQUIRE(words.size() >= 2);
    REQUIRE(words.size() <= 6);
    for (const auto& w : words) REQUIRE(slice.count(w) == 1);
  }
}

TEST_CASE("linear probe on mean color separates topics") {
  TmpDir tmp("probe");
  CorpusConfig cfg;
  cfg.n_samples = 1000;
  cfg.n_topics = 8;
  cfg.ocr_fraction = 0.33;
  cfg.seed = 21;
  const std::string manifest = generate_corpus(cfg, tmp.str());

  std::vector<std::array<double, 3>> features;
  std::vector<int> labels;
  {
    auto samples = load_manifest(manifest, cfg.resolution, Split::train);
    std::ifstream in(manifest);
    std::string line;
    std::size_t idx = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      const Image& img = samples[idx++].image;
      std::array<double, 3> mean{};
      for (std::size_t p = 0; p < img.rgb.size(); p += 3)
        for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(c)] += img.rgb[p + static_cast<std::size_t>(c)];
      for (int c = 0; c < 3; ++c)
        mean[static_cast<std::size_t>(c)] /= 255.0 * (img.rgb.size() / 3.0);
      features.push_back(mean);
      labels.push_back(j.at("topic").get<int>());
    }
  }
  const int n = static_cast<int>(features.size());
  const int k = cfg.n_topics;

  // multinomial logistic regression on (r, g, b, 1), plain gradient descent
  std::vector<double> w(static_cast<std::size_t>(k) * 4, 0.0);
  for (int step = 0; step < 3000; ++step) {
    std::vector<double> grad(w.size(), 0.0);
    for (int i = 0; i < n; ++i) {
      const double x[4] = {features[static_cast<std::size_t>(i)][0],
                           features[static_cast<std::size_t>(i)][1],
                           features[static_cast<std::size_t>(i)][2], 1.0};
      std::vector<double> logit(static_cast<std::size_t>(k));
      double mx = -1e30;
      for (int c = 0; c < k; ++c) {
        double z = 0;
        for (int f = 0; f < 4; ++f) z += w[static_cast<std::size_t>(c * 4 + f)] * x[f];
        logit[static_cast<std::size_t>(c)] = z;
        mx = std::max(mx, z);
      }
      double denom = 0;
      for (int c = 0; c < k; ++c) denom += std::exp(logit[static_cast<std::size_t>(c)] - mx);
      for (int c = 0; c < k; ++c) {
        const double p = std::exp(logit[static_cast<std::size_t>(c)] - mx) / denom;
        const double err = p - (c == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
        for (int f = 0; f < 4; ++f) grad[static_cast<std::size_t>(c * 4 + f)] += err * x[f] / n;
      }
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 2.0 * grad[j];
  }
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    const double x[4] = {features[static_cast<std::size_t>(i)][0],
                         features[static_cast<std::size_t>(i)][1],
                         features[static_cast<std::size_t>(i)][2], 1.0};
    int best = 0;
    double bestz = -1e30;
    for (int c = 0; c < k; ++c) {
      double z = 0;
      for (int f = 0; f < 4; ++f) z += w[static_cast<std::size_t>(c * 4 + f)] * x[f];
      if (z > bestz) {
        bestz = z;
        best = c;
      }
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  const double accuracy = static_cast<double>(correct) / n;
  INFO("probe accuracy " << accuracy);
  REQUIRE(accuracy > 0.9);
}

TEST_CASE("evaluation set construction") {
  TmpDir tmp("eval");
  CorpusConfig cfg;
  cfg.n_samples = 3000;
  cfg.n_topics = 16;
  cfg.ocr_fraction = 0.33;
  cfg.seed = 17;
  const std::string manifest = generate_corpus(cfg, tmp.str());
  EvalGenStats stats;
  const std::string eval_path = generate_eval_set(manifest, 200, 99, &stats);
  REQUIRE(stats.queries_emitted == 200);

  auto topics = make_topics(cfg);
  std::map<std::string, std::vector<nlohmann::json>> by_query;
  std::map<int, int> grade_counts;
  {
    std::ifstream in(eval_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      by_query[j.at("query").get<std::string>()].push_back(j);
      grade_counts[j.at("relevance").get<int>()]++;
    }
  }
  REQUIRE(by_query.size() == 200);

  // corpus topic lookup by id for the construction-rule check
  std::map<std::string, int> topic_of;
  std::map<std::string, std::string> title_of;
  {
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      topic_of[j.at("id").get<std::string>()] = j.at("topic").get<int>();
      title_of[j.at("id").get<std::string>()] = j.at("title").get<std::string>();
    }
  }
  auto topic_of_query = [&](const std::string& q) {
    const std::string first = split_whitespace(q)[0];
    for (const auto& t : topics)
      for (const auto& tok : t.vocab_slice)
        if (tok == first) return t.topic_id;
    return -1;
  };

  int total = 0;
  for (const auto& [query, lines] : by_query) {
    REQUIRE(lines.size() >= 5);
    REQUIRE(lines.size() <= 29);
    const int qtopic = topic_of_query(query);
    std::set<std::string> qset;
    for (const auto& w : split_whitespace(query)) qset.insert(w);
    for (const auto& j : lines) {
      ++total;
      const std::string id = j.at("id").get<std::string>();
      const int grade = j.at("relevance").get<int>();
      std::set<std::string> tset;
      for (const auto& w : split_whitespace(title_of[id])) tset.insert(w);
      int overlap = 0;
      for (const auto& w : tset)
        if (qset.count(w)) ++overlap;
      if (topic_of[id] != qtopic) {
        REQUIRE(grade == 0);
      } else if (grade == 2) {
        REQUIRE(overlap >= 2);
      } else if (grade == 1) {
        REQUIRE(overlap == 1);
      }
    }
  }

  const double f2 = static_cast<double>(grade_counts[2]) / total;
  const double f1 = static_cast<double>(grade_counts[1]) / total;
  const double f0 = static_cast<double>(grade_counts[0]) / total;
  INFO("grade histogram " << f2 << " / " << f1 << " / " << f0);
  REQUIRE(f2 == Catch::Approx(0.30).margin(0.08));
  REQUIRE(f1 == Catch::Approx(0.31).margin(0.08));
  REQUIRE(f0 == Catch::Approx(0.39).margin(0.08));

  SECTION("eval manifest loads as eval split") {
    auto samples = load_manifest(eval_path, cfg.resolution, Split::eval);
    for (const auto& s : samples) {
      REQUIRE(s.query.has_value());
      REQUIRE(s.relevance.has_value());
    }
  }
}
