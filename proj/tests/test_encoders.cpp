#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "coverclip/checkpoint.hpp"
#include "coverclip/encoders.hpp"
#include "coverclip/model.hpp"
#include "support/tmpdir.hpp"

using namespace coverclip;
using cctest::TmpDir;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.d_proj = 32;
  cfg.image_layers = 2;
  cfg.text_layers = 2;
  cfg.heads = 4;
  cfg.patch_size = 8;
  cfg.image_resolution = 64;
  cfg.max_text_len = 12;
  cfg.vocab_size = 32;
  return cfg;
}

Vocabulary tiny_vocab() {
  std::vector<std::string> tokens;
  for (int i = 0; i < 29; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocabulary(tokens);
}

Tensor random_images(int b, int res, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({b, res, res, 3});
  for (double& v : t.mutable_data()) v = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("vision tower shapes and unit norms") {
  ModelConfig cfg = tiny_config();
  Rng rng(1);
  VisionTower tower(cfg, rng);
  Tensor images = random_images(2, 64, 7);
  VisionOutput out = tower.forward(images);

  REQUIRE(out.tokens.shape() == std::vector<int>{2, 65, 64});
  REQUIRE(out.embedding.shape() == std::vector<int>{2, 32});
  for (int i = 0; i < 2; ++i) {
    double norm = 0;
    for (int j = 0; j < 32; ++j) {
      const double v = out.embedding.data()[static_cast<std::size_t>(i) * 32 + j];
      norm += v * v;
    }
    REQUIRE(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-9));
  }

  SECTION("wrong resolution raises a shape error") {
    REQUIRE_THROWS_AS(tower.forward(random_images(1, 32, 3)), ShapeError);
  }

  SECTION("identical images give bit-identical embeddings") {
    Tensor one = random_images(1, 64, 9);
    Tensor two = Tensor::zeros({2, 64, 64, 3});
    for (int i = 0; i < 2; ++i)
      std::copy(one.data().begin(), one.data().end(),
                two.mutable_data().begin() + static_cast<std::ptrdiff_t>(i) * one.size());
    VisionOutput o = tower.forward(two);
    for (int j = 0; j < 32; ++j)
      REQUIRE(o.embedding.data()[j] == o.embedding.data()[32 + j]);
  }
}

TEST_CASE("text tower masking and degenerate inputs") {
  ModelConfig cfg = tiny_config();
  Rng rng(2);
  TextTower tower(cfg, rng);
  Vocabulary vocab = tiny_vocab();

  SECTION("batch shape and unit norms") {
    std::vector<TokenSequence> seqs{tokenize("w1 w2", vocab, 12), tokenize("w3", vocab, 12),
                                    tokenize("", vocab, 12)};
    Tensor emb = tower.forward_embedding(seqs);
    REQUIRE(emb.shape() == std::vector<int>{3, 32});
    for (int i = 0; i < 3; ++i) {
      double norm = 0;
      for (int j = 0; j < 32; ++j) {
        const double v = emb.data()[static_cast<std::size_t>(i) * 32 + j];
        norm += v * v;
        REQUIRE(std::isfinite(v));
      }
      REQUIRE(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-9));
    }
  }

  SECTION("pad content beyond the mask cannot change the embedding") {
    TokenSequence a = tokenize("w1 w2 w3", vocab, 12);
    TokenSequence b = a;
    // scribble over padded positions with arbitrary valid ids
    for (std::size_t i = static_cast<std::size_t>(b.true_len); i < b.ids.size(); ++i)
      b.ids[i] = 5;
    Tensor ea = tower.forward_embedding({a});
    Tensor eb = tower.forward_embedding({b});
    for (int j = 0; j < 32; ++j)
      REQUIRE(ea.data()[j] == Catch::Approx(eb.data()[j]).margin(1e-9));
  }

  SECTION("out-of-range token id raises an index error") {
    TokenSequence bad = tokenize("w1", vocab, 12);
    bad.ids[1] = cfg.vocab_size + 3;
    REQUIRE_THROWS_AS(tower.forward_embedding({bad}), IndexError);
  }
}

TEST_CASE("similarity matrix") {
  SECTION("orthonormal pairs at unit temperature give the identity") {
    Tensor img = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor txt = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor scale = Tensor::scalar(0.0);  // 1/tau = 1
    Tensor sim = similarity_matrix(img, txt, scale);
    REQUIRE(sim.data() == std::vector<double>{1, 0, 0, 1});
  }

  SECTION("matched rows at tau 0.5 give diagonal 2") {
    Tensor img = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor scale = Tensor::scalar(std::log(2.0));  // 1/tau = 2
    Tensor sim = similarity_matrix(img, img, scale);
    REQUIRE(sim.data()[0] == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(sim.data()[3] == Catch::Approx(2.0).margin(1e-12));
  }

  SECTION("adversarial temperature is clamped to keep logits bounded") {
    Tensor img = Tensor::from_data({1, 2}, {1, 0});
    Tensor scale = Tensor::scalar(50.0);  // exp(50) unclamped would overflow
    Tensor sim = similarity_matrix(img, img, scale);
    REQUIRE(std::abs(sim.data()[0]) <= 100.0);
  }

  SECTION("dimension mismatch raises") {
    REQUIRE_THROWS_AS(
        similarity_matrix(Tensor::zeros({2, 3}), Tensor::zeros({2, 4}), Tensor::scalar(0.0)),
        ShapeError);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  TmpDir tmp("ckpt");
  ModelConfig cfg = tiny_config();
  CoverClipModel model(cfg, 42, true, true);
  Vocabulary vocab = tiny_vocab();

  Tensor images = random_images(2, 64, 11);
  VisionOutput before = model.encode_image(images);
  std::vector<TokenSequence> seqs{tokenize("w1 w2", vocab, 12), tokenize("w7", vocab, 12)};
  Tensor txt_before = model.encode_text(seqs);

  const std::string path = tmp.file("model.ckpt");
  save_model_checkpoint(path, model, vocab, 123, {{"note", "test"}});
  LoadedModel loaded = load_model_checkpoint(path);

  REQUIRE(loaded.step == 123);
  REQUIRE(loaded.vocab.size() == vocab.size());
  REQUIRE(loaded.model.presence_head.has_value());
  REQUIRE(loaded.model.semantic_head.has_value());

  VisionOutput after = loaded.model.encode_image(images);
  REQUIRE(after.embedding.data() == before.embedding.data());
  REQUIRE(after.tokens.data() == before.tokens.data());
  Tensor txt_after = loaded.model.encode_text(seqs);
  REQUIRE(txt_after.data() == txt_before.data());

  SECTION("saving twice produces identical bytes") {
    const std::string p2 = tmp.file("model2.ckpt");
    save_model_checkpoint(p2, model, vocab, 123, {{"note", "test"}});
    std::ifstream f1(path, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);
  }

  SECTION("stripping heads leaves encoder outputs bit-identical") {
    const std::string stripped = tmp.file("stripped.ckpt");
    strip_heads_checkpoint(path, stripped);
    LoadedModel lean = load_model_checkpoint(stripped);
    REQUIRE_FALSE(lean.model.presence_head.has_value());
    REQUIRE_FALSE(lean.model.semantic_head.has_value());
    VisionOutput v = lean.model.encode_image(images);
    REQUIRE(v.embedding.data() == before.embedding.data());
    REQUIRE(lean.model.encode_text(seqs).data() == txt_before.data());
  }

  SECTION("loading with include_heads=false skips head sections") {
    LoadedModel lean = load_model_checkpoint(path, /*include_heads=*/false);
    REQUIRE_FALSE(lean.model.presence_head.has_value());
    VisionOutput v = lean.model.encode_image(images);
    REQUIRE(v.embedding.data() == before.embedding.data());
  }
}

TEST_CASE("head presence does not perturb encoder initialization") {
  ModelConfig cfg = tiny_config();
  CoverClipModel with(cfg, 7, true, true);
  CoverClipModel without(cfg, 7, false, false);
  Tensor images = random_images(2, 64, 5);
  VisionOutput a = with.encode_image(images);
  VisionOutput b = without.encode_image(images);
  REQUIRE(a.embedding.data() == b.embedding.data());
}

TEST_CASE("invalid model configs are rejected") {
  ModelConfig cfg = tiny_config();
  cfg.heads = 5;  // 64 % 5 != 0
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  ModelConfig cfg2 = tiny_config();
  cfg2.patch_size = 7;
  REQUIRE_THROWS_AS(cfg2.validate(), ConfigError);
}
