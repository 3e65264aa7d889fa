#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "coverclip/heads.hpp"
#include "coverclip/losses.hpp"
#include "coverclip/model.hpp"
#include "coverclip/optimizer.hpp"

using namespace coverclip;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.d_proj = 8;
  cfg.image_layers = 1;
  cfg.text_layers = 1;
  cfg.heads = 2;
  cfg.patch_size = 8;
  cfg.image_resolution = 16;
  cfg.max_text_len = 8;
  cfg.vocab_size = 16;
  return cfg;
}

Tensor random_images(int b, int res, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({b, res, res, 3});
  for (double& v : t.mutable_data()) v = rng.uniform();
  return t;
}

Vocabulary tiny_vocab() {
  std::vector<std::string> tokens;
  for (int i = 0; i < 13; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocabulary(tokens);
}

}  // namespace

TEST_CASE("presence head wiring") {
  ModelConfig cfg = tiny_config();
  CoverClipModel model(cfg, 3, true, false);
  Tensor images = random_images(3, cfg.image_resolution, 5);

  SECTION("finite logits and gradient flow into the vision tower from L_IC alone") {
    Graph g;
    {
      Graph::Scope scope(g);
      VisionOutput vis = model.encode_image(images);
      Tensor logits = model.presence_head->forward(vis.tokens);
      REQUIRE(logits.shape() == std::vector<int>{3});
      for (double v : logits.data()) REQUIRE(std::isfinite(v));
      std::vector<std::uint8_t> labels{1, 0, 1};
      Tensor loss = ic_loss(logits, labels);
      g.backward(loss);
    }
    const double frac = nonzero_grad_fraction([&] {
      std::vector<Tensor> ps;
      for (const NamedTensor& p : model.encoder_parameters())
        if (p.name.rfind("vision", 0) == 0) ps.push_back(p.tensor);
      return ps;
    }());
    REQUIRE(frac > 0.5);
  }

  SECTION("duplicated item gives identical logits") {
    Tensor pair = Tensor::zeros({2, cfg.image_resolution, cfg.image_resolution, 3});
    Tensor one = random_images(1, cfg.image_resolution, 8);
    for (int i = 0; i < 2; ++i)
      std::copy(one.data().begin(), one.data().end(),
                pair.mutable_data().begin() + static_cast<std::ptrdiff_t>(i) * one.size());
    VisionOutput vis = model.encode_image(pair);
    Tensor logits = model.presence_head->forward(vis.tokens);
    REQUIRE(logits.data()[0] == logits.data()[1]);
  }

  SECTION("wrong token width raises a shape error") {
    REQUIRE_THROWS_AS(model.presence_head->forward(Tensor::zeros({2, 5, cfg.d_model + 1})),
                      ShapeError);
  }
}

TEST_CASE("ic loss values") {
  std::vector<std::uint8_t> t{1}, f{0};
  REQUIRE(ic_loss(Tensor::from_data({1}, {0.0}), t).value() ==
          Catch::Approx(std::log(2.0)).margin(1e-12));
  REQUIRE(ic_loss(Tensor::from_data({1}, {0.0}), f).value() ==
          Catch::Approx(std::log(2.0)).margin(1e-12));
  REQUIRE(ic_loss(Tensor::from_data({1}, {20.0}), t).value() < 1e-8);
  std::vector<std::uint8_t> tf{1, 0};
  REQUIRE(ic_loss(Tensor::from_data({2}, {1.0, -1.0}), tf).value() ==
          Catch::Approx(0.3133).margin(1e-4));
}

TEST_CASE("itm loss values") {
  std::vector<std::uint8_t> t{1};
  REQUIRE(itm_loss(Tensor::from_data({1}, {0.0}), t).value() ==
          Catch::Approx(std::log(2.0)).margin(1e-12));
  std::vector<std::uint8_t> tf{1, 0};
  REQUIRE(itm_loss(Tensor::from_data({2}, {2.0, -2.0}), tf).value() ==
          Catch::Approx(0.1269).margin(1e-4));
  std::vector<std::uint8_t> all{1, 0, 1};
  REQUIRE(itm_loss(Tensor::from_data({3}, {30.0, -30.0, 30.0}), all).value() < 1e-6);
}

TEST_CASE("bce symmetry: flipped labels equal negated logits") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5;
    std::vector<double> logits(n);
    std::vector<std::uint8_t> labels(n), flipped(n);
    for (int i = 0; i < n; ++i) {
      logits[static_cast<std::size_t>(i)] = rng.normal(0, 2);
      labels[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
      flipped[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] ? 0 : 1;
    }
    std::vector<double> negated(n);
    for (int i = 0; i < n; ++i) negated[static_cast<std::size_t>(i)] = -logits[static_cast<std::size_t>(i)];
    const double a = ic_loss(Tensor::from_data({n}, logits), flipped).value();
    const double b = ic_loss(Tensor::from_data({n}, negated), labels).value();
    REQUIRE(a == Catch::Approx(b).margin(1e-12));
  }
}

TEST_CASE("semantic head behavior") {
  ModelConfig cfg = tiny_config();
  CoverClipModel model(cfg, 9, false, true);
  Vocabulary vocab = tiny_vocab();
  Tensor images = random_images(2, cfg.image_resolution, 31);

  SECTION("zero sample embedding stays finite") {
    VisionOutput vis = model.encode_image(images);
    Tensor zero = Tensor::zeros({2, cfg.d_model});
    Tensor logits = model.semantic_head->forward(vis.tokens, zero);
    REQUIRE(logits.shape() == std::vector<int>{2});
    for (double v : logits.data()) REQUIRE(std::isfinite(v));
  }

  SECTION("gradients from L_ITM alone reach the patch embedding") {
    Graph g;
    {
      Graph::Scope scope(g);
      VisionOutput vis = model.encode_image(images);
      Tensor sample =
          model.embed_sample_text({tokenize("w1 w2", vocab, cfg.max_text_len),
                                   tokenize("w3", vocab, cfg.max_text_len)});
      Tensor logits = model.semantic_head->forward(vis.tokens, sample);
      std::vector<std::uint8_t> labels{1, 0};
      g.backward(itm_loss(logits, labels));
    }
    bool any = false;
    for (const NamedTensor& p : model.encoder_parameters()) {
      if (p.name != "vision.patch_embed.weight") continue;
      REQUIRE(p.tensor.has_grad());
      for (double v : p.tensor.grad())
        if (v != 0.0) any = true;
    }
    REQUIRE(any);
  }

  SECTION("batch permutation equivariance") {
    VisionOutput vis = model.encode_image(images);
    Rng rng(7);
    Tensor sample = Tensor::randn({2, cfg.d_model}, rng);
    Tensor logits = model.semantic_head->forward(vis.tokens, sample);

    // swap the two items
    Tensor images_sw = Tensor::zeros({2, cfg.image_resolution, cfg.image_resolution, 3});
    const std::size_t isz = images.size() / 2;
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(isz), isz, images_sw.mutable_data().begin());
    std::copy_n(images.data().begin(), isz, images_sw.mutable_data().begin() + static_cast<std::ptrdiff_t>(isz));
    Tensor sample_sw = Tensor::zeros({2, cfg.d_model});
    std::copy_n(sample.data().begin() + cfg.d_model, cfg.d_model, sample_sw.mutable_data().begin());
    std::copy_n(sample.data().begin(), cfg.d_model, sample_sw.mutable_data().begin() + cfg.d_model);

    VisionOutput vis_sw = model.encode_image(images_sw);
    Tensor logits_sw = model.semantic_head->forward(vis_sw.tokens, sample_sw);
    REQUIRE(logits.data()[0] == Catch::Approx(logits_sw.data()[1]).margin(1e-12));
    REQUIRE(logits.data()[1] == Catch::Approx(logits_sw.data()[0]).margin(1e-12));
  }

  SECTION("shape mismatch raises") {
    VisionOutput vis = model.encode_image(images);
    REQUIRE_THROWS_AS(model.semantic_head->forward(vis.tokens, Tensor::zeros({3, cfg.d_model})),
                      ShapeError);
  }
}

TEST_CASE("frozen sample-text encoder") {
  ModelConfig cfg = tiny_config();
  CoverClipModel model(cfg, 21, false, true);
  Vocabulary vocab = tiny_vocab();
  auto seq = tokenize("w1 w4 w5", vocab, cfg.max_text_len);

  SECTION("same text twice gives identical vectors") {
    Tensor a = model.embed_sample_text({seq});
    Tensor b = model.embed_sample_text({seq});
    REQUIRE(a.data() == b.data());
  }

  SECTION("empty text embeds the CLS-only sequence, finite") {
    Tensor v = model.embed_sample_text({tokenize("", vocab, cfg.max_text_len)});
    for (double x : v.data()) REQUIRE(std::isfinite(x));
  }

  SECTION("snapshot stays frozen while the live tower trains") {
    Tensor before = model.embed_sample_text({seq});
    // drive 100 update steps into the live text tower
    ParamList params = model.trainable_parameters();
    AdamWConfig ocfg;
    ocfg.lr = 1e-2;
    AdamW opt(params, ocfg);
    Tensor live_before = model.encode_text({seq});
    for (int step = 0; step < 100; ++step) {
      Graph g;
      {
        Graph::Scope scope(g);
        Tensor emb = model.encode_text({seq, tokenize("w2", vocab, cfg.max_text_len)});
        g.backward(sum(emb));
      }
      opt.step();
      opt.zero_grad();
    }
    Tensor live_after = model.encode_text({seq});
    REQUIRE(live_after.data() != live_before.data());  // the live tower moved
    Tensor after = model.embed_sample_text({seq});
    REQUIRE(after.data() == before.data());  // the snapshot did not
  }
}

TEST_CASE("detaching heads leaves encoder outputs bit-identical") {
  ModelConfig cfg = tiny_config();
  CoverClipModel with(cfg, 33, true, true);
  Tensor images = random_images(2, cfg.image_resolution, 41);
  Vocabulary vocab = tiny_vocab();
  std::vector<TokenSequence> seqs{tokenize("w1", vocab, cfg.max_text_len)};

  VisionOutput v1 = with.encode_image(images);
  Tensor t1 = with.encode_text(seqs);
  // drop the heads in place
  with.presence_head.reset();
  with.semantic_head.reset();
  VisionOutput v2 = with.encode_image(images);
  REQUIRE(v1.embedding.data() == v2.embedding.data());
  REQUIRE(v1.tokens.data() == v2.tokens.data());
  REQUIRE(with.encode_text(seqs).data() == t1.data());
}
