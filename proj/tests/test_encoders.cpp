#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "flip/config.hpp"
#include "flip/encoders.hpp"
#include "flip/masking.hpp"
#include "flip/tokenizer.hpp"

using namespace flip;

namespace {

ImageBatch random_images(Index count, Index size, std::uint64_t seed) {
  Rng rng(seed);
  ImageBatch images{count, size, size, 3, {}};
  for (Index i = 0; i < count * size * size * 3; ++i) images.pixels.push_back(static_cast<float>(rng.uniform()));
  return images;
}

std::vector<std::uint64_t> seeds(std::size_t n, std::uint64_t base) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(base + i);
  return s;
}

}  // namespace

TEST_CASE("patchify geometry") {
  const Tensor<float> p = patchify<float>(random_images(2, 32, 1), 8);
  CHECK(p.dim(0) == 2);
  CHECK(p.dim(1) == 16);
  CHECK(p.dim(2) == 192);
  CHECK(EncoderConfig::preset("B-like").image.num_patches() == 196);
  CHECK(EncoderConfig::preset("L-like").image.num_patches() == 196);
  CHECK(EncoderConfig::preset("tiny").image.patch_dim() == 192);
  CHECK_THROWS_AS(patchify<float>(random_images(1, 30, 1), 8), ConfigError);
}

TEST_CASE("patchify is raster order and unpatchify inverts it exactly") {
  const ImageBatch images = random_images(3, 32, 2);
  const Tensor<float> p = patchify<float>(images, 8);
  // patch (row 1, col 2), pixel (y 3, x 5), channel 1
  const Index n = 1 * 4 + 2, k = (3 * 8 + 5) * 3 + 1;
  CHECK(p.at((1 * 16 + n) * 192 + k) == images.pixels[static_cast<std::size_t>(((1 * 32 + 8 + 3) * 32 + 16 + 5) * 3 + 1)]);
  const ImageBatch back = unpatchify(p, 8, 32, 32, 3);
  CHECK(back.pixels == images.pixels);
}

TEST_CASE("presets") {
  const auto l = EncoderConfig::preset("L-like");
  CHECK(l.image.layers == 24);
  CHECK(l.image.width == 1024);
  CHECK(l.image.heads == 16);
  CHECK(l.text.layers == 12);
  CHECK(l.text.width == 768);
  CHECK(l.text.heads == 12);
  CHECK(l.embed_dim == 768);
  CHECK(l.text.seq_len == 32);
  for (const auto& name : EncoderConfig::preset_names()) CHECK_NOTHROW(EncoderConfig::preset(name).validate());
  CHECK_THROWS_AS(EncoderConfig::preset("huge"), ConfigError);

  EncoderConfig bad = EncoderConfig::preset("tiny");
  bad.image.patch_size = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = EncoderConfig::preset("tiny");
  bad.text.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("ratio-0 masked image path equals the dense path bit for bit") {
  const auto model = ClipModel<float>::init(EncoderConfig::preset("tiny"), 4);
  const Tensor<float> p = patchify<float>(random_images(5, 32, 3), 8);
  const auto masked = encode_image(model.image, p, sample_patch_mask(16, 0.0, seeds(5, 9)));
  const auto dense = encode_image_dense(model.image, p);
  CHECK((masked.pooled.data() == dense.pooled.data()).all());
  CHECK((masked.tokens.data() == dense.tokens.data()).all());
}

TEST_CASE("policy none text path equals the dense path bit for bit") {
  const auto model = ClipModel<float>::init(EncoderConfig::preset("tiny"), 5);
  const Tokenizer tok(Vocabulary::desk());
  const auto batch = tok.encode_batch({"a red circle", "a photo of a large green square.", "", "blue"});
  const auto masked = encode_text(model.text, batch, sample_text_mask(batch, 0.0, TextMaskPolicy::kNone, seeds(4, 1)));
  const auto dense = encode_text_dense(model.text, batch);
  CHECK((masked.pooled.data() == dense.pooled.data()).all());
}

TEST_CASE("block 1 sees the visible sequence and attention rows sum to one") {
  const auto model = ClipModel<double>::init(EncoderConfig::preset("tiny"), 6);
  const Tensor<double> p = patchify<double>(random_images(2, 32, 4), 8);
  const auto enc = encode_image(model.image, p, sample_patch_mask(16, 0.5, seeds(2, 3)), true);
  REQUIRE(enc.probes.size() == 4);
  REQUIRE_FALSE(enc.probes[0].probabilities.empty());
  for (const auto& probe : enc.probes) {
    for (const auto& m : probe.probabilities) {
      CHECK(m.rows() == 8);
      CHECK(m.cols() == 8);
      for (Index r = 0; r < m.rows(); ++r) CHECK(std::abs(m.row(r).sum() - 1.0) < 1e-6);
    }
  }
  CHECK(enc.tokens.rows() == 2 * 8);
  CHECK(enc.pooled.rows() == 2);
  CHECK(enc.pooled.cols() == 64);
}

TEST_CASE("visible order inside a sample does not change the image embedding") {
  const auto model = ClipModel<double>::init(EncoderConfig::preset("tiny"), 7);
  const Tensor<double> p = patchify<double>(random_images(3, 32, 5), 8);
  PatchMask mask = sample_patch_mask(16, 0.5, seeds(3, 21));
  const auto a = encode_image(model.image, p, mask);
  Rng rng(99);
  for (auto& v : mask.visible) rng.shuffle(v);
  const auto b = encode_image(model.image, p, mask);
  CHECK(((a.pooled.data() - b.pooled.data()).abs() < 1e-5).all());
}

TEST_CASE("permuting the batch permutes text outputs") {
  const auto model = ClipModel<double>::init(EncoderConfig::preset("tiny"), 8);
  const Tokenizer tok(Vocabulary::desk());
  const std::vector<std::string> caps = {"a red circle", "a small blue cross", "there is a yellow square"};
  const auto fwd = encode_text_dense(model.text, tok.encode_batch(caps));
  const auto rev = encode_text_dense(model.text, tok.encode_batch({caps[2], caps[1], caps[0]}));
  auto f = fwd.pooled.matrix(), r = rev.pooled.matrix();
  for (Index i = 0; i < 3; ++i) CHECK(((f.row(i) - r.row(2 - i)).array().abs() < 1e-12).all());
}

TEST_CASE("padding visibility does not change a caption's embedding") {
  const auto model = ClipModel<double>::init(EncoderConfig::preset("tiny"), 9);
  const Tokenizer tok(Vocabulary::desk());
  // 3 valid + 29 pads; prioritized 50% masks 16 pads, leaving different pads visible per seed
  const auto batch = tok.encode_batch({"a red circle", "a red circle"});
  const TextMask mask = sample_text_mask(batch, 0.5, TextMaskPolicy::kPrioritized, std::vector<std::uint64_t>{1, 2});
  CHECK(mask.visible[0] != mask.visible[1]);
  const auto enc = encode_text(model.text, batch, mask);
  auto m = enc.pooled.matrix();
  CHECK(((m.row(0) - m.row(1)).array().abs() < 1e-12).all());
  const auto dense = encode_text_dense(model.text, batch);
  CHECK(((m.row(0) - dense.pooled.matrix().row(0)).array().abs() < 1e-12).all());
}

TEST_CASE("parameters are uniquely named, decay flags and deep clones") {
  auto model = ClipModel<float>::init(EncoderConfig::preset("tiny"), 10, true);
  std::set<std::string> names;
  for (const auto& p : model.parameters()) {
    CHECK(names.insert(p.name).second);
    CHECK(p.decay == (p.name != "logit_scale"));
  }
  CHECK(model.logit_scale.item() == doctest::Approx(std::log(1.0 / 0.07)));
  auto copy = model.clone();
  copy.image.projection.data()(0) += 1.0f;
  CHECK(copy.image.projection.data()(0) != model.image.projection.data()(0));
}

TEST_CASE("initialization is deterministic per seed") {
  auto a = ClipModel<float>::init(EncoderConfig::preset("tiny"), 11);
  auto b = ClipModel<float>::init(EncoderConfig::preset("tiny"), 11);
  auto c = ClipModel<float>::init(EncoderConfig::preset("tiny"), 12);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK((pa[i].tensor->data() == pb[i].tensor->data()).all());
    differs = differs || !(pa[i].tensor->data() == pc[i].tensor->data()).all();
  }
  CHECK(differs);
}

TEST_CASE("encoder rejects mismatched inputs") {
  const auto model = ClipModel<float>::init(EncoderConfig::preset("tiny"), 13);
  const Tensor<float> p = patchify<float>(random_images(2, 32, 6), 8);
  CHECK_THROWS_AS(encode_image(model.image, p, sample_patch_mask(16, 0.5, seeds(3, 1))), DimensionError);
  const Tensor<float> wrong = patchify<float>(random_images(2, 16, 6), 8);
  CHECK_THROWS_AS(encode_image_dense(model.image, wrong), DimensionError);
}
