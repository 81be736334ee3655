#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flip/encoders.hpp"
#include "flip/gradcheck.hpp"
#include "flip/masking.hpp"
#include "flip/objective.hpp"

using namespace flip;
using T = Tensor<double>;

namespace {

T unit_rows(Index b, Index d, std::uint64_t seed) {
  Rng rng(seed);
  T t = T::zeros({b, d});
  for (Index i = 0; i < t.size(); ++i) t.data()(i) = rng.normal();
  return l2_normalize_rows(t);
}

// Row-wise log-sum-exp loss computed with scalar loops.
double oracle_info_nce(const T& img, const T& txt, double scale) {
  const Index b = img.rows(), d = img.cols();
  auto dot = [&](Index i, Index j) {
    double s = 0.0;
    for (Index k = 0; k < d; ++k) s += img.data()(i * d + k) * txt.data()(j * d + k);
    return scale * s;
  };
  double i2t = 0.0, t2i = 0.0;
  for (Index i = 0; i < b; ++i) {
    double zr = 0.0, zc = 0.0;
    for (Index j = 0; j < b; ++j) {
      zr += std::exp(dot(i, j));
      zc += std::exp(dot(j, i));
    }
    i2t += std::log(zr) - dot(i, i);
    t2i += std::log(zc) - dot(i, i);
  }
  return 0.5 * (i2t + t2i) / static_cast<double>(b);
}

}  // namespace

TEST_CASE("project_and_normalize examples") {
  const T eye = T::from({2, 2}, std::vector<double>{1, 0, 0, 1});
  const T y = project_and_normalize(T::from({1, 2}, std::vector<double>{3, 4}), eye);
  CHECK(y.data()(0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(y.data()(1) == doctest::Approx(0.8).epsilon(1e-12));
  const T u = project_and_normalize(T::from({1, 2}, std::vector<double>{0.6, 0.8}), eye);
  CHECK(u.data()(0) == doctest::Approx(0.6).epsilon(1e-12));
  const T zero = project_and_normalize(T::zeros({1, 2}), eye);
  CHECK(zero.data().allFinite());
  const T many = project_and_normalize(unit_rows(7, 5, 1), unit_rows(5, 3, 2));
  for (Index r = 0; r < 7; ++r) CHECK(std::abs(many.matrix().row(r).norm() - 1.0) < 1e-5);
}

TEST_CASE("similarity logits: identity, cosines and scale clamp") {
  const T eye = T::from({2, 2}, std::vector<double>{1, 0, 0, 1});
  const T logits = similarity_logits(EmbeddingBatch<double>{eye, eye, T::zeros({1})});
  CHECK(logits.data()(0) == 1.0);
  CHECK(logits.data()(1) == 0.0);
  CHECK(logits.data()(3) == 1.0);

  const T e = unit_rows(4, 6, 3);
  const T same = similarity_logits(EmbeddingBatch<double>{e, e, T::zeros({1})});
  for (Index i = 0; i < 4; ++i) CHECK(same.data()(i * 4 + i) == doctest::Approx(1.0).epsilon(1e-12));

  const T clamped = effective_scale(T::full({1}, std::log(100.0) + 1.0));
  CHECK(clamped.item() == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("info_nce B=2 orthonormal at scale 1") {
  const T eye = T::from({2, 2}, std::vector<double>{1, 0, 0, 1});
  const double loss = info_nce(EmbeddingBatch<double>{eye, eye, T::zeros({1})}).item();
  const double hand = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(std::abs(loss - 0.31326) < 1e-4);
  CHECK(loss == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("info_nce equals ln B for identical embeddings") {
  for (Index b : {Index{2}, Index{5}, Index{64}}) {
    T one = unit_rows(1, 8, 4);
    std::vector<double> rep;
    for (Index i = 0; i < b; ++i) rep.insert(rep.end(), one.data().data(), one.data().data() + 8);
    const T e = T::from({b, 8}, rep);
    const double loss = info_nce(EmbeddingBatch<double>{e, e, T::full({1}, initial_logit_scale())}).item();
    CHECK(std::abs(loss - std::log(static_cast<double>(b))) < 1e-6);
  }
}

TEST_CASE("info_nce agrees with the loop oracle, is non-negative and permutation invariant") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const T img = unit_rows(6, 5, 10 + s), txt = unit_rows(6, 5, 40 + s);
    const double ls = 0.3 * static_cast<double>(s % 7);
    const double loss = info_nce(EmbeddingBatch<double>{img, txt, T::full({1}, ls)}).item();
    CHECK(loss == doctest::Approx(oracle_info_nce(img, txt, std::exp(ls))).epsilon(1e-10));
    CHECK(loss >= 0.0);
    const std::vector<Index> perm = {3, 0, 5, 1, 4, 2};
    const double permuted =
        info_nce(EmbeddingBatch<double>{gather_rows(img, perm), gather_rows(txt, perm), T::full({1}, ls)}).item();
    CHECK(std::abs(permuted - loss) < 1e-6);
  }
}

TEST_CASE("info_nce tends to zero as the scale grows with a dominant diagonal") {
  const T eye = T::from({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  const double small = info_nce(EmbeddingBatch<double>{eye, eye, T::full({1}, 0.0)}).item();
  const double large = info_nce(EmbeddingBatch<double>{eye, eye, T::full({1}, std::log(100.0))}).item();
  CHECK(large < small);
  CHECK(large < 1e-30);
}

TEST_CASE("info_nce rejects a batch without negatives") {
  const T e = unit_rows(1, 4, 5);
  CHECK_THROWS_AS(info_nce(EmbeddingBatch<double>{e, e, T::zeros({1})}), ConfigError);
}

TEST_CASE("info_nce gradients through normalization and the logit scale") {
  const OpFunction op = [](const std::vector<VerifyTensor>& in) {
    return info_nce(EmbeddingBatch<double>{l2_normalize_rows(in[0]), l2_normalize_rows(in[1]), in[2]});
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = check_gradients(op, {{4, 6}, {4, 6}, {1}}, 1e-4, seed);
    INFO("seed " << seed << " worst " << r.worst());
    CHECK(r.passed());
  }
}

TEST_CASE("argmax of similarity is invariant to the logit scale") {
  const T img = unit_rows(8, 5, 6), txt = unit_rows(8, 5, 7);
  auto argmax_rows = [](const T& m) {
    std::vector<Index> out;
    for (Index r = 0; r < m.rows(); ++r) {
      Index best;
      m.matrix().row(r).maxCoeff(&best);
      out.push_back(best);
    }
    return out;
  };
  const auto base = argmax_rows(similarity_logits(EmbeddingBatch<double>{img, txt, T::zeros({1})}));
  for (double ls : {-3.0, 0.5, 2.0, 4.6}) {
    CHECK(argmax_rows(similarity_logits(EmbeddingBatch<double>{img, txt, T::full({1}, ls)})) == base);
  }
}

TEST_CASE("normalized patch targets have zero mean and unit variance") {
  Rng rng(8);
  T p = T::zeros({5, 48});
  for (Index i = 0; i < p.size(); ++i) p.data()(i) = rng.uniform();
  const auto t = normalized_patch_targets(p);
  for (Index r = 0; r < 5; ++r) {
    const auto row = t.segment(r * 48, 48);
    CHECK(std::abs(row.mean()) < 1e-12);
    CHECK(std::abs(row.square().mean() - 1.0) < 1e-4);
  }
}

TEST_CASE("mse examples") {
  Rng rng(9);
  T pred = T::zeros({400, 48});
  T patches = T::zeros({400, 48});
  for (Index i = 0; i < patches.size(); ++i) patches.data()(i) = rng.uniform();
  const auto target = normalized_patch_targets(patches);
  CHECK(mse(pred, target).item() == doctest::Approx(1.0).epsilon(0.05));
  CHECK(mse(T::from({400, 48}, target), target).item() == 0.0);
}

TEST_CASE("reconstruction loss: hidden patches only, empty mask") {
  EncoderConfig cfg = EncoderConfig::preset("tiny");
  auto model = ClipModel<double>::init(cfg, 1, true);
  Rng rng(10);
  ImageBatch images{2, 32, 32, 3, {}};
  for (Index i = 0; i < 2 * 32 * 32 * 3; ++i) images.pixels.push_back(static_cast<float>(rng.uniform()));
  const T patches = patchify<double>(images, 8);
  const std::vector<std::uint64_t> seeds = {1, 2};

  const PatchMask none = sample_patch_mask(16, 0.0, seeds);
  const auto enc0 = encode_image(model.image, patches, none);
  const auto r0 = reconstruction_loss(*model.decoder, enc0.tokens, none, patches);
  CHECK(r0.empty_mask);
  CHECK(r0.loss.item() == 0.0);

  const PatchMask half = sample_patch_mask(16, 0.5, seeds);
  const auto enc = encode_image(model.image, patches, half);
  const auto r = reconstruction_loss(*model.decoder, enc.tokens, half, patches);
  CHECK_FALSE(r.empty_mask);
  CHECK(r.loss.item() > 0.0);

  // changing the pixels of a visible patch in the target leaves the loss unchanged
  T altered = T::from(patches.shape(), patches.data());
  const Index v = half.visible[0][0];
  for (Index k = 0; k < 192; ++k) altered.data()(v * 192 + k) = 0.5;
  const auto r2 = reconstruction_loss(*model.decoder, enc.tokens, half, altered);
  CHECK(r2.loss.item() == r.loss.item());
}

TEST_CASE("combine_losses") {
  const T c = T::full({1}, 2.0), r = T::full({1}, 0.5);
  CHECK(combine_losses(c, std::optional(r), 0.0).total.item() == 2.0);
  CHECK(combine_losses(c, std::optional(r), 1.0).total.item() == 2.5);
  CHECK(combine_losses(c, std::optional(r), 0.5).total.item() == 2.25);
  CHECK(combine_losses(c, std::optional<T>{}, 1.0).total.item() == 2.0);
}
