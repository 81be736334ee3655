#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "flip/evaluation.hpp"
#include "flip/random.hpp"

using namespace flip;

namespace {

EmbeddingMatrix random_unit(Index n, Index d, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix m(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) m(i, j) = static_cast<float>(rng.normal());
    m.row(i).normalize();
  }
  return m;
}

const Model& shared_model() {
  static const Model model = Model::init(EncoderConfig::preset("tiny"), 21);
  return model;
}

}  // namespace

TEST_CASE("desk prompts are valid and fill their placeholder") {
  const PromptSet p = PromptSet::desk();
  CHECK(p.templates.size() == 7);
  CHECK(p.classes.size() == 16);
  CHECK_NOTHROW(p.validate());
  CHECK(PromptSet::fill("a photo of a {}.", "red circle") == "a photo of a red circle.");
  PromptSet bad = p;
  bad.templates.push_back("no placeholder");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.templates.back() = "{} and {}";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.classes.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("class embeddings: single and duplicate templates, unit rows, order invariance") {
  const Tokenizer tok(Vocabulary::desk());
  const Model& model = shared_model();
  PromptSet one{{"a photo of a {}."}, class_names()};
  const EmbeddingMatrix single = class_embeddings(model, tok, one);
  std::vector<std::string> filled;
  for (const auto& c : one.classes) filled.push_back(PromptSet::fill(one.templates[0], c));
  const EmbeddingMatrix direct = embed_captions(model, tok, filled);
  CHECK((single - direct).cwiseAbs().maxCoeff() < 1e-6f);

  PromptSet twice{{"a photo of a {}.", "a photo of a {}."}, class_names()};
  CHECK((class_embeddings(model, tok, twice) - single).cwiseAbs().maxCoeff() < 1e-6f);

  PromptSet all = PromptSet::desk();
  const EmbeddingMatrix forward = class_embeddings(model, tok, all);
  for (Index r = 0; r < forward.rows(); ++r) CHECK(std::abs(forward.row(r).norm() - 1.0f) < 1e-5f);
  std::reverse(all.templates.begin(), all.templates.end());
  CHECK((class_embeddings(model, tok, all) - forward).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("zero-shot classification: identity, ties and scale invariance") {
  const EmbeddingMatrix e = random_unit(9, 6, 1);
  const auto labels = zero_shot_classify(e, e);
  for (int i = 0; i < 9; ++i) CHECK(labels[static_cast<std::size_t>(i)] == i);

  EmbeddingMatrix dup(2, 2);
  dup << 1, 0, 1, 0;
  EmbeddingMatrix q(1, 2);
  q << 1, 0;
  CHECK(zero_shot_classify(q, dup)[0] == 0);

  const EmbeddingMatrix imgs = random_unit(50, 6, 2), classes = random_unit(7, 6, 3);
  const auto base = zero_shot_classify(imgs, classes);
  for (float c : {0.01f, 3.0f, 250.0f}) CHECK(zero_shot_classify(imgs * c, classes) == base);
  CHECK(accuracy(base, base) == 1.0);
  CHECK(accuracy({0, 1, 2, 3}, {0, 1, 0, 0}) == 0.5);
}

TEST_CASE("recall at k examples") {
  const EmbeddingMatrix g = random_unit(12, 8, 4);
  std::vector<Index> truth(12);
  for (Index i = 0; i < 12; ++i) truth[static_cast<std::size_t>(i)] = i;
  CHECK(recall_at_k(g, g, truth, 1) == 1.0);

  // each query's true match is orthogonal while a distractor coincides with it
  EmbeddingMatrix query(2, 3), gallery(4, 3);
  query << 1, 0, 0, 0, 1, 0;
  gallery << 0, 0, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0;
  CHECK(recall_at_k(query, gallery, {0, 1}, 1) == 0.0);
  CHECK(recall_at_k(query, gallery, {0, 1}, 4) == 1.0);

  // equal scores rank by gallery index
  EmbeddingMatrix tied(2, 3);
  tied << 0, 0, 1, 0, 0, 1;
  EmbeddingMatrix tq(1, 3);
  tq << 0, 0, 1;
  CHECK(recall_at_k(tq, tied, {0}, 1) == 1.0);
  CHECK(recall_at_k(tq, tied, {1}, 1) == 0.0);

  const EmbeddingMatrix qs = random_unit(40, 5, 5), gs = random_unit(40, 5, 6);
  std::vector<Index> ids(40);
  for (Index i = 0; i < 40; ++i) ids[static_cast<std::size_t>(i)] = i;
  double prev = 0.0;
  for (Index k = 1; k <= 40; ++k) {
    const double r = recall_at_k(qs, gs, ids, k);
    CHECK(r >= prev);
    CHECK(r <= 1.0);
    prev = r;
  }
  CHECK(prev == 1.0);
  CHECK_THROWS_AS(recall_at_k(qs, gs, ids, 41), ConfigError);
  CHECK_THROWS_AS(recall_at_k(qs, gs, ids, 0), ConfigError);
}

TEST_CASE("linear probe: separable data, random labels, errors") {
  Rng rng(7);
  auto make = [&](Index n) {
    EmbeddingMatrix x(n, 4);
    std::vector<int> y;
    for (Index i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      for (Index j = 0; j < 4; ++j) x(i, j) = static_cast<float>(rng.normal() * 0.3);
      x(i, 0) += label ? 2.0f : -2.0f;
      y.push_back(label);
    }
    return std::pair{x, y};
  };
  const auto [xtr, ytr] = make(200);
  const auto [xte, yte] = make(200);
  const ProbeResult sep = linear_probe(xtr, ytr, xte, yte);
  CHECK(sep.accuracy == 1.0);
  CHECK(sep.predict(xte) == yte);

  // labels independent of the features: accuracy within 3 sigma of 1/K
  const int k = 4, n = 2000;
  EmbeddingMatrix ftr(n, 8), fte(n, 8);
  std::vector<int> ltr, lte;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 8; ++j) {
      ftr(i, j) = static_cast<float>(rng.normal());
      fte(i, j) = static_cast<float>(rng.normal());
    }
    ltr.push_back(static_cast<int>(rng.below(k)));
    lte.push_back(static_cast<int>(rng.below(k)));
  }
  const double acc = linear_probe(ftr, ltr, fte, lte).accuracy;
  const double sigma = std::sqrt(0.25 * 0.75 / n);
  CHECK(std::abs(acc - 0.25) < 3 * sigma);

  CHECK_THROWS_AS(linear_probe(xtr, std::vector<int>(200, 1), xte, yte), ConfigError);
}

TEST_CASE("image embeddings in the three inference modes") {
  const Model& model = shared_model();
  const Dataset data = generate_dataset(24, 11);
  const EmbeddingMatrix full = embed_images(model, data);
  const EmbeddingMatrix ens0 = embed_images(model, data, {InferenceMode::kEnsemble, 0.0, 1});
  CHECK((full - ens0).cwiseAbs().maxCoeff() < 1e-6f);
  for (double ratio : {0.5, 0.75}) {
    const EmbeddingMatrix ens = embed_images(model, data, {InferenceMode::kEnsemble, ratio, 1});
    const EmbeddingMatrix masked = embed_images(model, data, {InferenceMode::kMasked, ratio, 1});
    for (Index r = 0; r < ens.rows(); ++r) {
      CHECK(std::abs(ens.row(r).norm() - 1.0f) < 1e-5f);
      CHECK(std::abs(masked.row(r).norm() - 1.0f) < 1e-5f);
    }
    CHECK((masked - full).cwiseAbs().maxCoeff() > 1e-4f);
  }
  // chunking does not change the result
  ImageEmbedOptions chunked;
  chunked.chunk = 5;
  CHECK((embed_images(model, data, chunked) - full).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK(image_features(model, data).cols() == 64);
}

TEST_CASE("inference mode reports and held-out loss") {
  const Model& model = shared_model();
  const Tokenizer tok(Vocabulary::desk());
  const Dataset data = generate_dataset(40, 12);
  const auto reports = eval_inference_modes(model, tok, data, 0.5, 3, "abc");
  CHECK(reports[0].mode == InferenceMode::kFull);
  CHECK(reports[1].mode == InferenceMode::kMasked);
  CHECK(reports[2].mode == InferenceMode::kEnsemble);
  for (const auto& r : reports) {
    CHECK(r.value >= 0.0);
    CHECK(r.value <= 1.0);
  }
  CHECK(reports[0].value == zero_shot_accuracy(model, tok, data));

  const double loss = heldout_loss(model, tok, data, 16);
  CHECK(std::isfinite(loss));
  CHECK(loss > 0.0);
  CHECK_THROWS_AS(heldout_loss(model, tok, data, 64), ConfigError);
}

TEST_CASE("eval report json") {
  const EvalReport r{"zero_shot_accuracy", 0.75, InferenceMode::kEnsemble, config_hash("preset = tiny\n")};
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["metric"] == "zero_shot_accuracy");
  CHECK(j["value"] == 0.75);
  CHECK(j["mode"] == "ensemble");
  CHECK(j["config"].get<std::string>().size() == 16);
  CHECK(config_hash("a") != config_hash("b"));
  CHECK(config_hash("a") == config_hash("a"));
}
