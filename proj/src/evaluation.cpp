#include "flip/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "flip/errors.hpp"
#include "flip/objective.hpp"
#include "flip/parallel.hpp"
#include "flip/random.hpp"

namespace flip {

namespace {

constexpr std::uint64_t kEvalMaskStream = 7;

template <typename Fn>
void for_chunks(Index n, Index chunk, Fn&& fn) {
  const Index count = (n + chunk - 1) / chunk;
  parallel_for(static_cast<std::size_t>(count), [&](std::size_t c) {
    const Index begin = static_cast<Index>(c) * chunk;
    const Index end = std::min(n, begin + chunk);
    std::vector<Index> idx(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    fn(begin, idx);
  });
}

std::vector<std::uint64_t> eval_seeds(std::uint64_t seed, const std::vector<Index>& idx) {
  std::vector<std::uint64_t> seeds;
  for (Index i : idx) seeds.push_back(seed_hash({seed, static_cast<std::uint64_t>(i), kEvalMaskStream}));
  return seeds;
}

EmbeddingMatrix normalize_rows(EmbeddingMatrix m) {
  for (Index r = 0; r < m.rows(); ++r) {
    m.row(r) /= std::sqrt(m.row(r).squaredNorm() + static_cast<float>(kNormalizeEps * kNormalizeEps));
  }
  return m;
}

}  // namespace

PromptSet PromptSet::desk() {
  return {{"a photo of a {}.", "an image of a {}.", "a drawing of a {}.", "a rendering of a {}.",
           "a picture of the {}.", "a small {}.", "a large {}."},
          class_names()};
}

void PromptSet::validate() const {
  if (templates.empty() || classes.empty()) throw ConfigError("prompt set needs templates and classes");
  for (const auto& t : templates) {
    const auto first = t.find("{}");
    if (first == std::string::npos || t.find("{}", first + 2) != std::string::npos) {
      throw ConfigError("prompt template '" + t + "' must contain exactly one {} placeholder");
    }
  }
}

std::string PromptSet::fill(const std::string& tmpl, const std::string& name) {
  const auto pos = tmpl.find("{}");
  return tmpl.substr(0, pos) + name + tmpl.substr(pos + 2);
}

std::string to_string(InferenceMode mode) {
  switch (mode) {
    case InferenceMode::kFull:
      return "full";
    case InferenceMode::kMasked:
      return "masked";
    case InferenceMode::kEnsemble:
      return "ensemble";
  }
  return "full";
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["metric"] = metric;
  j["value"] = value;
  j["mode"] = to_string(mode);
  j["config"] = config;
  return j.dump();
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

EmbeddingMatrix embed_images(const Model& model, const Dataset& data, const ImageEmbedOptions& options) {
  const auto& geom = model.image.geometry;
  EmbeddingMatrix out(data.size(), model.config.embed_dim);
  for_chunks(data.size(), options.chunk, [&](Index begin, const std::vector<Index>& idx) {
    NoGradGuard no_grad;
    const Tensor<float> patches = patchify<float>(data.images(idx), geom.patch_size);
    const auto seeds = eval_seeds(options.seed, idx);
    EmbeddingMatrix block;
    auto project = [&](const Tensor<float>& pooled) {
      return EmbeddingMatrix(project_and_normalize(pooled, model.image.projection).matrix());
    };
    switch (options.mode) {
      case InferenceMode::kFull:
        block = project(encode_image_dense(model.image, patches).pooled);
        break;
      case InferenceMode::kMasked:
        block = project(encode_image(model.image, patches, sample_patch_mask(geom.num_patches(), options.ratio, seeds)).pooled);
        break;
      case InferenceMode::kEnsemble: {
        const auto views = complementary_views(geom.num_patches(), options.ratio, seeds);
        block = EmbeddingMatrix::Zero(static_cast<Index>(idx.size()), model.config.embed_dim);
        for (const auto& view : views) block += project(encode_image(model.image, patches, view).pooled);
        block = normalize_rows(block / static_cast<float>(views.size()));
        break;
      }
    }
    out.middleRows(begin, block.rows()) = block;
  });
  return out;
}

EmbeddingMatrix image_features(const Model& model, const Dataset& data) {
  EmbeddingMatrix out(data.size(), model.image.geometry.width);
  for_chunks(data.size(), 256, [&](Index begin, const std::vector<Index>& idx) {
    NoGradGuard no_grad;
    const auto enc = encode_image_dense(model.image, patchify<float>(data.images(idx), model.image.geometry.patch_size));
    out.middleRows(begin, enc.pooled.rows()) = enc.pooled.matrix();
  });
  return out;
}

EmbeddingMatrix embed_captions(const Model& model, const Tokenizer& tokenizer, const std::vector<std::string>& captions) {
  EmbeddingMatrix out(static_cast<Index>(captions.size()), model.config.embed_dim);
  for_chunks(static_cast<Index>(captions.size()), 256, [&](Index begin, const std::vector<Index>& idx) {
    NoGradGuard no_grad;
    std::vector<std::string> chunk;
    for (Index i : idx) chunk.push_back(captions[static_cast<std::size_t>(i)]);
    const auto enc = encode_text_dense(model.text, tokenizer.encode_batch(chunk));
    out.middleRows(begin, enc.pooled.rows()) = project_and_normalize(enc.pooled, model.text.projection).matrix();
  });
  return out;
}

EmbeddingMatrix class_embeddings(const Model& model, const Tokenizer& tokenizer, const PromptSet& prompts) {
  prompts.validate();
  std::vector<std::string> filled;
  for (const auto& c : prompts.classes) {
    for (const auto& t : prompts.templates) filled.push_back(PromptSet::fill(t, c));
  }
  const EmbeddingMatrix all = embed_captions(model, tokenizer, filled);
  const Index k = static_cast<Index>(prompts.classes.size());
  const Index t = static_cast<Index>(prompts.templates.size());
  EmbeddingMatrix out(k, all.cols());
  for (Index c = 0; c < k; ++c) out.row(c) = all.middleRows(c * t, t).colwise().sum() / static_cast<float>(t);
  return normalize_rows(std::move(out));
}

std::vector<int> zero_shot_classify(const EmbeddingMatrix& image_emb, const EmbeddingMatrix& class_emb) {
  if (image_emb.cols() != class_emb.cols()) throw DimensionError("zero_shot_classify: embedding widths differ");
  const EmbeddingMatrix sim = image_emb * class_emb.transpose();
  std::vector<int> labels(static_cast<std::size_t>(sim.rows()));
  for (Index r = 0; r < sim.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < sim.cols(); ++c) {
      if (sim(r, c) > sim(r, best)) best = c;
    }
    labels[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return labels;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw DimensionError("accuracy: label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double recall_at_k(const EmbeddingMatrix& query, const EmbeddingMatrix& gallery, const std::vector<Index>& ground_truth,
                   Index k) {
  if (k <= 0 || k > gallery.rows()) {
    throw ConfigError("recall@k needs 1 <= k <= gallery size, got k=" + std::to_string(k));
  }
  if (static_cast<Index>(ground_truth.size()) != query.rows()) throw DimensionError("recall_at_k: one truth per query");
  const EmbeddingMatrix sim = query * gallery.transpose();
  std::size_t hits = 0;
  for (Index q = 0; q < sim.rows(); ++q) {
    const Index truth = ground_truth[static_cast<std::size_t>(q)];
    const float s = sim(q, truth);
    // rank = items strictly better, plus equal-scored items at lower index
    Index rank = 0;
    for (Index g = 0; g < sim.cols(); ++g) {
      if (sim(q, g) > s || (sim(q, g) == s && g < truth)) ++rank;
    }
    hits += rank < k ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(query.rows());
}

std::vector<int> ProbeResult::predict(const EmbeddingMatrix& features) const {
  const Eigen::MatrixXd x =
      ((features.cast<double>().rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array()).matrix();
  const Eigen::MatrixXd logits = (x * weights).rowwise() + bias.transpose();
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best;
    logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

ProbeResult linear_probe(const EmbeddingMatrix& train_features, const std::vector<int>& train_labels,
                         const EmbeddingMatrix& test_features, const std::vector<int>& test_labels,
                         const ProbeConfig& config) {
  const Index n = train_features.rows(), d = train_features.cols();
  if (static_cast<Index>(train_labels.size()) != n || n == 0) throw DimensionError("linear_probe: one label per row");
  if (std::set<int>(train_labels.begin(), train_labels.end()).size() < 2) {
    throw ConfigError("linear probe needs at least two distinct classes");
  }
  for (int l : train_labels) {
    if (l < 0) throw ConfigError("linear probe labels must be non-negative");
  }
  const Index k = *std::max_element(train_labels.begin(), train_labels.end()) + 1;

  ProbeResult probe;
  const Eigen::MatrixXd raw = train_features.cast<double>();
  probe.mean = raw.colwise().mean().transpose();
  const Eigen::MatrixXd centered = raw.rowwise() - probe.mean.transpose();
  probe.inv_std = (centered.array().square().colwise().mean().sqrt() + 1e-8).inverse().transpose();
  const Eigen::MatrixXd x = (centered.array().rowwise() * probe.inv_std.transpose().array()).matrix();
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, k);
  for (Index i = 0; i < n; ++i) onehot(i, train_labels[static_cast<std::size_t>(i)]) = 1.0;

  probe.weights = Eigen::MatrixXd::Zero(d, k);
  probe.bias = Eigen::VectorXd::Zero(k);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = 0.5 * config.lr * (1.0 + std::cos(M_PI * epoch / config.epochs));
    Eigen::MatrixXd logits = (x * probe.weights).rowwise() + probe.bias.transpose();
    logits = logits.colwise() - logits.rowwise().maxCoeff();
    Eigen::MatrixXd p = logits.array().exp();
    p = p.array().colwise() / p.rowwise().sum().array();
    const Eigen::MatrixXd g = (p - onehot) / static_cast<double>(n);
    probe.weights -= lr * (x.transpose() * g);
    probe.bias -= lr * g.colwise().sum().transpose();
  }
  probe.train_accuracy = accuracy(probe.predict(train_features), train_labels);
  if (test_features.rows() > 0) probe.accuracy = accuracy(probe.predict(test_features), test_labels);
  return probe;
}

double zero_shot_accuracy(const Model& model, const Tokenizer& tokenizer, const Dataset& data,
                          const ImageEmbedOptions& options) {
  const EmbeddingMatrix classes = class_embeddings(model, tokenizer, PromptSet::desk());
  const EmbeddingMatrix images = embed_images(model, data, options);
  return accuracy(zero_shot_classify(images, classes), data.labels(data.all_indices()));
}

std::array<EvalReport, 3> eval_inference_modes(const Model& model, const Tokenizer& tokenizer, const Dataset& data,
                                               double ratio, std::uint64_t seed, const std::string& config) {
  const EmbeddingMatrix classes = class_embeddings(model, tokenizer, PromptSet::desk());
  const auto labels = data.labels(data.all_indices());
  std::array<EvalReport, 3> reports;
  const InferenceMode modes[3] = {InferenceMode::kFull, InferenceMode::kMasked, InferenceMode::kEnsemble};
  for (int i = 0; i < 3; ++i) {
    ImageEmbedOptions opts{modes[i], ratio, seed, 256};
    reports[static_cast<std::size_t>(i)] = {"zero_shot_accuracy",
                                            accuracy(zero_shot_classify(embed_images(model, data, opts), classes), labels),
                                            modes[i], config};
  }
  return reports;
}

double heldout_loss(const Model& model, const Tokenizer& tokenizer, const Dataset& data, Index batch_size) {
  const Index batches = data.size() / batch_size;
  if (batches == 0) throw ConfigError("held-out set smaller than one batch");
  std::vector<double> losses(static_cast<std::size_t>(batches));
  parallel_for(static_cast<std::size_t>(batches), [&](std::size_t b) {
    NoGradGuard no_grad;
    std::vector<Index> idx(static_cast<std::size_t>(batch_size));
    std::iota(idx.begin(), idx.end(), static_cast<Index>(b) * batch_size);
    const auto image = encode_image_dense(model.image, patchify<float>(data.images(idx), model.image.geometry.patch_size));
    const auto text = encode_text_dense(model.text, tokenizer.encode_batch(data.captions(idx)));
    const EmbeddingBatch<float> emb{project_and_normalize(image.pooled, model.image.projection),
                                    project_and_normalize(text.pooled, model.text.projection), model.logit_scale};
    losses[b] = info_nce(emb).item();
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(batches);
}

}  // namespace flip
