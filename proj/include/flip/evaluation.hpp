#ifndef FLIP_EVALUATION_HPP_
#define FLIP_EVALUATION_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flip/dataset.hpp"
#include "flip/tokenizer.hpp"
#include "flip/trainer.hpp"

namespace flip {

using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Caption templates with a single "{}" placeholder, and the class names
/// substituted into them.
struct PromptSet {
  std::vector<std::string> templates;
  std::vector<std::string> classes;

  /// Seven templates for the synthetic shapes domain and its 16 classes.
  static PromptSet desk();
  void validate() const;
  static std::string fill(const std::string& tmpl, const std::string& name);
};

enum class InferenceMode { kFull, kMasked, kEnsemble };
std::string to_string(InferenceMode mode);

struct EvalReport {
  std::string metric;
  double value = 0.0;
  InferenceMode mode = InferenceMode::kFull;
  std::string config;

  /// {"metric":..., "value":..., "mode":..., "config":...}
  std::string to_json() const;
};

/// Hex digest identifying a configuration text.
std::string config_hash(const std::string& text);

struct ImageEmbedOptions {
  InferenceMode mode = InferenceMode::kFull;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  Index chunk = 256;
};

/// Unit-norm image embeddings [n, embed]. Full mode encodes intact images;
/// masked mode one random mask per image; ensemble mode averages the
/// normalized embeddings of the complementary views and re-normalizes.
EmbeddingMatrix embed_images(const Model& model, const Dataset& data, const ImageEmbedOptions& options = {});
/// Pooled image features before projection [n, width], full view.
EmbeddingMatrix image_features(const Model& model, const Dataset& data);
/// Unit-norm caption embeddings [n, embed], no text masking.
EmbeddingMatrix embed_captions(const Model& model, const Tokenizer& tokenizer, const std::vector<std::string>& captions);

/// Per class: mean of the normalized embeddings of every filled template,
/// re-normalized.
EmbeddingMatrix class_embeddings(const Model& model, const Tokenizer& tokenizer, const PromptSet& prompts);

/// Row-wise argmax of cosine similarity; ties go to the lowest class index.
std::vector<int> zero_shot_classify(const EmbeddingMatrix& image_emb, const EmbeddingMatrix& class_emb);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

/// Fraction of queries whose true gallery item ranks within the top k by
/// cosine similarity; equal scores rank by gallery index.
double recall_at_k(const EmbeddingMatrix& query, const EmbeddingMatrix& gallery, const std::vector<Index>& ground_truth,
                   Index k);

struct ProbeConfig {
  int epochs = 300;
  double lr = 0.5;
};

struct ProbeResult {
  Eigen::MatrixXd weights;   // [features, classes] on standardized features
  Eigen::VectorXd bias;
  Eigen::VectorXd mean;      // feature standardization
  Eigen::VectorXd inv_std;
  double train_accuracy = 0.0;
  double accuracy = 0.0;     // held-out
  std::vector<int> predict(const EmbeddingMatrix& features) const;
};

/// Multinomial logistic regression on frozen features by full-batch gradient
/// descent with a cosine-decayed lr and no weight decay.
ProbeResult linear_probe(const EmbeddingMatrix& train_features, const std::vector<int>& train_labels,
                         const EmbeddingMatrix& test_features, const std::vector<int>& test_labels,
                         const ProbeConfig& config = {});

/// Zero-shot accuracy with intact images, one random mask, and the
/// complementary-view ensemble, in that order.
std::array<EvalReport, 3> eval_inference_modes(const Model& model, const Tokenizer& tokenizer, const Dataset& data, double ratio,
                                               std::uint64_t seed, const std::string& config = {});

double zero_shot_accuracy(const Model& model, const Tokenizer& tokenizer, const Dataset& data,
                          const ImageEmbedOptions& options = {});

/// Mean full-view InfoNCE over consecutive batches (the last partial batch
/// is dropped).
double heldout_loss(const Model& model, const Tokenizer& tokenizer, const Dataset& data, Index batch_size);

}  // namespace flip

#endif  // FLIP_EVALUATION_HPP_
