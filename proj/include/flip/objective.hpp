#ifndef FLIP_OBJECTIVE_HPP_
#define FLIP_OBJECTIVE_HPP_

#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "flip/encoders.hpp"
#include "flip/errors.hpp"
#include "flip/masking.hpp"
#include "flip/tensor.hpp"

namespace flip {

inline constexpr double kNormalizeEps = 1e-8;

/// Linear map into the joint space followed by per-row L2 normalization.
template <typename Scalar>
Tensor<Scalar> project_and_normalize(const Tensor<Scalar>& features, const Tensor<Scalar>& projection) {
  return l2_normalize_rows(matmul(features, projection), Scalar(kNormalizeEps));
}

template <typename Scalar>
struct EmbeddingBatch {
  Tensor<Scalar> image;        // [B, embed], unit rows
  Tensor<Scalar> text;         // [B, embed], unit rows
  Tensor<Scalar> logit_scale;  // [1], log-space
};

/// exp(min(logit_scale, log 100)) as a tracked scalar.
template <typename Scalar>
Tensor<Scalar> effective_scale(const Tensor<Scalar>& logit_scale) {
  return exp(clamp_max(logit_scale, static_cast<Scalar>(max_logit_scale())));
}

/// logits[i][j] = scale * <image_i, text_j>.
template <typename Scalar>
Tensor<Scalar> similarity_logits(const EmbeddingBatch<Scalar>& e) {
  return mul_scalar(matmul(e.image, transpose(e.text)), effective_scale(e.logit_scale));
}

/// Symmetric InfoNCE with matched pairs on the diagonal and the other
/// in-batch samples as negatives.
template <typename Scalar>
Tensor<Scalar> info_nce(const EmbeddingBatch<Scalar>& e) {
  const Index b = e.image.rows();
  if (b < 2) throw ConfigError("info_nce needs at least two pairs in a batch to have negatives");
  if (e.text.rows() != b) throw DimensionError("info_nce: image and text batches differ in size");
  std::vector<Index> diag(static_cast<std::size_t>(b));
  std::iota(diag.begin(), diag.end(), Index{0});
  const Tensor<Scalar> logits = similarity_logits(e);
  return scale(add(cross_entropy_rows(logits, diag), cross_entropy_rows(transpose(logits), diag)), Scalar(0.5));
}

/// Per-patch standardized pixels (zero mean, unit variance per row).
template <typename Scalar>
typename Tensor<Scalar>::Array normalized_patch_targets(const Tensor<Scalar>& patches_2d, Scalar eps = Scalar(1e-6)) {
  const Index n = patches_2d.rows(), d = patches_2d.cols();
  typename Tensor<Scalar>::Array out(n * d);
  auto in = patches_2d.matrix();
  auto om = typename Tensor<Scalar>::MatrixMap(out.data(), n, d);
  for (Index r = 0; r < n; ++r) {
    const Scalar mean = in.row(r).mean();
    const Scalar var = (in.row(r).array() - mean).square().mean();
    om.row(r) = ((in.row(r).array() - mean) / std::sqrt(var + eps)).matrix();
  }
  return out;
}

template <typename Scalar>
struct ReconstructionResult {
  Tensor<Scalar> loss;
  /// Set when the mask hides nothing and the loss is defined as zero.
  bool empty_mask = false;
};

/// MAE-style reconstruction of hidden patches from the encoded visible tokens.
template <typename Scalar>
ReconstructionResult<Scalar> reconstruction_loss(const ReconstructionDecoder<Scalar>& decoder,
                                                 const Tensor<Scalar>& encoded_visible, const PatchMask& mask,
                                                 const Tensor<Scalar>& target_patches) {
  const Index b = mask.batch(), n = mask.num_positions;
  const auto hidden = mask.flat_hidden();
  if (hidden.empty()) {
    return {Tensor<Scalar>::zeros({1}), true};
  }
  Tensor<Scalar> visible = decoder.embed(encoded_visible);
  Tensor<Scalar> fill = embedding(decoder.mask_token, std::vector<Index>(hidden.size(), 0));
  Tensor<Scalar> full = add(scatter_rows(visible, mask.flat_visible(), b * n), scatter_rows(fill, hidden, b * n));
  full = add_tiled(full, decoder.position);
  Tensor<Scalar> pred = decoder.head(decoder.trunk(full, b));
  const Tensor<Scalar> flat_target = reshape(target_patches, {b * n, target_patches.cols()});
  const Tensor<Scalar> hidden_target = gather_rows(flat_target, hidden);
  return {mse(gather_rows(pred, hidden), normalized_patch_targets(hidden_target)), false};
}

template <typename Scalar>
struct LossBundle {
  Tensor<Scalar> contrastive;
  std::optional<Tensor<Scalar>> reconstruction;
  Tensor<Scalar> total;
  double lambda_rec = 0.0;
};

template <typename Scalar>
LossBundle<Scalar> combine_losses(Tensor<Scalar> contrastive, std::optional<Tensor<Scalar>> reconstruction,
                                  double lambda_rec) {
  LossBundle<Scalar> bundle;
  bundle.contrastive = contrastive;
  bundle.lambda_rec = lambda_rec;
  bundle.total = contrastive;
  if (reconstruction && lambda_rec > 0.0) {
    bundle.total = add(contrastive, scale(*reconstruction, static_cast<Scalar>(lambda_rec)));
  }
  bundle.reconstruction = std::move(reconstruction);
  return bundle;
}

}  // namespace flip

#endif  // FLIP_OBJECTIVE_HPP_
