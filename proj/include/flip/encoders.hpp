#ifndef FLIP_ENCODERS_HPP_
#define FLIP_ENCODERS_HPP_

// ViT image tower with sparse visible-patch encoding and a bidirectional
// text tower, both templated on the scalar type (float for training, double
// for gradient verification).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flip/config.hpp"
#include "flip/masking.hpp"
#include "flip/random.hpp"
#include "flip/tensor.hpp"
#include "flip/tokenizer.hpp"

namespace flip {

inline constexpr double kInitStd = 0.02;

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Tensor<Scalar>* tensor;
  bool decay;
};

template <typename Scalar>
Tensor<Scalar> init_truncated(Shape shape, Rng& rng) {
  Tensor<Scalar> t = Tensor<Scalar>::zeros(std::move(shape), true);
  for (Index i = 0; i < t.size(); ++i) t.data()(i) = static_cast<Scalar>(rng.truncated_normal(kInitStd));
  return t;
}

template <typename Scalar>
Tensor<Scalar> init_normal(Shape shape, Rng& rng) {
  Tensor<Scalar> t = Tensor<Scalar>::zeros(std::move(shape), true);
  for (Index i = 0; i < t.size(); ++i) t.data()(i) = static_cast<Scalar>(rng.normal() * kInitStd);
  return t;
}

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // [in, out]
  Tensor<Scalar> bias;    // [out]

  static Linear init(Index in, Index out, Rng& rng) {
    return {init_truncated<Scalar>({in, out}, rng), Tensor<Scalar>::zeros({out}, true)};
  }
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return add_tiled(matmul(x, weight), bias); }
};

template <typename Scalar>
struct LayerNormParams {
  Tensor<Scalar> gain;
  Tensor<Scalar> bias;

  static LayerNormParams init(Index d) {
    return {Tensor<Scalar>::full({d}, Scalar(1), true), Tensor<Scalar>::zeros({d}, true)};
  }
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    return layer_norm(x, gain, bias, Scalar(kLayerNormEps));
  }
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <typename Scalar>
struct TransformerBlock {
  LayerNormParams<Scalar> norm1;
  Linear<Scalar> qkv;
  Linear<Scalar> out;
  LayerNormParams<Scalar> norm2;
  Linear<Scalar> fc1;
  Linear<Scalar> fc2;

  static TransformerBlock init(Index width, Rng& rng) {
    TransformerBlock b;
    b.norm1 = LayerNormParams<Scalar>::init(width);
    b.qkv = Linear<Scalar>::init(width, 3 * width, rng);
    b.out = Linear<Scalar>::init(width, width, rng);
    b.norm2 = LayerNormParams<Scalar>::init(width);
    b.fc1 = Linear<Scalar>::init(width, 4 * width, rng);
    b.fc2 = Linear<Scalar>::init(4 * width, width, rng);
    return b;
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x, Index groups, Index heads, const std::vector<std::uint8_t>& key_valid,
                            AttentionProbe<Scalar>* probe = nullptr) const {
    Tensor<Scalar> h = add(x, out(attention(qkv(norm1(x)), groups, heads, key_valid, probe)));
    return add(h, fc2(gelu(fc1(norm2(h)))));
  }
};

template <typename Scalar>
struct Transformer {
  Index heads = 1;
  std::vector<TransformerBlock<Scalar>> blocks;
  LayerNormParams<Scalar> final_norm;

  static Transformer init(Index layers, Index width, Index heads, Rng& rng) {
    Transformer t;
    t.heads = heads;
    for (Index i = 0; i < layers; ++i) t.blocks.push_back(TransformerBlock<Scalar>::init(width, rng));
    t.final_norm = LayerNormParams<Scalar>::init(width);
    return t;
  }

  /// x is [groups*L, width]; every group attends only within itself.
  Tensor<Scalar> operator()(Tensor<Scalar> x, Index groups, const std::vector<std::uint8_t>& key_valid = {},
                            std::vector<AttentionProbe<Scalar>>* probes = nullptr) const {
    if (probes) probes->assign(blocks.size(), {});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      x = blocks[i](x, groups, heads, key_valid, probes ? &(*probes)[i] : nullptr);
    }
    return final_norm(x);
  }

  void collect(const std::string& prefix, std::vector<NamedParameter<Scalar>>& out) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      const std::string p = prefix + "blocks." + std::to_string(i) + ".";
      out.push_back({p + "norm1.gain", &b.norm1.gain, true});
      out.push_back({p + "norm1.bias", &b.norm1.bias, true});
      out.push_back({p + "qkv.weight", &b.qkv.weight, true});
      out.push_back({p + "qkv.bias", &b.qkv.bias, true});
      out.push_back({p + "out.weight", &b.out.weight, true});
      out.push_back({p + "out.bias", &b.out.bias, true});
      out.push_back({p + "norm2.gain", &b.norm2.gain, true});
      out.push_back({p + "norm2.bias", &b.norm2.bias, true});
      out.push_back({p + "fc1.weight", &b.fc1.weight, true});
      out.push_back({p + "fc1.bias", &b.fc1.bias, true});
      out.push_back({p + "fc2.weight", &b.fc2.weight, true});
      out.push_back({p + "fc2.bias", &b.fc2.bias, true});
    }
    out.push_back({prefix + "final_norm.gain", &final_norm.gain, true});
    out.push_back({prefix + "final_norm.bias", &final_norm.bias, true});
  }
};

template <typename Scalar>
struct ImageEncoder {
  ImageGeometry geometry;
  Linear<Scalar> patch_embed;  // no LayerNorm after the embedding
  Tensor<Scalar> position;     // [N, width], indexed by original patch position
  Transformer<Scalar> trunk;
  Tensor<Scalar> projection;  // [width, embed]

  static ImageEncoder init(const ImageGeometry& g, Index embed_dim, Rng& rng) {
    ImageEncoder e;
    e.geometry = g;
    e.patch_embed = Linear<Scalar>::init(g.patch_dim(), g.width, rng);
    e.position = init_normal<Scalar>({g.num_patches(), g.width}, rng);
    e.trunk = Transformer<Scalar>::init(g.layers, g.width, g.heads, rng);
    e.projection = init_truncated<Scalar>({g.width, embed_dim}, rng);
    return e;
  }
};

template <typename Scalar>
struct TextEncoder {
  TextGeometry geometry;
  Tensor<Scalar> token_embed;  // [vocab, width]
  Tensor<Scalar> position;     // [seq_len, width]
  Transformer<Scalar> trunk;
  Tensor<Scalar> projection;  // [width, embed]

  static TextEncoder init(const TextGeometry& g, Index embed_dim, Rng& rng) {
    TextEncoder e;
    e.geometry = g;
    e.token_embed = init_truncated<Scalar>({g.vocab_size, g.width}, rng);
    e.position = init_normal<Scalar>({g.seq_len, g.width}, rng);
    e.trunk = Transformer<Scalar>::init(g.layers, g.width, g.heads, rng);
    e.projection = init_truncated<Scalar>({g.width, embed_dim}, rng);
    return e;
  }
};

/// Small MAE-style decoder predicting normalized pixels of hidden patches.
template <typename Scalar>
struct ReconstructionDecoder {
  Linear<Scalar> embed;        // image width -> decoder width
  Tensor<Scalar> mask_token;   // [1, decoder width]
  Tensor<Scalar> position;     // [N, decoder width]
  Transformer<Scalar> trunk;
  Linear<Scalar> head;         // decoder width -> patch dim

  static ReconstructionDecoder init(const EncoderConfig& c, Rng& rng) {
    ReconstructionDecoder d;
    const Index w = c.decoder_width();
    d.embed = Linear<Scalar>::init(c.image.width, w, rng);
    d.mask_token = init_normal<Scalar>({1, w}, rng);
    d.position = init_normal<Scalar>({c.image.num_patches(), w}, rng);
    d.trunk = Transformer<Scalar>::init(c.decoder_layers, w, c.decoder_heads(), rng);
    d.head = Linear<Scalar>::init(w, c.image.patch_dim(), rng);
    return d;
  }
};

inline double initial_logit_scale() { return std::log(1.0 / 0.07); }
inline double max_logit_scale() { return std::log(100.0); }

template <typename Scalar>
struct ClipModel {
  EncoderConfig config;
  ImageEncoder<Scalar> image;
  TextEncoder<Scalar> text;
  Tensor<Scalar> logit_scale;  // [1], log of the similarity multiplier
  std::optional<ReconstructionDecoder<Scalar>> decoder;

  static ClipModel init(const EncoderConfig& config, std::uint64_t seed, bool with_decoder = false) {
    config.validate();
    Rng rng(seed_hash({seed, 0x1417}));
    ClipModel m;
    m.config = config;
    m.image = ImageEncoder<Scalar>::init(config.image, config.embed_dim, rng);
    m.text = TextEncoder<Scalar>::init(config.text, config.embed_dim, rng);
    m.logit_scale = Tensor<Scalar>::full({1}, static_cast<Scalar>(initial_logit_scale()), true);
    if (with_decoder) m.decoder = ReconstructionDecoder<Scalar>::init(config, rng);
    return m;
  }

  /// Stable, ordered parameter list; `decay` is false only for the logit scale.
  std::vector<NamedParameter<Scalar>> parameters() {
    std::vector<NamedParameter<Scalar>> out;
    out.push_back({"image.patch_embed.weight", &image.patch_embed.weight, true});
    out.push_back({"image.patch_embed.bias", &image.patch_embed.bias, true});
    out.push_back({"image.position", &image.position, true});
    image.trunk.collect("image.", out);
    out.push_back({"image.projection", &image.projection, true});
    out.push_back({"text.token_embed", &text.token_embed, true});
    out.push_back({"text.position", &text.position, true});
    text.trunk.collect("text.", out);
    out.push_back({"text.projection", &text.projection, true});
    out.push_back({"logit_scale", &logit_scale, false});
    if (decoder) {
      out.push_back({"decoder.embed.weight", &decoder->embed.weight, true});
      out.push_back({"decoder.embed.bias", &decoder->embed.bias, true});
      out.push_back({"decoder.mask_token", &decoder->mask_token, true});
      out.push_back({"decoder.position", &decoder->position, true});
      decoder->trunk.collect("decoder.", out);
      out.push_back({"decoder.head.weight", &decoder->head.weight, true});
      out.push_back({"decoder.head.bias", &decoder->head.bias, true});
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor->zero_grad();
  }

  /// Deep copy; the default copy shares parameter storage.
  ClipModel clone() const {
    ClipModel c = *this;
    for (auto& p : c.parameters()) *p.tensor = Tensor<Scalar>::from(p.tensor->shape(), p.tensor->data(), true);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Image side

/// Pixels of `count` images, row-major [count, height, width, channels].
struct ImageBatch {
  Index count = 0;
  Index height = 0;
  Index width = 0;
  Index channels = 3;
  std::vector<float> pixels;
};

/// [B, N, P*P*C] with patches in raster order and each patch flattened as
/// (row, column, channel).
template <typename Scalar>
Tensor<Scalar> patchify(const ImageBatch& images, Index patch) {
  if (patch <= 0 || images.height % patch != 0 || images.width % patch != 0) {
    throw ConfigError("image " + std::to_string(images.height) + "x" + std::to_string(images.width) +
                      " is not divisible into " + std::to_string(patch) + "-pixel patches");
  }
  const Index gh = images.height / patch, gw = images.width / patch, c = images.channels;
  const Index n = gh * gw, pd = patch * patch * c;
  typename Tensor<Scalar>::Array out(images.count * n * pd);
  Index o = 0;
  for (Index b = 0; b < images.count; ++b) {
    for (Index py = 0; py < gh; ++py) {
      for (Index px = 0; px < gw; ++px) {
        for (Index y = 0; y < patch; ++y) {
          const Index row = py * patch + y;
          const float* src = images.pixels.data() + ((b * images.height + row) * images.width + px * patch) * c;
          for (Index k = 0; k < patch * c; ++k) out(o++) = static_cast<Scalar>(src[k]);
        }
      }
    }
  }
  return Tensor<Scalar>::from({images.count, n, pd}, std::move(out));
}

/// Inverse of patchify.
template <typename Scalar>
ImageBatch unpatchify(const Tensor<Scalar>& patches, Index patch, Index height, Index width, Index channels) {
  ImageBatch images;
  images.count = patches.dim(0);
  images.height = height;
  images.width = width;
  images.channels = channels;
  images.pixels.resize(static_cast<std::size_t>(images.count * height * width * channels));
  const Index gw = width / patch;
  Index o = 0;
  for (Index b = 0; b < images.count; ++b) {
    for (Index py = 0; py < height / patch; ++py) {
      for (Index px = 0; px < gw; ++px) {
        for (Index y = 0; y < patch; ++y) {
          float* dst = images.pixels.data() + ((b * height + py * patch + y) * width + px * patch) * channels;
          for (Index k = 0; k < patch * channels; ++k) dst[k] = static_cast<float>(patches.at(o++));
        }
      }
    }
  }
  return images;
}

template <typename Scalar>
struct EncodedSequence {
  Tensor<Scalar> tokens;  // [B*v, width] after the final norm
  Tensor<Scalar> pooled;  // [B, width]
  Index groups = 0;
  std::vector<AttentionProbe<Scalar>> probes;
};

/// Maps pixel values from [0, 1] to [-1, 1] ahead of the patch embedding.
template <typename Scalar>
Tensor<Scalar> center_pixels(const Tensor<Scalar>& x) {
  return add_tiled(scale(x, Scalar(2)), Tensor<Scalar>::full({x.cols()}, Scalar(-1)));
}

/// Encodes only the visible patches. Positional embeddings are taken at the
/// original patch positions, so the visible order inside a sample is free.
template <typename Scalar>
EncodedSequence<Scalar> encode_image(const ImageEncoder<Scalar>& enc, const Tensor<Scalar>& patches, const PatchMask& mask,
                                     bool record_attention = false) {
  const Index b = patches.dim(0), n = patches.dim(1);
  if (n != enc.geometry.num_patches() || patches.dim(2) != enc.geometry.patch_dim()) {
    throw DimensionError("encode_image: patches " + shape_string(patches.shape()) + " do not match the encoder geometry");
  }
  if (mask.batch() != b || mask.num_positions != n) {
    throw DimensionError("encode_image: mask does not match " + shape_string(patches.shape()));
  }
  const Tensor<Scalar> flat = reshape(patches, {b * n, patches.dim(2)});
  Tensor<Scalar> x = enc.patch_embed(center_pixels(gather_rows(flat, mask.flat_visible())));
  x = add(x, embedding(enc.position, mask.visible_positions()));
  EncodedSequence<Scalar> result;
  result.groups = b;
  result.tokens = enc.trunk(x, b, {}, record_attention ? &result.probes : nullptr);
  result.pooled = masked_mean_pool(result.tokens, b, std::vector<std::uint8_t>(static_cast<std::size_t>(result.tokens.rows()), 1));
  return result;
}

/// Reference path over all patches without any gather.
template <typename Scalar>
EncodedSequence<Scalar> encode_image_dense(const ImageEncoder<Scalar>& enc, const Tensor<Scalar>& patches) {
  const Index b = patches.dim(0), n = patches.dim(1);
  if (n != enc.geometry.num_patches() || patches.dim(2) != enc.geometry.patch_dim()) {
    throw DimensionError("encode_image_dense: patches " + shape_string(patches.shape()) +
                         " do not match the encoder geometry");
  }
  Tensor<Scalar> x = enc.patch_embed(center_pixels(reshape(patches, {b * n, patches.dim(2)})));
  x = add_tiled(x, enc.position);
  EncodedSequence<Scalar> result;
  result.groups = b;
  result.tokens = enc.trunk(x, b);
  result.pooled = masked_mean_pool(result.tokens, b, std::vector<std::uint8_t>(static_cast<std::size_t>(b * n), 1));
  return result;
}

// ---------------------------------------------------------------------------
// Text side

/// Encodes visible token positions. Padding never serves as an attention key
/// and is left out of the pooled average; a sample whose visible tokens are
/// all padding pools over what is visible.
template <typename Scalar>
EncodedSequence<Scalar> encode_text(const TextEncoder<Scalar>& enc, const TokenizedBatch& batch, const TextMask& mask,
                                    bool record_attention = false) {
  if (batch.length != enc.geometry.seq_len) {
    throw DimensionError("encode_text: sequence length " + std::to_string(batch.length) + " does not match encoder " +
                         std::to_string(enc.geometry.seq_len));
  }
  if (mask.batch() != batch.size() || mask.num_positions != batch.length) {
    throw DimensionError("encode_text: mask does not match the token batch");
  }
  const Index b = batch.size();
  const Index v = mask.visible_per_sample();
  std::vector<Index> ids, positions;
  std::vector<std::uint8_t> valid;
  ids.reserve(static_cast<std::size_t>(b * v));
  for (Index s = 0; s < b; ++s) {
    const auto& vis = mask.visible[static_cast<std::size_t>(s)];
    if (static_cast<Index>(vis.size()) != v) throw DimensionError("encode_text: ragged visible counts");
    bool any = false;
    for (Index p : vis) {
      ids.push_back(batch.at(s, p));
      positions.push_back(p);
      valid.push_back(batch.is_padding(s, p) ? 0 : 1);
      any = any || valid.back();
    }
    if (!any) std::fill(valid.end() - v, valid.end(), std::uint8_t{1});
  }
  Tensor<Scalar> x = add(embedding(enc.token_embed, ids), embedding(enc.position, positions));
  EncodedSequence<Scalar> result;
  result.groups = b;
  result.tokens = enc.trunk(x, b, valid, record_attention ? &result.probes : nullptr);
  result.pooled = masked_mean_pool(result.tokens, b, valid);
  return result;
}

/// Reference path over all 32 positions.
template <typename Scalar>
EncodedSequence<Scalar> encode_text_dense(const TextEncoder<Scalar>& enc, const TokenizedBatch& batch) {
  const Index b = batch.size(), len = batch.length;
  std::vector<Index> ids(batch.ids.begin(), batch.ids.end());
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(b * len));
  for (Index s = 0; s < b; ++s) {
    bool any = false;
    for (Index p = 0; p < len; ++p) {
      valid[static_cast<std::size_t>(s * len + p)] = batch.is_padding(s, p) ? 0 : 1;
      any = any || !batch.is_padding(s, p);
    }
    if (!any) std::fill_n(valid.begin() + s * len, len, std::uint8_t{1});
  }
  Tensor<Scalar> x = add_tiled(embedding(enc.token_embed, ids), enc.position);
  EncodedSequence<Scalar> result;
  result.groups = b;
  result.tokens = enc.trunk(x, b, valid);
  result.pooled = masked_mean_pool(result.tokens, b, valid);
  return result;
}

}  // namespace flip

#endif  // FLIP_ENCODERS_HPP_
