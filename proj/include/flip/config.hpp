#ifndef FLIP_CONFIG_HPP_
#define FLIP_CONFIG_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flip/masking.hpp"
#include "flip/tensor.hpp"

namespace flip {

struct ImageGeometry {
  Index layers = 0;
  Index width = 0;
  Index heads = 0;
  Index patch_size = 0;
  Index image_size = 0;
  Index channels = 3;

  Index grid() const { return image_size / patch_size; }
  Index num_patches() const { return grid() * grid(); }
  Index patch_dim() const { return patch_size * patch_size * channels; }
};

struct TextGeometry {
  Index layers = 0;
  Index width = 0;
  Index heads = 0;
  Index seq_len = kTextLength;
  Index vocab_size = 0;
};

struct EncoderConfig {
  std::string name;
  ImageGeometry image;
  TextGeometry text;
  Index embed_dim = 0;
  Index decoder_layers = 2;

  /// Reconstruction decoder runs at half the image width.
  Index decoder_width() const { return image.width / 2; }
  Index decoder_heads() const { return std::max<Index>(1, image.heads / 2); }

  /// Throws ConfigError when the geometry is inconsistent.
  void validate() const;

  /// "tiny", "small", "B-like", "L-like" or "H-like".
  static EncoderConfig preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

struct TextMaskConfig {
  TextMaskPolicy policy = TextMaskPolicy::kNone;
  double ratio = 0.0;
};

/// Optimization and data settings. Field names double as config-file keys.
struct TrainConfig {
  std::string preset = "tiny";
  double base_lr = 1e-4;  // per 256 samples
  Index batch_size = 64;
  double weight_decay = 0.2;
  std::array<double, 2> betas{0.9, 0.95};
  std::int64_t warmup_samples = 12800;
  std::int64_t total_samples = 128000;
  double mask_ratio = 0.5;
  TextMaskConfig text_mask;
  double lambda_rec = 0.0;
  std::uint64_t seed = 0;

  // data
  std::string train_data;
  std::int64_t train_size = 8000;
  std::string eval_data;
  std::int64_t eval_size = 2000;
  std::uint64_t data_seed = 1;
  std::int64_t eval_every = 0;  // samples between curve points; 0 disables

  double tune_fraction = 0.05;

  /// Throws ConfigError on violated invariants.
  void validate() const;
  EncoderConfig encoder() const { return EncoderConfig::preset(preset); }

  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);
  std::string to_string() const;
  void save(const std::string& path) const;
  /// Applies one key = value assignment.
  void set(const std::string& key, const std::string& value);
};

}  // namespace flip

#endif  // FLIP_CONFIG_HPP_
