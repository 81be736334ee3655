#ifndef FLIP_FLOPS_HPP_
#define FLIP_FLOPS_HPP_

#include <string>

#include "flip/config.hpp"

namespace flip {

/// Forward FLOPs per sample, a multiply-accumulate counted as two.
struct FlopReport {
  double image_flops = 0.0;
  double text_flops = 0.0;
  double total_flops = 0.0;
  double ratio_vs_unmasked = 1.0;
  double text_fraction = 0.0;

  std::string to_json() const;
  static FlopReport from_json(const std::string& text);
};

/// One transformer layer over v tokens of width d: projections 8vd^2,
/// MLP 16vd^2, attention matmuls 4v^2d.
double transformer_layer_flops(double tokens, double width);

/// Image tower alone: patch embedding, trunk on the visible patches and the
/// output projection.
double image_tower_flops(const EncoderConfig& config, double mask_ratio);
/// Text tower alone; token lookup is free.
double text_tower_flops(const EncoderConfig& config, double text_mask_ratio);

FlopReport count_flops(const EncoderConfig& config, double mask_ratio, double text_mask_ratio = 0.0);

}  // namespace flip

#endif  // FLIP_FLOPS_HPP_
