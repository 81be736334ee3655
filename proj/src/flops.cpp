#include "flip/flops.hpp"

#include <json.hpp>

#include "flip/errors.hpp"
#include "flip/masking.hpp"

namespace flip {

double transformer_layer_flops(double v, double d) { return 8.0 * v * d * d + 16.0 * v * d * d + 4.0 * v * v * d; }

double image_tower_flops(const EncoderConfig& c, double mask_ratio) {
  const auto& g = c.image;
  const double v = static_cast<double>(visible_count(g.num_patches(), mask_ratio));
  const double d = static_cast<double>(g.width);
  return 2.0 * v * static_cast<double>(g.patch_dim()) * d + static_cast<double>(g.layers) * transformer_layer_flops(v, d) +
         2.0 * d * static_cast<double>(c.embed_dim);
}

double text_tower_flops(const EncoderConfig& c, double text_mask_ratio) {
  const auto& g = c.text;
  const double v = static_cast<double>(visible_count(g.seq_len, text_mask_ratio));
  const double d = static_cast<double>(g.width);
  return static_cast<double>(g.layers) * transformer_layer_flops(v, d) + 2.0 * d * static_cast<double>(c.embed_dim);
}

FlopReport count_flops(const EncoderConfig& config, double mask_ratio, double text_mask_ratio) {
  config.validate();
  FlopReport r;
  r.image_flops = image_tower_flops(config, mask_ratio);
  r.text_flops = text_tower_flops(config, text_mask_ratio);
  r.total_flops = r.image_flops + r.text_flops;
  const double unmasked = image_tower_flops(config, 0.0) + text_tower_flops(config, 0.0);
  r.ratio_vs_unmasked = r.total_flops / unmasked;
  r.text_fraction = r.text_flops / r.total_flops;
  return r;
}

std::string FlopReport::to_json() const {
  nlohmann::ordered_json j;
  j["image_flops"] = image_flops;
  j["text_flops"] = text_flops;
  j["total_flops"] = total_flops;
  j["ratio_vs_unmasked"] = ratio_vs_unmasked;
  j["text_fraction"] = text_fraction;
  return j.dump();
}

FlopReport FlopReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    FlopReport r;
    r.image_flops = j.at("image_flops").get<double>();
    r.text_flops = j.at("text_flops").get<double>();
    r.total_flops = j.at("total_flops").get<double>();
    r.ratio_vs_unmasked = j.at("ratio_vs_unmasked").get<double>();
    r.text_fraction = j.at("text_fraction").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed FLOP report: ") + e.what());
  }
}

}  // namespace flip
