#include "flip/masking.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <numeric>

#include "flip/errors.hpp"
#include "flip/random.hpp"

namespace flip {

Index visible_count(Index n, double ratio) {
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double v = std::nearbyint((1.0 - ratio) * static_cast<double>(n));
  std::fesetround(saved);
  return static_cast<Index>(v);
}

std::vector<Index> PatchMask::flat_visible() const {
  std::vector<Index> out;
  for (Index b = 0; b < batch(); ++b) {
    for (Index p : visible[static_cast<std::size_t>(b)]) out.push_back(b * num_positions + p);
  }
  return out;
}

std::vector<Index> PatchMask::flat_hidden() const {
  std::vector<Index> out;
  for (Index b = 0; b < batch(); ++b) {
    for (Index p : hidden[static_cast<std::size_t>(b)]) out.push_back(b * num_positions + p);
  }
  return out;
}

std::vector<Index> PatchMask::visible_positions() const {
  std::vector<Index> out;
  for (const auto& v : visible) out.insert(out.end(), v.begin(), v.end());
  return out;
}

PatchMask PatchMask::full(Index batch, Index num_positions) {
  PatchMask mask;
  mask.num_positions = num_positions;
  std::vector<Index> all(static_cast<std::size_t>(num_positions));
  std::iota(all.begin(), all.end(), Index{0});
  mask.visible.assign(static_cast<std::size_t>(batch), all);
  mask.hidden.assign(static_cast<std::size_t>(batch), {});
  return mask;
}

TextMaskPolicy parse_text_mask_policy(const std::string& name) {
  if (name == "none") return TextMaskPolicy::kNone;
  if (name == "random") return TextMaskPolicy::kRandom;
  if (name == "prioritized") return TextMaskPolicy::kPrioritized;
  throw ConfigError("unknown text mask policy '" + name + "' (expected none, random or prioritized)");
}

std::string to_string(TextMaskPolicy policy) {
  switch (policy) {
    case TextMaskPolicy::kNone:
      return "none";
    case TextMaskPolicy::kRandom:
      return "random";
    case TextMaskPolicy::kPrioritized:
      return "prioritized";
  }
  return "none";
}

namespace {

void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError("mask ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
}

void split_sorted(std::vector<Index> order, Index keep, std::vector<Index>& visible, std::vector<Index>& hidden) {
  visible.assign(order.begin(), order.begin() + keep);
  hidden.assign(order.begin() + keep, order.end());
  std::sort(visible.begin(), visible.end());
  std::sort(hidden.begin(), hidden.end());
}

}  // namespace

PatchMask sample_patch_mask(Index num_patches, double ratio, std::span<const std::uint64_t> sample_seeds) {
  check_ratio(ratio);
  PatchMask mask;
  mask.ratio = ratio;
  mask.num_positions = num_patches;
  const Index keep = visible_count(num_patches, ratio);
  mask.visible.resize(sample_seeds.size());
  mask.hidden.resize(sample_seeds.size());
  std::vector<Index> order(static_cast<std::size_t>(num_patches));
  for (std::size_t b = 0; b < sample_seeds.size(); ++b) {
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(sample_seeds[b]);
    rng.shuffle(order);
    split_sorted(order, keep, mask.visible[b], mask.hidden[b]);
  }
  return mask;
}

TextMask sample_text_mask(const TokenizedBatch& batch, double ratio, TextMaskPolicy policy,
                          std::span<const std::uint64_t> sample_seeds) {
  if (static_cast<Index>(sample_seeds.size()) != batch.size()) {
    throw ConfigError("sample_text_mask: one seed per caption required");
  }
  TextMask mask;
  mask.policy = policy;
  mask.num_positions = batch.length;
  if (policy == TextMaskPolicy::kNone) {
    static_cast<PatchMask&>(mask) = PatchMask::full(batch.size(), batch.length);
    mask.policy = policy;
    return mask;
  }
  check_ratio(ratio);
  mask.ratio = ratio;
  const Index keep = visible_count(batch.length, ratio);
  const Index drop = batch.length - keep;
  mask.visible.resize(sample_seeds.size());
  mask.hidden.resize(sample_seeds.size());
  for (Index b = 0; b < batch.size(); ++b) {
    Rng rng(sample_seeds[static_cast<std::size_t>(b)]);
    std::vector<Index> order;
    if (policy == TextMaskPolicy::kRandom) {
      order.resize(static_cast<std::size_t>(batch.length));
      std::iota(order.begin(), order.end(), Index{0});
      rng.shuffle(order);
      // order lists kept positions first
    } else {
      std::vector<Index> pads, valid;
      for (Index p = 0; p < batch.length; ++p) (batch.is_padding(b, p) ? pads : valid).push_back(p);
      rng.shuffle(pads);
      rng.shuffle(valid);
      // Masked positions go to the back: all pads first, then valid tokens.
      std::vector<Index> masked;
      for (Index p : pads) {
        if (static_cast<Index>(masked.size()) == drop) break;
        masked.push_back(p);
      }
      std::vector<Index> survivors;
      for (std::size_t i = static_cast<std::size_t>(masked.size()); i < pads.size(); ++i) survivors.push_back(pads[i]);
      std::size_t vi = 0;
      while (static_cast<Index>(masked.size()) < drop) masked.push_back(valid[vi++]);
      for (; vi < valid.size(); ++vi) survivors.push_back(valid[vi]);
      order = survivors;
      order.insert(order.end(), masked.begin(), masked.end());
    }
    split_sorted(order, keep, mask.visible[static_cast<std::size_t>(b)], mask.hidden[static_cast<std::size_t>(b)]);
  }
  return mask;
}

std::vector<PatchMask> complementary_views(Index num_patches, double ratio, std::span<const std::uint64_t> sample_seeds) {
  check_ratio(ratio);
  const double k_real = 1.0 / (1.0 - ratio);
  const Index k = static_cast<Index>(std::llround(k_real));
  if (std::abs(k_real - static_cast<double>(k)) > 1e-9) {
    throw ConfigError("complementary views need 1/(1-ratio) to be an integer, got " + std::to_string(k_real));
  }
  if (num_patches % k != 0) {
    throw ConfigError(std::to_string(num_patches) + " patches do not split into " + std::to_string(k) + " equal views");
  }
  const Index per_view = num_patches / k;
  std::vector<PatchMask> views(static_cast<std::size_t>(k));
  for (auto& v : views) {
    v.ratio = ratio;
    v.num_positions = num_patches;
    v.visible.resize(sample_seeds.size());
    v.hidden.resize(sample_seeds.size());
  }
  std::vector<Index> order(static_cast<std::size_t>(num_patches));
  for (std::size_t b = 0; b < sample_seeds.size(); ++b) {
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(sample_seeds[b]);
    rng.shuffle(order);
    for (Index view = 0; view < k; ++view) {
      // rotate so that this view's block comes first
      std::vector<Index> rotated(order.begin() + view * per_view, order.end());
      rotated.insert(rotated.end(), order.begin(), order.begin() + view * per_view);
      split_sorted(rotated, per_view, views[static_cast<std::size_t>(view)].visible[b],
                   views[static_cast<std::size_t>(view)].hidden[b]);
    }
  }
  return views;
}

}  // namespace flip
