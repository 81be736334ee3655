#ifndef FLIP_MASKING_HPP_
#define FLIP_MASKING_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flip/tensor.hpp"
#include "flip/tokenizer.hpp"

namespace flip {

/// round((1 - ratio) * n) with ties to even.
Index visible_count(Index n, double ratio);

/// Per-sample split of sequence positions into visible and hidden sets.
/// Both lists are sorted ascending; every sample has the same visible count.
struct PatchMask {
  double ratio = 0.0;
  Index num_positions = 0;
  std::vector<std::vector<Index>> visible;
  std::vector<std::vector<Index>> hidden;

  Index batch() const { return static_cast<Index>(visible.size()); }
  Index visible_per_sample() const { return visible.empty() ? num_positions : static_cast<Index>(visible[0].size()); }
  /// Visible rows of a flattened [batch*num_positions, ...] tensor.
  std::vector<Index> flat_visible() const;
  std::vector<Index> flat_hidden() const;
  /// Original position of every visible row, sample-major.
  std::vector<Index> visible_positions() const;

  /// Every position visible for every sample.
  static PatchMask full(Index batch, Index num_positions);
};

enum class TextMaskPolicy { kNone, kRandom, kPrioritized };

TextMaskPolicy parse_text_mask_policy(const std::string& name);
std::string to_string(TextMaskPolicy policy);

struct TextMask : PatchMask {
  TextMaskPolicy policy = TextMaskPolicy::kNone;
};

/// One uniform shuffle per sample, seeded by `sample_seeds[b]`.
PatchMask sample_patch_mask(Index num_patches, double ratio, std::span<const std::uint64_t> sample_seeds);

/// Random policy masks uniformly over all positions; prioritized policy
/// masks padding positions first and draws the remainder from valid tokens.
TextMask sample_text_mask(const TokenizedBatch& batch, double ratio, TextMaskPolicy policy,
                          std::span<const std::uint64_t> sample_seeds);

/// k = 1/(1-ratio) disjoint visible sets per sample that together cover
/// every position once.
std::vector<PatchMask> complementary_views(Index num_patches, double ratio, std::span<const std::uint64_t> sample_seeds);

}  // namespace flip

#endif  // FLIP_MASKING_HPP_
