#ifndef FLIP_DATASET_HPP_
#define FLIP_DATASET_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flip/encoders.hpp"

namespace flip {

inline constexpr std::array<const char*, 4> kColors = {"red", "green", "blue", "yellow"};
inline constexpr std::array<const char*, 4> kShapes = {"circle", "square", "triangle", "cross"};
inline constexpr int kNumClasses = 16;

/// Class names "<color> <shape>", class id = color * 4 + shape.
std::vector<std::string> class_names();
/// Class id from the first color and shape words in a caption, or -1.
int label_from_caption(const std::string& caption);

struct Record {
  std::vector<std::uint8_t> pixels;  // row-major RGB
  std::string caption;
};

/// In-memory image/caption pairs with the geometry of the binary format.
struct Dataset {
  std::uint16_t height = 32;
  std::uint16_t width = 32;
  std::uint8_t channels = 3;
  std::vector<Record> records;

  Index size() const { return static_cast<Index>(records.size()); }
  ImageBatch images(std::span<const Index> indices) const;
  std::vector<std::string> captions(std::span<const Index> indices) const;
  std::vector<int> labels(std::span<const Index> indices) const;
  std::vector<Index> all_indices() const;
};

/// Deterministic record for (seed, index): one colored shape at a random
/// position and size on a noisy gray background.
Record generate_record(std::uint64_t seed, std::uint64_t index, int* label = nullptr);
Dataset generate_dataset(Index n, std::uint64_t seed);

/// Binary layout, little-endian: "FLIPDS01", count u32, height u16,
/// width u16, channels u8, then per record the image bytes, caption length
/// u16 and UTF-8 caption.
void write_dataset(const Dataset& data, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace flip

#endif  // FLIP_DATASET_HPP_
