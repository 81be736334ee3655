#ifndef FLIP_CHECKPOINT_HPP_
#define FLIP_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "flip/config.hpp"
#include "flip/trainer.hpp"

namespace flip {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

/// Tensor file, little-endian: "FLIPCKPT", version u32, count u32, then per
/// tensor a u16 name length, UTF-8 name, u8 ndim, u32 dims and f32 data.
void write_tensor_file(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_file(const std::string& path);

/// Parameters, AdamW moments ("adam.m.*", "adam.v.*"), step counters
/// ("state.counters") and the preset name ("meta.preset.<name>").
std::vector<NamedTensor> state_to_tensors(TrainState& state);
TrainState state_from_tensors(const std::vector<NamedTensor>& tensors);

void save_checkpoint(TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace flip

#endif  // FLIP_CHECKPOINT_HPP_
