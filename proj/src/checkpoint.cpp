#include "flip/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "binary_io.hpp"
#include "flip/errors.hpp"

namespace flip {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'I', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kPresetPrefix = "meta.preset.";
constexpr const char* kCounters = "state.counters";
// Counters are stored as (high, low) float pairs split at 2^24 so that every
// part is an exactly representable integer.
constexpr std::int64_t kSplit = std::int64_t{1} << 24;

NamedTensor from_array(std::string name, const Shape& shape, const Eigen::ArrayXf& values) {
  NamedTensor t;
  t.name = std::move(name);
  for (Index d : shape) t.dims.push_back(static_cast<std::uint32_t>(d));
  t.values.assign(values.data(), values.data() + values.size());
  return t;
}

void copy_into(const NamedTensor& src, Eigen::ArrayXf& dst, const std::string& what) {
  if (static_cast<Index>(src.values.size()) != dst.size()) {
    throw IoError("checkpoint tensor " + src.name + " has " + std::to_string(src.values.size()) +
                  " values, expected " + std::to_string(dst.size()) + " for " + what);
  }
  dst = Eigen::Map<const Eigen::ArrayXf>(src.values.data(), dst.size());
}

}  // namespace

void write_tensor_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  io::write_le<std::uint32_t>(out, kVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff) throw IoError("tensor name too long: " + t.name.substr(0, 32));
    if (t.dims.size() > 0xff) throw IoError("too many dimensions in " + t.name);
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.values.size()) throw IoError("tensor " + t.name + " values do not match its dims");
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) io::write_le<std::uint32_t>(out, d);
    for (float v : t.values) io::write_le<float>(out, v);
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<NamedTensor> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  io::read_exact(in, magic, sizeof(magic), "checkpoint magic");
  if (!std::equal(magic, magic + 8, kMagic)) throw IoError(path + " is not a FLIPCKPT file");
  const auto version = io::read_le<std::uint32_t>(in, "version");
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = io::read_le<std::uint32_t>(in, "tensor count");
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    const auto len = io::read_le<std::uint16_t>(in, "name length");
    t.name.resize(len);
    io::read_exact(in, t.name.data(), len, "tensor name");
    const auto ndim = io::read_le<std::uint8_t>(in, "ndim");
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < ndim; ++i) {
      t.dims.push_back(io::read_le<std::uint32_t>(in, "dims"));
      n *= t.dims.back();
    }
    t.values.resize(n);
    for (auto& v : t.values) v = io::read_le<float>(in, "tensor data of " + t.name);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path + ": trailing bytes after the last tensor");
  return tensors;
}

std::vector<NamedTensor> state_to_tensors(TrainState& state) {
  std::vector<NamedTensor> out;
  out.push_back({std::string(kPresetPrefix) + state.model.config.name, {1}, {0.0f}});
  const std::int64_t counters[4] = {state.step, state.samples_seen, state.schedule_origin, state.optimizer_steps};
  NamedTensor c{kCounters, {4, 2}, {}};
  for (auto v : counters) {
    if (v < 0 || v >= kSplit * kSplit) throw IoError("counter out of checkpoint range");
    c.values.push_back(static_cast<float>(v / kSplit));
    c.values.push_back(static_cast<float>(v % kSplit));
  }
  out.push_back(std::move(c));
  auto params = state.model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    out.push_back(from_array(p.name, p.tensor->shape(), p.tensor->data()));
    out.push_back(from_array("adam.m." + p.name, p.tensor->shape(), state.first_moment.at(i)));
    out.push_back(from_array("adam.v." + p.name, p.tensor->shape(), state.second_moment.at(i)));
  }
  return out;
}

TrainState state_from_tensors(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  std::string preset;
  for (const auto& t : tensors) {
    if (!by_name.emplace(t.name, &t).second) throw IoError("duplicate checkpoint tensor " + t.name);
    if (t.name.rfind(kPresetPrefix, 0) == 0) preset = t.name.substr(std::string(kPresetPrefix).size());
  }
  if (preset.empty()) throw IoError("checkpoint does not name its encoder preset");
  const bool with_decoder = by_name.count("decoder.embed.weight") > 0;

  TrainState state;
  state.model = Model::init(EncoderConfig::preset(preset), 0, with_decoder);
  state.reset_moments();
  auto params = state.model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    auto find = [&](const std::string& name) -> const NamedTensor& {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw IoError("checkpoint is missing tensor " + name);
      return *it->second;
    };
    const NamedTensor& value = find(p.name);
    Shape shape(value.dims.begin(), value.dims.end());
    if (shape != p.tensor->shape()) {
      throw IoError("checkpoint tensor " + p.name + " has shape " + shape_string(shape) + ", expected " +
                    shape_string(p.tensor->shape()));
    }
    copy_into(value, p.tensor->data(), p.name);
    copy_into(find("adam.m." + p.name), state.first_moment[i], p.name);
    copy_into(find("adam.v." + p.name), state.second_moment[i], p.name);
  }
  auto it = by_name.find(kCounters);
  if (it == by_name.end() || it->second->values.size() != 8) throw IoError("checkpoint is missing step counters");
  const auto& v = it->second->values;
  auto counter = [&](std::size_t k) {
    return static_cast<std::int64_t>(v[2 * k]) * kSplit + static_cast<std::int64_t>(v[2 * k + 1]);
  };
  state.step = counter(0);
  state.samples_seen = counter(1);
  state.schedule_origin = counter(2);
  state.optimizer_steps = counter(3);
  return state;
}

void save_checkpoint(TrainState& state, const std::string& path) { write_tensor_file(path, state_to_tensors(state)); }

TrainState load_checkpoint(const std::string& path) { return state_from_tensors(read_tensor_file(path)); }

}  // namespace flip
