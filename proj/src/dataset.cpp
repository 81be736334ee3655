#include "flip/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "flip/errors.hpp"
#include "flip/random.hpp"

namespace flip {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'I', 'P', 'D', 'S', '0', '1'};

constexpr std::array<std::array<int, 3>, 4> kPalette = {{
    {220, 40, 40},   // red
    {40, 190, 60},   // green
    {50, 70, 220},   // blue
    {235, 215, 40},  // yellow
}};

// {} is replaced by "<color> <shape>"; small/large templates follow the drawn size.
constexpr std::array<const char*, 6> kCaptionTemplates = {
    "a photo of a {}.",        "a {}",         "an image of a {}.",
    "a {} on a gray background", "a drawing of a {}", "there is a {}",
};

bool inside(int shape, double x, double y, double cx, double cy, double r) {
  const double dx = x - cx, dy = y - cy;
  switch (shape) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case 2: {  // upright triangle, apex at the top
      const double top = cy - r, bottom = cy + 0.8 * r;
      return y >= top && y <= bottom && std::abs(dx) <= 0.62 * (y - top);
    }
    default:  // cross
      return (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r) || (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r);
  }
}

std::string fill_template(const std::string& tmpl, const std::string& value) {
  const auto pos = tmpl.find("{}");
  return tmpl.substr(0, pos) + value + tmpl.substr(pos + 2);
}

}  // namespace

std::vector<std::string> class_names() {
  std::vector<std::string> names;
  for (const char* c : kColors) {
    for (const char* s : kShapes) names.push_back(std::string(c) + " " + s);
  }
  return names;
}

int label_from_caption(const std::string& caption) {
  std::istringstream in(caption);
  std::string word;
  int color = -1, shape = -1;
  while (in >> word) {
    std::string w;
    for (char ch : word) {
      if (std::isalpha(static_cast<unsigned char>(ch))) w.push_back(static_cast<char>(std::tolower(ch)));
    }
    for (int i = 0; i < 4; ++i) {
      if (color < 0 && w == kColors[static_cast<std::size_t>(i)]) color = i;
      if (shape < 0 && w == kShapes[static_cast<std::size_t>(i)]) shape = i;
    }
  }
  return color < 0 || shape < 0 ? -1 : color * 4 + shape;
}

ImageBatch Dataset::images(std::span<const Index> indices) const {
  ImageBatch batch;
  batch.count = static_cast<Index>(indices.size());
  batch.height = height;
  batch.width = width;
  batch.channels = channels;
  const std::size_t per = static_cast<std::size_t>(height) * width * channels;
  batch.pixels.resize(per * indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& px = records.at(static_cast<std::size_t>(indices[i])).pixels;
    std::transform(px.begin(), px.end(), batch.pixels.begin() + static_cast<std::ptrdiff_t>(i * per),
                   [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  }
  return batch;
}

std::vector<std::string> Dataset::captions(std::span<const Index> indices) const {
  std::vector<std::string> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(records.at(static_cast<std::size_t>(i)).caption);
  return out;
}

std::vector<int> Dataset::labels(std::span<const Index> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(label_from_caption(records.at(static_cast<std::size_t>(i)).caption));
  return out;
}

std::vector<Index> Dataset::all_indices() const {
  std::vector<Index> idx(records.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  return idx;
}

Record generate_record(std::uint64_t seed, std::uint64_t index, int* label) {
  constexpr int kSize = 32;
  Rng rng(seed_hash({seed, index, 0xda7a}));
  const int cls = static_cast<int>(rng.below(kNumClasses));
  const int color = cls / 4, shape = cls % 4;
  const double r = rng.uniform(5.0, 11.0);
  const double cx = rng.uniform(r, kSize - r);
  const double cy = rng.uniform(r, kSize - r);
  const double background = rng.uniform(105.0, 150.0);
  std::array<double, 3> tint;
  for (int c = 0; c < 3; ++c) tint[static_cast<std::size_t>(c)] = kPalette[static_cast<std::size_t>(color)][static_cast<std::size_t>(c)] + rng.uniform(-15.0, 15.0);

  Record rec;
  rec.pixels.resize(kSize * kSize * 3);
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      const bool on = inside(shape, x + 0.5, y + 0.5, cx, cy, r);
      for (int c = 0; c < 3; ++c) {
        const double base = on ? tint[static_cast<std::size_t>(c)] : background;
        const double v = base + rng.uniform(-12.0, 12.0);
        rec.pixels[static_cast<std::size_t>((y * kSize + x) * 3 + c)] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }

  const std::string name = std::string(kColors[static_cast<std::size_t>(color)]) + " " + kShapes[static_cast<std::size_t>(shape)];
  const std::size_t t = static_cast<std::size_t>(rng.below(kCaptionTemplates.size() + 1));
  if (t == kCaptionTemplates.size()) {
    rec.caption = std::string(r < 8.0 ? "a small " : "a large ") + name + ".";
  } else {
    rec.caption = fill_template(kCaptionTemplates[t], name);
  }
  if (label) *label = cls;
  return rec;
}

Dataset generate_dataset(Index n, std::uint64_t seed) {
  if (n <= 0) throw ConfigError("dataset size must be positive");
  Dataset data;
  data.records.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) data.records[static_cast<std::size_t>(i)] = generate_record(seed, static_cast<std::uint64_t>(i));
  return data;
}

void write_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.records.size()));
  io::write_le<std::uint16_t>(out, data.height);
  io::write_le<std::uint16_t>(out, data.width);
  io::write_le<std::uint8_t>(out, data.channels);
  const std::size_t per = static_cast<std::size_t>(data.height) * data.width * data.channels;
  for (const auto& rec : data.records) {
    if (rec.pixels.size() != per) throw IoError("record image size does not match the dataset header");
    if (rec.caption.empty() || rec.caption.size() > 0xffff) throw IoError("caption must be 1..65535 bytes");
    out.write(reinterpret_cast<const char*>(rec.pixels.data()), static_cast<std::streamsize>(per));
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(rec.caption.size()));
    out.write(rec.caption.data(), static_cast<std::streamsize>(rec.caption.size()));
  }
  if (!out) throw IoError("failed writing " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path);
  char magic[8];
  io::read_exact(in, magic, sizeof(magic), "dataset magic");
  if (!std::equal(magic, magic + 8, kMagic)) throw IoError(path + " is not a FLIPDS01 dataset");
  Dataset data;
  const auto count = io::read_le<std::uint32_t>(in, "record count");
  data.height = io::read_le<std::uint16_t>(in, "height");
  data.width = io::read_le<std::uint16_t>(in, "width");
  data.channels = io::read_le<std::uint8_t>(in, "channels");
  const std::size_t per = static_cast<std::size_t>(data.height) * data.width * data.channels;
  data.records.resize(count);
  for (auto& rec : data.records) {
    rec.pixels.resize(per);
    io::read_exact(in, rec.pixels.data(), per, "image bytes");
    const auto len = io::read_le<std::uint16_t>(in, "caption length");
    if (len == 0) throw IoError(path + ": empty caption");
    rec.caption.resize(len);
    io::read_exact(in, rec.caption.data(), len, "caption");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path + ": trailing bytes after the last record");
  return data;
}

}  // namespace flip
