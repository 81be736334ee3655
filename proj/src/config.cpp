#include "flip/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "flip/errors.hpp"

namespace flip {

void EncoderConfig::validate() const {
  if (image.patch_size <= 0 || image.image_size % image.patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image.image_size) + " is not divisible by patch size " +
                      std::to_string(image.patch_size));
  }
  if (image.heads <= 0 || image.width % image.heads != 0) {
    throw ConfigError("image width " + std::to_string(image.width) + " is not divisible by " +
                      std::to_string(image.heads) + " heads");
  }
  if (text.heads <= 0 || text.width % text.heads != 0) {
    throw ConfigError("text width " + std::to_string(text.width) + " is not divisible by " +
                      std::to_string(text.heads) + " heads");
  }
  if (decoder_width() % decoder_heads() != 0) throw ConfigError("decoder width not divisible by decoder heads");
  if (image.layers <= 0 || text.layers <= 0 || embed_dim <= 0 || text.vocab_size < 2 || text.seq_len <= 0) {
    throw ConfigError("encoder geometry must be positive");
  }
}

EncoderConfig EncoderConfig::preset(const std::string& name) {
  const Index desk_vocab = Vocabulary::desk().size();
  const Index wordpiece_vocab = 30522;
  EncoderConfig c;
  c.name = name;
  if (name == "tiny") {
    c.image = {4, 64, 4, 8, 32, 3};
    c.text = {2, 64, 4, kTextLength, desk_vocab};
    c.embed_dim = 64;
  } else if (name == "small") {
    c.image = {6, 96, 4, 8, 32, 3};
    c.text = {3, 96, 4, kTextLength, desk_vocab};
    c.embed_dim = 96;
  } else if (name == "B-like") {
    c.image = {12, 768, 12, 16, 224, 3};
    c.text = {12, 512, 8, kTextLength, wordpiece_vocab};
    c.embed_dim = 512;
  } else if (name == "L-like") {
    c.image = {24, 1024, 16, 16, 224, 3};
    c.text = {12, 768, 12, kTextLength, wordpiece_vocab};
    c.embed_dim = 768;
  } else if (name == "H-like") {
    c.image = {32, 1280, 16, 14, 224, 3};
    c.text = {24, 1024, 16, kTextLength, wordpiece_vocab};
    c.embed_dim = 1024;
  } else {
    throw ConfigError("unknown encoder preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> EncoderConfig::preset_names() { return {"tiny", "small", "B-like", "L-like", "H-like"}; }

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (contrastive negatives)");
  if (warmup_samples < 0 || total_samples < warmup_samples) {
    throw ConfigError("total_samples must be at least warmup_samples");
  }
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in [0, 1)");
  if (text_mask.policy != TextMaskPolicy::kNone && !(text_mask.ratio >= 0.0 && text_mask.ratio < 1.0)) {
    throw ConfigError("text mask ratio must lie in [0, 1)");
  }
  if (base_lr < 0.0 || weight_decay < 0.0 || lambda_rec < 0.0) throw ConfigError("negative optimizer setting");
  if (train_data.empty() && train_size < batch_size) throw ConfigError("train_size smaller than one batch");
  if (tune_fraction < 0.0) throw ConfigError("tune_fraction must be non-negative");
  encoder().validate();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

template <typename Int>
Int to_int(const std::string& key, const std::string& value) {
  Int v{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    // accept integral values in exponent notation such as 1.28e5
    const double d = to_double(key, value);
    if (d != static_cast<double>(static_cast<Int>(d))) {
      throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
    }
    return static_cast<Int>(d);
  }
  return v;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "preset") {
    preset = value;
  } else if (key == "base_lr") {
    base_lr = to_double(key, value);
  } else if (key == "batch_size") {
    batch_size = to_int<Index>(key, value);
  } else if (key == "weight_decay") {
    weight_decay = to_double(key, value);
  } else if (key == "betas") {
    const auto comma = value.find(',');
    if (comma == std::string::npos) throw ConfigError("betas expects two comma-separated values");
    betas = {to_double(key, trim(value.substr(0, comma))), to_double(key, trim(value.substr(comma + 1)))};
  } else if (key == "warmup_samples") {
    warmup_samples = to_int<std::int64_t>(key, value);
  } else if (key == "total_samples") {
    total_samples = to_int<std::int64_t>(key, value);
  } else if (key == "mask_ratio") {
    mask_ratio = to_double(key, value);
  } else if (key == "text_mask") {
    // "none", or "<policy>:<ratio>"
    const auto colon = value.find(':');
    text_mask.policy = parse_text_mask_policy(trim(value.substr(0, colon)));
    text_mask.ratio = colon == std::string::npos ? 0.0 : to_double(key, trim(value.substr(colon + 1)));
  } else if (key == "lambda_rec") {
    lambda_rec = to_double(key, value);
  } else if (key == "seed") {
    seed = to_int<std::uint64_t>(key, value);
  } else if (key == "train_data") {
    train_data = value;
  } else if (key == "train_size") {
    train_size = to_int<std::int64_t>(key, value);
  } else if (key == "eval_data") {
    eval_data = value;
  } else if (key == "eval_size") {
    eval_size = to_int<std::int64_t>(key, value);
  } else if (key == "data_seed") {
    data_seed = to_int<std::uint64_t>(key, value);
  } else if (key == "eval_every") {
    eval_every = to_int<std::int64_t>(key, value);
  } else if (key == "tune_fraction") {
    tune_fraction = to_double(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  config.validate();
  return config;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

std::string TrainConfig::to_string() const {
  std::ostringstream os;
  os << "preset = " << preset << '\n'
     << "base_lr = " << format_double(base_lr) << '\n'
     << "batch_size = " << batch_size << '\n'
     << "weight_decay = " << format_double(weight_decay) << '\n'
     << "betas = " << format_double(betas[0]) << ", " << format_double(betas[1]) << '\n'
     << "warmup_samples = " << warmup_samples << '\n'
     << "total_samples = " << total_samples << '\n'
     << "mask_ratio = " << format_double(mask_ratio) << '\n'
     << "text_mask = " << flip::to_string(text_mask.policy);
  if (text_mask.policy != TextMaskPolicy::kNone) os << ':' << format_double(text_mask.ratio);
  os << '\n'
     << "lambda_rec = " << format_double(lambda_rec) << '\n'
     << "seed = " << seed << '\n';
  if (!train_data.empty()) os << "train_data = " << train_data << '\n';
  os << "train_size = " << train_size << '\n';
  if (!eval_data.empty()) os << "eval_data = " << eval_data << '\n';
  os << "eval_size = " << eval_size << '\n'
     << "data_seed = " << data_seed << '\n'
     << "eval_every = " << eval_every << '\n'
     << "tune_fraction = " << format_double(tune_fraction) << '\n';
  return os.str();
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config file " + path);
  out << to_string();
  if (!out) throw IoError("failed writing config file " + path);
}

}  // namespace flip
