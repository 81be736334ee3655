#include "flip/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "flip/errors.hpp"

namespace flip {

namespace {

// Length in bytes of the UTF-8 sequence starting with `lead`.
std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

std::vector<std::size_t> codepoint_boundaries(std::string_view word) {
  std::vector<std::size_t> cuts;
  std::size_t i = 0;
  while (i < word.size()) {
    cuts.push_back(i);
    i = std::min(word.size(), i + utf8_length(static_cast<unsigned char>(word[i])));
  }
  cuts.push_back(word.size());
  return cuts;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) throw ConfigError("vocabulary needs at least the padding and unknown entries");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw ConfigError("vocabulary entry '" + tokens_[i] + "' appears twice");
    }
  }
}

Vocabulary Vocabulary::desk() {
  std::vector<std::string> tokens = {"[PAD]", "[UNK]"};
  const char* words[] = {
      "a",       "an",       "the",     "of",      "on",       "in",        "with",     "is",      "that",
      "this",    "there",    "photo",   "image",   "picture",  "drawing",   "rendering", "sketch", "shape",
      "shapes",  "object",   "small",   "large",   "big",      "little",    "bright",   "dark",    "gray",
      "grey",    "background", "noisy", "colored", "colour",   "color",     "centered", "red",     "green",
      "blue",    "yellow",   "circle",  "square",  "triangle", "cross",     "disk",     "box",     "plus",
      "sign",    "one",      "single",  "simple",  "clean",    "good",      "close",    "up",      "view",
      "it",      "has",      "and",     "at",      "to",       "for",       "my",       "some",    "white",
      "black",   "orange",   "purple",  "pink",    "brown",    "star",      "line",     "dot",     "ring",
  };
  for (const char* w : words) tokens.emplace_back(w);
  const char* suffixes[] = {"##s", "##ed", "##ing", "##er", "##ly", "##es"};
  for (const char* s : suffixes) tokens.emplace_back(s);
  // Single-character fallback, whole-word and continuation forms.
  const std::string singles = "abcdefghijklmnopqrstuvwxyz0123456789.,!?'-:;()\"";
  auto add = [&](const std::string& piece) {
    if (std::find(tokens.begin(), tokens.end(), piece) == tokens.end()) tokens.push_back(piece);
  };
  for (char c : singles) add(std::string(1, c));
  for (char c : singles) add("##" + std::string(1, c));
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("failed writing vocabulary file " + path);
}

std::int32_t Vocabulary::find(std::string_view piece) const {
  auto it = ids_.find(std::string(piece));
  return it == ids_.end() ? -1 : it->second;
}

std::vector<std::int32_t> Tokenizer::pieces(std::string_view text) const {
  std::string lowered(text);
  for (char& c : lowered) {
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }

  std::vector<std::int32_t> out;
  std::size_t pos = 0;
  while (pos < lowered.size()) {
    while (pos < lowered.size() && std::isspace(static_cast<unsigned char>(lowered[pos]))) ++pos;
    std::size_t end = pos;
    while (end < lowered.size() && !std::isspace(static_cast<unsigned char>(lowered[end]))) ++end;
    if (end == pos) break;
    const std::string_view word(lowered.data() + pos, end - pos);
    const auto cuts = codepoint_boundaries(word);

    std::size_t start = 0;  // index into cuts
    while (start + 1 < cuts.size()) {
      std::int32_t match = -1;
      std::size_t stop = cuts.size() - 1;
      for (; stop > start; --stop) {
        std::string candidate = start == 0 ? "" : "##";
        candidate.append(word.substr(cuts[start], cuts[stop] - cuts[start]));
        match = vocab_.find(candidate);
        if (match >= 0) break;
      }
      if (match < 0) {
        out.push_back(kUnkId);
        ++start;
      } else {
        out.push_back(match);
        start = stop;
      }
    }
    pos = end;
  }
  return out;
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::int32_t> ids = pieces(text);
  ids.resize(static_cast<std::size_t>(length_), kPadId);
  return ids;
}

TokenizedBatch Tokenizer::encode_batch(const std::vector<std::string>& captions) const {
  TokenizedBatch batch;
  batch.length = length_;
  batch.ids.reserve(captions.size() * static_cast<std::size_t>(length_));
  for (const auto& c : captions) {
    std::vector<std::int32_t> ids = pieces(c);
    batch.valid_lengths.push_back(std::min<Index>(static_cast<Index>(ids.size()), length_));
    ids.resize(static_cast<std::size_t>(length_), kPadId);
    batch.ids.insert(batch.ids.end(), ids.begin(), ids.end());
  }
  return batch;
}

}  // namespace flip
