#ifndef FLIP_TOKENIZER_HPP_
#define FLIP_TOKENIZER_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flip/tensor.hpp"

namespace flip {

inline constexpr Index kTextLength = 32;
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

/// Subword vocabulary. Line/entry i is token id i; entry 0 is the padding
/// token and entry 1 the unknown token. Continuation pieces carry a "##" prefix.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Built-in vocabulary covering the synthetic caption domain plus a
  /// single-character ASCII fallback.
  static Vocabulary desk();
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  /// Id of `piece`, or -1.
  std::int32_t find(std::string_view piece) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Fixed-length token ids for a batch of captions, row-major [size, length].
struct TokenizedBatch {
  std::vector<std::int32_t> ids;
  std::vector<Index> valid_lengths;
  Index length = kTextLength;
  std::int32_t pad_id = kPadId;

  Index size() const { return static_cast<Index>(valid_lengths.size()); }
  std::int32_t at(Index sample, Index position) const { return ids[static_cast<std::size_t>(sample * length + position)]; }
  bool is_padding(Index sample, Index position) const { return at(sample, position) == pad_id; }
};

/// Lowercasing, whitespace splitting, greedy longest-match subwords, then
/// pad-or-cut to a fixed length.
class Tokenizer {
 public:
  explicit Tokenizer(Vocabulary vocab, Index length = kTextLength) : vocab_(std::move(vocab)), length_(length) {}

  /// Subword ids without padding or truncation.
  std::vector<std::int32_t> pieces(std::string_view text) const;
  /// Exactly `length()` ids.
  std::vector<std::int32_t> encode(std::string_view text) const;
  TokenizedBatch encode_batch(const std::vector<std::string>& captions) const;

  const Vocabulary& vocabulary() const { return vocab_; }
  Index length() const { return length_; }

 private:
  Vocabulary vocab_;
  Index length_;
};

}  // namespace flip

#endif  // FLIP_TOKENIZER_HPP_
