// SPDX-License-Identifier: Apache-2.0
//
// Text normalization, Porter stemming and the present/absent keyphrase
// protocol used both for building training targets and for evaluation.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kpg {

/// A normalized token: lowercase, no whitespace, all-digit runs replaced by
/// `<digit>`.
using Token = std::string;
using TokenList = std::vector<Token>;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kSepToken = "<sep>";
inline constexpr std::string_view kDigitToken = "<digit>";

struct TokenSpan {
  Token token;
  std::size_t begin = 0;  // byte offset into the raw text
  std::size_t end = 0;
};

/// Splits on whitespace and ASCII punctuation; punctuation characters become
/// single-character tokens. Bytes >= 0x80 are treated as word characters so
/// UTF-8 sequences are never split. Literal reserved tokens such as `<digit>`
/// survive as one token.
std::vector<TokenSpan> tokenize_with_offsets(std::string_view raw);
TokenList normalize_and_tokenize(std::string_view raw);

/// Porter (1980) stemmer, matching the author's reference C implementation.
std::string porter_stem(std::string_view word);

std::vector<std::string> stem_tokens(std::span<const Token> tokens);

class Phrase {
 public:
  Phrase() = default;
  explicit Phrase(TokenList tokens);

  /// Normalizes `raw`; the result may be empty.
  static Phrase from_text(std::string_view raw);

  const TokenList& tokens() const noexcept { return tokens_; }
  const std::vector<std::string>& stems() const noexcept { return stems_; }
  const std::string& stemmed_key() const noexcept { return key_; }
  bool empty() const noexcept { return tokens_.empty(); }
  std::string text() const;

  friend bool operator==(const Phrase& a, const Phrase& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  TokenList tokens_;
  std::vector<std::string> stems_;
  std::string key_;
};

using PhraseList = std::vector<Phrase>;

struct Document {
  std::string id;
  TokenList source;  // title tokens followed by body tokens
  std::size_t title_length = 0;
  PhraseList gold;
};

/// Index of the first contiguous occurrence of `needle` in `haystack`, or
/// npos. Both are stem sequences.
std::size_t find_stems(std::span<const std::string> haystack,
                       std::span<const std::string> needle);

bool is_present(const Phrase& phrase, std::span<const Token> source);
/// Same test against a pre-stemmed source.
bool is_present_in_stems(const Phrase& phrase, std::span<const std::string> source_stems);

struct Partition {
  PhraseList present;
  PhraseList absent;
};

/// Present phrases sorted by first occurrence in the source (stable on gold
/// order), absent phrases appended in gold order.
Partition partition_keyphrases(const Document& doc);

/// Present then absent phrase tokens joined by `<sep>` and closed by `</s>`.
/// Throws if both lists are empty.
TokenList build_target_sequence(std::span<const Phrase> present,
                                std::span<const Phrase> absent);

/// Keeps the first phrase for each stemmed key.
PhraseList dedup_phrases(std::span<const Phrase> phrases);

}  // namespace kpg
