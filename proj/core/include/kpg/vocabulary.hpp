// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kpg/text.hpp"

namespace kpg {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr TokenId kSepId = 4;
inline constexpr TokenId kDigitId = 5;
inline constexpr std::size_t kNumReserved = 6;

/// Token <-> id bijection. Ids 0..5 are the reserved tokens in the order
/// `<pad> <unk> <bos> </s> <sep> <digit>`; `size()` counts them.
class Vocabulary {
 public:
  Vocabulary();

  /// Reserved tokens plus the `size - 6` most frequent source and gold
  /// tokens; equal counts are ordered lexicographically.
  static Vocabulary build(std::span<const Document> docs, std::size_t size);

  /// Rebuilds from an id-ordered token list; validates the reserved prefix
  /// and uniqueness.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return id_to_token_.size(); }
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id_or_unk(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return id_to_token_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

}  // namespace kpg
