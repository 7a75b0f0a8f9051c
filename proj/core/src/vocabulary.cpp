// SPDX-License-Identifier: Apache-2.0
#include "kpg/vocabulary.hpp"

#include <algorithm>
#include <stdexcept>

#include "kpg/error.hpp"

namespace kpg {
namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {
      std::string(kPadToken), std::string(kUnkToken), std::string(kBosToken),
      std::string(kEosToken), std::string(kSepToken), std::string(kDigitToken)};
  return r;
}

}  // namespace

Vocabulary::Vocabulary() : id_to_token_(reserved_tokens()) {
  for (std::size_t i = 0; i < id_to_token_.size(); ++i)
    token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i));
}

Vocabulary Vocabulary::build(std::span<const Document> docs, std::size_t size) {
  if (size <= kNumReserved) throw std::invalid_argument("vocabulary size must exceed 6");
  std::unordered_map<std::string, std::size_t> counts;
  const auto& reserved = reserved_tokens();
  auto count = [&](const Token& t) {
    if (std::find(reserved.begin(), reserved.end(), t) == reserved.end()) ++counts[t];
  };
  for (const auto& doc : docs) {
    for (const auto& t : doc.source) count(t);
    for (const auto& p : doc.gold)
      for (const auto& t : p.tokens()) count(t);
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  const std::size_t room = size - kNumReserved;
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i) {
    v.token_to_id_.emplace(ranked[i].first, static_cast<TokenId>(v.id_to_token_.size()));
    v.id_to_token_.push_back(ranked[i].first);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), tokens.begin()))
    throw Error("vocabulary does not start with the reserved tokens");
  Vocabulary v;
  v.id_to_token_ = std::move(tokens);
  v.token_to_id_.clear();
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    if (!v.token_to_id_.emplace(v.id_to_token_[i], static_cast<TokenId>(i)).second)
      throw Error("duplicate vocabulary token '" + v.id_to_token_[i] + "'");
  }
  return v;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id_or_unk(std::string_view token) const {
  return find(token).value_or(kUnkId);
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return id_to_token_[static_cast<std::size_t>(id)];
}

}  // namespace kpg
