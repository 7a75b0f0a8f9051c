// SPDX-License-Identifier: Apache-2.0
#include "kpg/text.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace kpg {
namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_punct(unsigned char c) {
  return c < 0x80 && ((c >= 0x21 && c <= 0x2f) || (c >= 0x3a && c <= 0x40) ||
                      (c >= 0x5b && c <= 0x60) || (c >= 0x7b && c <= 0x7e));
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(),
                                   [](unsigned char c) { return c >= '0' && c <= '9'; });
}

constexpr std::array<std::string_view, 6> kReserved = {
    kPadToken, kUnkToken, kBosToken, kEosToken, kSepToken, kDigitToken};

std::size_t reserved_at(std::string_view raw, std::size_t pos) {
  for (auto r : kReserved)
    if (raw.substr(pos, r.size()) == r) return r.size();
  return 0;
}

}  // namespace

std::vector<TokenSpan> tokenize_with_offsets(std::string_view raw) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < raw.size()) {
    const auto c = static_cast<unsigned char>(raw[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (c == '<') {
      if (const auto len = reserved_at(raw, i); len != 0) {
        out.push_back({Token(raw.substr(i, len)), i, i + len});
        i += len;
        continue;
      }
    }
    if (is_punct(c)) {
      out.push_back({Token(1, static_cast<char>(c)), i, i + 1});
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < raw.size()) {
      const auto d = static_cast<unsigned char>(raw[j]);
      if (is_space(d) || is_punct(d)) break;
      ++j;
    }
    Token tok(raw.substr(i, j - i));
    if (all_digits(tok)) {
      tok = Token(kDigitToken);
    } else {
      for (auto& ch : tok)
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    }
    out.push_back({std::move(tok), i, j});
    i = j;
  }
  return out;
}

TokenList normalize_and_tokenize(std::string_view raw) {
  TokenList out;
  for (auto& span : tokenize_with_offsets(raw)) out.push_back(std::move(span.token));
  return out;
}

std::vector<std::string> stem_tokens(std::span<const Token> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(porter_stem(t));
  return out;
}

Phrase::Phrase(TokenList tokens) : tokens_(std::move(tokens)), stems_(stem_tokens(tokens_)) {
  for (std::size_t i = 0; i < stems_.size(); ++i) {
    if (i) key_ += ' ';
    key_ += stems_[i];
  }
}

Phrase Phrase::from_text(std::string_view raw) { return Phrase(normalize_and_tokenize(raw)); }

std::string Phrase::text() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (i) out += ' ';
    out += tokens_[i];
  }
  return out;
}

std::size_t find_stems(std::span<const std::string> haystack,
                       std::span<const std::string> needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::string::npos;
  auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end());
  return it == haystack.end() ? std::string::npos
                              : static_cast<std::size_t>(it - haystack.begin());
}

bool is_present_in_stems(const Phrase& phrase, std::span<const std::string> source_stems) {
  return find_stems(source_stems, phrase.stems()) != std::string::npos;
}

bool is_present(const Phrase& phrase, std::span<const Token> source) {
  const auto stems = stem_tokens(source);
  return is_present_in_stems(phrase, stems);
}

Partition partition_keyphrases(const Document& doc) {
  const auto source_stems = stem_tokens(doc.source);
  std::vector<std::pair<std::size_t, std::size_t>> hits;  // (first index, gold index)
  Partition out;
  for (std::size_t g = 0; g < doc.gold.size(); ++g) {
    const auto pos = find_stems(source_stems, doc.gold[g].stems());
    if (pos == std::string::npos)
      out.absent.push_back(doc.gold[g]);
    else
      hits.emplace_back(pos, g);
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [pos, g] : hits) out.present.push_back(doc.gold[g]);
  return out;
}

TokenList build_target_sequence(std::span<const Phrase> present, std::span<const Phrase> absent) {
  if (present.empty() && absent.empty())
    throw std::invalid_argument("build_target_sequence: no keyphrases");
  TokenList out;
  bool first = true;
  auto append = [&](std::span<const Phrase> phrases) {
    for (const auto& p : phrases) {
      if (!first) out.emplace_back(kSepToken);
      first = false;
      out.insert(out.end(), p.tokens().begin(), p.tokens().end());
    }
  };
  append(present);
  append(absent);
  out.emplace_back(kEosToken);
  return out;
}

PhraseList dedup_phrases(std::span<const Phrase> phrases) {
  std::unordered_set<std::string> seen;
  PhraseList out;
  for (const auto& p : phrases)
    if (seen.insert(p.stemmed_key()).second) out.push_back(p);
  return out;
}

}  // namespace kpg
