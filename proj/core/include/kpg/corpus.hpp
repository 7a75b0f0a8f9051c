// SPDX-License-Identifier: Apache-2.0
//
// Dataset ingestion (JSONL), example encoding with per-example copy ids,
// and batching.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kpg/text.hpp"
#include "kpg/vocabulary.hpp"

namespace kpg {

/// One raw dataset record: {"id", "title", "abstract", "keywords"}.
struct RawRecord {
  std::string id;
  std::string title;
  std::string abstract;
  std::vector<std::string> keywords;
};

/// Tokenizes title and abstract, normalizes and de-duplicates keywords
/// (dropping ones that normalize to nothing).
Document normalize_record(const RawRecord& record);

struct LoadStats {
  std::size_t lines = 0;
  std::size_t loaded = 0;
  std::size_t skipped_empty_keywords = 0;
  std::size_t skipped_empty_source = 0;
};

/// Reads one JSON object per line. Blank lines are ignored. Throws
/// ParseError with the 1-based line number on malformed JSON or a missing or
/// mistyped field.
std::vector<Document> load_jsonl(std::istream& in, LoadStats* stats = nullptr);
std::vector<Document> load_jsonl(const std::filesystem::path& path, LoadStats* stats = nullptr);

std::vector<RawRecord> read_raw_jsonl(std::istream& in);
void write_raw_jsonl(std::ostream& out, std::span<const RawRecord> records);

struct EncodedExample {
  std::string id;
  std::vector<TokenId> source_ids;      // base vocabulary, OOV -> <unk>
  std::vector<TokenId> source_ext_ids;  // OOV source tokens -> V, V+1, ...
  std::vector<std::string> ext_map;     // ext_map[i] is the surface of id V+i
  std::vector<TokenId> target_ids;      // extended ids, ends with </s>
  std::vector<TokenId> target_in_ids;   // <bos> followed by target_ids[:-1], base ids
  std::size_t base_vocab_size = 0;

  std::size_t extended_size() const noexcept { return base_vocab_size + ext_map.size(); }
};

/// Maps an extended id back to the base vocabulary (copy ids -> <unk>).
inline TokenId to_base_id(TokenId id, std::size_t base_vocab_size) {
  return static_cast<std::size_t>(id) < base_vocab_size ? id : kUnkId;
}

/// Builds the delimiter-joined target from the present/absent partition and
/// assigns copy ids to out-of-vocabulary source tokens in order of first
/// occurrence.
EncodedExample encode_example(const Document& doc, const Vocabulary& vocab);

/// Resolves extended ids through the vocabulary and the example's copy map.
TokenList decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab,
                     std::span<const std::string> ext_map);

using IdMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Padded view of a group of examples; row b belongs to examples[b].
struct Batch {
  std::vector<EncodedExample> examples;
  IdMatrix source;         // base ids, <pad> beyond length
  IdMatrix source_ext;
  MaskMatrix source_mask;  // 1 on real tokens
  IdMatrix target;         // extended ids
  IdMatrix target_in;
  MaskMatrix target_mask;
  MaskMatrix delimiter_mask;  // target is <sep> or </s>

  std::size_t size() const noexcept { return examples.size(); }
};

Batch make_batch(std::vector<EncodedExample> examples);

/// Shuffles with `seed`, then groups consecutive examples into batches of
/// `batch_size` (the last may be smaller).
std::vector<Batch> make_batches(std::span<const EncodedExample> examples, std::size_t batch_size,
                                std::uint64_t seed);

}  // namespace kpg
