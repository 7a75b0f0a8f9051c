// SPDX-License-Identifier: Apache-2.0
//
// Conversion of a StackExchange Posts.xml dump into train/valid/test JSONL
// splits plus per-split statistics.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kpg/corpus.hpp"

namespace kpg {

/// Removes HTML tags, decodes character references and collapses whitespace.
/// Text content (including code blocks) is kept.
std::string strip_html(std::string_view html);

/// Parses `<a><b-c>` (or `|a|b-c|`) into tag strings; hyphens become spaces.
std::vector<std::string> parse_tags(std::string_view tags);

struct PostsReadStats {
  std::size_t rows = 0;
  std::size_t questions = 0;
  std::size_t skipped_no_tags = 0;
};

/// Question rows (PostTypeId=1) with non-empty Tags, in file order. The body
/// is HTML-stripped; keywords are the parsed tags.
std::vector<RawRecord> read_stackexchange_posts(std::istream& in, PostsReadStats* stats = nullptr);

/// Cuts the record so that title+abstract tokenize to at most `max_tokens`
/// tokens. The cut falls on a token boundary of the original text.
RawRecord truncate_record(const RawRecord& record, std::size_t max_tokens);

struct SplitStats {
  std::size_t count = 0;
  double kp_mean = 0.0;
  double kp_var = 0.0;      // population variance of keyphrases per document
  double pct_present = 0.0; // percentage of keyphrases present in the source
};

SplitStats compute_split_stats(std::span<const Document> docs);

struct StackExchangeOptions {
  std::size_t valid_size = 16000;
  std::size_t test_size = 16000;
  std::uint64_t seed = 1;
  std::size_t train_max_tokens = 300;
  std::size_t eval_max_tokens = 1000;
};

struct StackExchangeSplits {
  std::vector<RawRecord> train;
  std::vector<RawRecord> valid;
  std::vector<RawRecord> test;
};

/// Random split (valid first, then test, remainder train); each split keeps
/// file order and is truncated to its token budget. Records whose keywords
/// normalize to nothing are dropped.
StackExchangeSplits split_records(std::vector<RawRecord> records, const StackExchangeOptions& opts);

struct ConversionReport {
  PostsReadStats read;
  SplitStats train;
  SplitStats valid;
  SplitStats test;
};

/// Writes train.jsonl, valid.jsonl, test.jsonl and stats.json into `out_dir`
/// and fills the per-split statistics of the report.
ConversionReport write_splits(const StackExchangeSplits& splits, const std::filesystem::path& out_dir);

/// Reads the dump, splits it and writes the result with write_splits.
ConversionReport convert_stackexchange(const std::filesystem::path& posts_xml,
                                       const std::filesystem::path& out_dir,
                                       const StackExchangeOptions& opts);

}  // namespace kpg
