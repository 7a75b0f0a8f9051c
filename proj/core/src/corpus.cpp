// SPDX-License-Identifier: Apache-2.0
#include "kpg/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "kpg/error.hpp"
#include "kpg/random.hpp"

namespace kpg {

using json = nlohmann::json;

Document normalize_record(const RawRecord& record) {
  Document doc;
  doc.id = record.id;
  doc.source = normalize_and_tokenize(record.title);
  doc.title_length = doc.source.size();
  auto body = normalize_and_tokenize(record.abstract);
  doc.source.insert(doc.source.end(), std::make_move_iterator(body.begin()),
                    std::make_move_iterator(body.end()));
  PhraseList gold;
  for (const auto& kw : record.keywords) {
    auto p = Phrase::from_text(kw);
    if (!p.empty()) gold.push_back(std::move(p));
  }
  doc.gold = dedup_phrases(gold);
  return doc;
}

namespace {

std::string string_field(const json& obj, const char* name, std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end()) throw ParseError(std::string("missing field '") + name + "'", line);
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw ParseError(std::string("field '") + name + "' must be a string", line);
}

RawRecord parse_record(const std::string& text, std::size_t line) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line, e.byte);
  }
  if (!obj.is_object()) throw ParseError("expected a JSON object", line);
  RawRecord r;
  r.id = string_field(obj, "id", line);
  r.title = string_field(obj, "title", line);
  r.abstract = string_field(obj, "abstract", line);
  auto kw = obj.find("keywords");
  if (kw == obj.end()) throw ParseError("missing field 'keywords'", line);
  if (!kw->is_array()) throw ParseError("field 'keywords' must be a list of strings", line);
  for (const auto& k : *kw) {
    if (!k.is_string()) throw ParseError("field 'keywords' must be a list of strings", line);
    r.keywords.push_back(k.get<std::string>());
  }
  return r;
}

template <class F>
void for_each_line(std::istream& in, F&& f) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    f(text, line);
  }
}

}  // namespace

std::vector<RawRecord> read_raw_jsonl(std::istream& in) {
  std::vector<RawRecord> out;
  for_each_line(in, [&](const std::string& text, std::size_t line) {
    out.push_back(parse_record(text, line));
  });
  return out;
}

void write_raw_jsonl(std::ostream& out, std::span<const RawRecord> records) {
  for (const auto& r : records) {
    json obj = {{"id", r.id}, {"title", r.title}, {"abstract", r.abstract},
                {"keywords", r.keywords}};
    out << obj.dump() << '\n';
  }
}

std::vector<Document> load_jsonl(std::istream& in, LoadStats* stats) {
  LoadStats local;
  std::vector<Document> docs;
  for_each_line(in, [&](const std::string& text, std::size_t line) {
    ++local.lines;
    auto doc = normalize_record(parse_record(text, line));
    if (doc.gold.empty()) {
      ++local.skipped_empty_keywords;
    } else if (doc.source.empty()) {
      ++local.skipped_empty_source;
    } else {
      docs.push_back(std::move(doc));
      ++local.loaded;
    }
  });
  if (stats) *stats = local;
  return docs;
}

std::vector<Document> load_jsonl(const std::filesystem::path& path, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return load_jsonl(in, stats);
}

EncodedExample encode_example(const Document& doc, const Vocabulary& vocab) {
  EncodedExample ex;
  ex.id = doc.id;
  ex.base_vocab_size = vocab.size();
  const auto v = static_cast<TokenId>(vocab.size());
  std::unordered_map<std::string, TokenId> copy_ids;
  for (const auto& tok : doc.source) {
    if (auto id = vocab.find(tok)) {
      ex.source_ids.push_back(*id);
      ex.source_ext_ids.push_back(*id);
      continue;
    }
    auto [it, inserted] = copy_ids.emplace(tok, v + static_cast<TokenId>(ex.ext_map.size()));
    if (inserted) ex.ext_map.push_back(tok);
    ex.source_ids.push_back(kUnkId);
    ex.source_ext_ids.push_back(it->second);
  }

  const auto parts = partition_keyphrases(doc);
  const auto target = build_target_sequence(parts.present, parts.absent);
  for (const auto& tok : target) {
    if (auto id = vocab.find(tok)) {
      ex.target_ids.push_back(*id);
    } else if (auto it = copy_ids.find(tok); it != copy_ids.end()) {
      ex.target_ids.push_back(it->second);
    } else {
      ex.target_ids.push_back(kUnkId);
    }
  }
  ex.target_in_ids.push_back(kBosId);
  for (std::size_t t = 0; t + 1 < ex.target_ids.size(); ++t)
    ex.target_in_ids.push_back(to_base_id(ex.target_ids[t], ex.base_vocab_size));
  return ex;
}

TokenList decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab,
                     std::span<const std::string> ext_map) {
  TokenList out;
  out.reserve(ids.size());
  const auto v = vocab.size();
  for (auto id : ids) {
    const auto u = static_cast<std::size_t>(id);
    if (id < 0 || u >= v + ext_map.size())
      throw std::out_of_range("extended id " + std::to_string(id) + " out of range");
    out.push_back(u < v ? vocab.token(id) : ext_map[u - v]);
  }
  return out;
}

Batch make_batch(std::vector<EncodedExample> examples) {
  Batch b;
  std::size_t src_len = 0, tgt_len = 0;
  for (const auto& ex : examples) {
    src_len = std::max(src_len, ex.source_ids.size());
    tgt_len = std::max(tgt_len, ex.target_ids.size());
  }
  const auto n = static_cast<Eigen::Index>(examples.size());
  const auto ls = static_cast<Eigen::Index>(src_len);
  const auto lt = static_cast<Eigen::Index>(tgt_len);
  b.source = IdMatrix::Constant(n, ls, kPadId);
  b.source_ext = IdMatrix::Constant(n, ls, kPadId);
  b.source_mask = MaskMatrix::Zero(n, ls);
  b.target = IdMatrix::Constant(n, lt, kPadId);
  b.target_in = IdMatrix::Constant(n, lt, kPadId);
  b.target_mask = MaskMatrix::Zero(n, lt);
  b.delimiter_mask = MaskMatrix::Zero(n, lt);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& ex = examples[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < ex.source_ids.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      b.source(r, c) = ex.source_ids[i];
      b.source_ext(r, c) = ex.source_ext_ids[i];
      b.source_mask(r, c) = 1;
    }
    for (std::size_t t = 0; t < ex.target_ids.size(); ++t) {
      const auto c = static_cast<Eigen::Index>(t);
      b.target(r, c) = ex.target_ids[t];
      b.target_in(r, c) = ex.target_in_ids[t];
      b.target_mask(r, c) = 1;
      b.delimiter_mask(r, c) = ex.target_ids[t] == kSepId || ex.target_ids[t] == kEosId;
    }
  }
  b.examples = std::move(examples);
  return b;
}

std::vector<Batch> make_batches(std::span<const EncodedExample> examples, std::size_t batch_size,
                                std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<EncodedExample> group;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i)
      group.push_back(examples[order[i]]);
    out.push_back(make_batch(std::move(group)));
  }
  return out;
}

}  // namespace kpg
