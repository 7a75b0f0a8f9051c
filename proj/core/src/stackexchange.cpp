// SPDX-License-Identifier: Apache-2.0
#include "kpg/stackexchange.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "kpg/error.hpp"
#include "kpg/random.hpp"
#include "kpg/xml_reader.hpp"

namespace kpg {
namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending = false;
  for (unsigned char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out += ' ';
    pending = false;
    out += static_cast<char>(c);
  }
  return out;
}

std::string decode_html_entities(std::string_view text) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '&') {
      const auto semi = text.find(';', i);
      if (semi != std::string_view::npos && semi - i <= 10) {
        const auto name = text.substr(i + 1, semi - i - 1);
        if (name == "nbsp") {
          out += ' ';
          i = semi + 1;
          continue;
        }
        auto decoded = decode_entities(text.substr(i, semi - i + 1), false);
        if (decoded.size() < semi - i + 1) {
          out += decoded;
          i = semi + 1;
          continue;
        }
      }
    }
    out += text[i++];
  }
  return out;
}

}  // namespace

std::string strip_html(std::string_view html) {
  std::string text;
  text.reserve(html.size());
  std::size_t i = 0;
  while (i < html.size()) {
    if (html[i] == '<') {
      const auto close = html.find('>', i);
      if (close == std::string_view::npos) break;
      text += ' ';
      i = close + 1;
      continue;
    }
    text += html[i++];
  }
  return collapse_whitespace(decode_html_entities(text));
}

std::vector<std::string> parse_tags(std::string_view tags) {
  std::vector<std::string> out;
  auto push = [&](std::string_view tag) {
    std::string t(tag);
    std::replace(t.begin(), t.end(), '-', ' ');
    t = collapse_whitespace(t);
    if (!t.empty()) out.push_back(std::move(t));
  };
  if (!tags.empty() && tags.front() == '|') {
    std::size_t start = 1;
    while (start < tags.size()) {
      auto end = tags.find('|', start);
      if (end == std::string_view::npos) end = tags.size();
      push(tags.substr(start, end - start));
      start = end + 1;
    }
    return out;
  }
  std::size_t i = 0;
  while ((i = tags.find('<', i)) != std::string_view::npos) {
    const auto close = tags.find('>', i);
    if (close == std::string_view::npos) break;
    push(tags.substr(i + 1, close - i - 1));
    i = close + 1;
  }
  return out;
}

std::vector<RawRecord> read_stackexchange_posts(std::istream& in, PostsReadStats* stats) {
  PostsReadStats local;
  std::vector<RawRecord> out;
  XmlReader reader(in);
  while (auto el = reader.next()) {
    if (el->name != "row") continue;
    ++local.rows;
    const auto* type = el->attribute("PostTypeId");
    if (!type || *type != "1") continue;
    ++local.questions;
    const auto* tags = el->attribute("Tags");
    auto keywords = tags ? parse_tags(*tags) : std::vector<std::string>{};
    if (keywords.empty()) {
      ++local.skipped_no_tags;
      continue;
    }
    RawRecord r;
    const auto* id = el->attribute("Id");
    r.id = id ? *id : std::to_string(el->line);
    if (const auto* title = el->attribute("Title")) r.title = collapse_whitespace(*title);
    if (const auto* body = el->attribute("Body")) r.abstract = strip_html(*body);
    r.keywords = std::move(keywords);
    out.push_back(std::move(r));
  }
  if (stats) *stats = local;
  return out;
}

RawRecord truncate_record(const RawRecord& record, std::size_t max_tokens) {
  RawRecord out = record;
  const auto title = tokenize_with_offsets(record.title);
  if (title.size() >= max_tokens) {
    out.title = max_tokens == 0 ? std::string() : record.title.substr(0, title[max_tokens - 1].end);
    out.abstract.clear();
    return out;
  }
  const auto body = tokenize_with_offsets(record.abstract);
  const auto room = max_tokens - title.size();
  if (body.size() > room)
    out.abstract = room == 0 ? std::string() : record.abstract.substr(0, body[room - 1].end);
  return out;
}

SplitStats compute_split_stats(std::span<const Document> docs) {
  SplitStats s;
  s.count = docs.size();
  if (docs.empty()) return s;
  double sum = 0.0;
  std::size_t total = 0, present = 0;
  for (const auto& d : docs) {
    sum += static_cast<double>(d.gold.size());
    total += d.gold.size();
    const auto stems = stem_tokens(d.source);
    for (const auto& p : d.gold)
      if (is_present_in_stems(p, stems)) ++present;
  }
  const double n = static_cast<double>(docs.size());
  s.kp_mean = sum / n;
  double sq = 0.0;
  for (const auto& d : docs) {
    const double diff = static_cast<double>(d.gold.size()) - s.kp_mean;
    sq += diff * diff;
  }
  s.kp_var = sq / n;
  s.pct_present = total == 0 ? 0.0 : 100.0 * static_cast<double>(present) / static_cast<double>(total);
  return s;
}

StackExchangeSplits split_records(std::vector<RawRecord> records, const StackExchangeOptions& opts) {
  std::erase_if(records, [](const RawRecord& r) { return normalize_record(r).gold.empty(); });
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(opts.seed);
  rng.shuffle(std::span<std::size_t>(order));

  const std::size_t n_valid = std::min(opts.valid_size, order.size());
  const std::size_t n_test = std::min(opts.test_size, order.size() - n_valid);
  auto take = [&](std::size_t begin, std::size_t end, std::size_t max_tokens) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(idx.begin(), idx.end());
    std::vector<RawRecord> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(truncate_record(records[i], max_tokens));
    return out;
  };
  StackExchangeSplits s;
  s.valid = take(0, n_valid, opts.eval_max_tokens);
  s.test = take(n_valid, n_valid + n_test, opts.eval_max_tokens);
  s.train = take(n_valid + n_test, order.size(), opts.train_max_tokens);
  return s;
}

ConversionReport write_splits(const StackExchangeSplits& splits, const std::filesystem::path& out_dir) {
  ConversionReport report;
  std::filesystem::create_directories(out_dir);
  nlohmann::json stats = nlohmann::json::object();
  auto emit = [&](const char* name, const std::vector<RawRecord>& records, SplitStats& dst) {
    std::ofstream out(out_dir / (std::string(name) + ".jsonl"), std::ios::binary);
    if (!out) throw Error("cannot write " + (out_dir / name).string());
    write_raw_jsonl(out, records);
    std::vector<Document> docs;
    docs.reserve(records.size());
    for (const auto& r : records) docs.push_back(normalize_record(r));
    dst = compute_split_stats(docs);
    stats[name] = {{"count", dst.count},
                   {"kp_mean", dst.kp_mean},
                   {"kp_var", dst.kp_var},
                   {"pct_present", dst.pct_present}};
  };
  emit("train", splits.train, report.train);
  emit("valid", splits.valid, report.valid);
  emit("test", splits.test, report.test);
  std::ofstream out(out_dir / "stats.json", std::ios::binary);
  out << stats.dump(2) << '\n';
  return report;
}

ConversionReport convert_stackexchange(const std::filesystem::path& posts_xml,
                                       const std::filesystem::path& out_dir,
                                       const StackExchangeOptions& opts) {
  std::ifstream in(posts_xml, std::ios::binary);
  if (!in) throw Error("cannot open " + posts_xml.string());
  PostsReadStats read;
  const auto splits = split_records(read_stackexchange_posts(in, &read), opts);
  auto report = write_splits(splits, out_dir);
  report.read = read;
  return report;
}

}  // namespace kpg
