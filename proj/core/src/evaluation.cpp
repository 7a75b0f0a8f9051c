// SPDX-License-Identifier: Apache-2.0
#include "kpg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "kpg/error.hpp"

namespace kpg {

using Eigen::Index;
using json = nlohmann::json;

MatchResult match_at_k(std::span<const Phrase> preds, std::span<const Phrase> gold,
                       std::size_t k) {
  if (gold.empty()) throw std::invalid_argument("match_at_k: empty gold list");
  std::unordered_map<std::string, std::size_t> remaining;
  for (const auto& g : gold) ++remaining[g.stemmed_key()];
  MatchResult m;
  m.targets = gold.size();
  m.considered = std::min(k, preds.size());
  for (std::size_t i = 0; i < m.considered; ++i) {
    auto it = remaining.find(preds[i].stemmed_key());
    if (it != remaining.end() && it->second > 0) {
      --it->second;
      ++m.correct;
    }
  }
  return m;
}

Scores scores_of(const MatchResult& m) {
  Scores s;
  if (m.considered > 0) s.precision = static_cast<double>(m.correct) / static_cast<double>(m.considered);
  if (m.targets > 0) s.recall = static_cast<double>(m.correct) / static_cast<double>(m.targets);
  if (s.precision + s.recall > 0.0)
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

Scores f1_at_O(std::span<const Phrase> preds, std::span<const Phrase> gold) {
  return scores_of(match_at_k(preds, gold, gold.size()));
}

Scores f1_at_M(std::span<const Phrase> preds, std::span<const Phrase> gold) {
  return scores_of(match_at_k(preds, gold, preds.size()));
}

double recall_at_k(std::span<const Phrase> preds, std::span<const Phrase> gold, std::size_t k) {
  return scores_of(match_at_k(preds, gold, k)).recall;
}

PhraseList dedup_predictions(std::span<const Phrase> preds) {
  PhraseList out;
  std::unordered_set<std::string> seen;
  for (const auto& p : preds)
    if (!p.empty() && seen.insert(p.stemmed_key()).second) out.push_back(p);
  return out;
}

DocumentMetrics evaluate_document(const Document& doc, std::span<const Phrase> preds,
                                  std::span<const std::size_t> extra_k) {
  const auto source_stems = stem_tokens(doc.source);
  const auto split = [&](std::span<const Phrase> list) {
    Partition p;
    for (const auto& phrase : list)
      (is_present_in_stems(phrase, source_stems) ? p.present : p.absent).push_back(phrase);
    return p;
  };
  const auto gold = split(doc.gold);
  const auto unique = dedup_predictions(preds);
  const auto pred = split(unique);

  DocumentMetrics d;
  d.id = doc.id;
  d.has_present = !gold.present.empty();
  d.has_absent = !gold.absent.empty();
  if (d.has_present) {
    auto& p = d.present;
    p.at5 = scores_of(match_at_k(pred.present, gold.present, 5));
    p.at10 = scores_of(match_at_k(pred.present, gold.present, 10));
    p.at_o = f1_at_O(pred.present, gold.present);
    p.at_m = f1_at_M(pred.present, gold.present);
    for (auto k : extra_k) p.extra[k] = scores_of(match_at_k(pred.present, gold.present, k));
  }
  if (d.has_absent) {
    d.absent.r10 = recall_at_k(pred.absent, gold.absent, 10);
    d.absent.r50 = recall_at_k(pred.absent, gold.absent, 50);
  }
  return d;
}

namespace {

void accumulate(Scores& into, const Scores& s) {
  into.precision += s.precision;
  into.recall += s.recall;
  into.f1 += s.f1;
}

void divide(Scores& s, double n) {
  s.precision /= n;
  s.recall /= n;
  s.f1 /= n;
}

json scores_json(const Scores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

}  // namespace

MetricReport evaluate_dataset(std::span<const PredictionRecord> predictions,
                              std::span<const Document> gold,
                              std::span<const std::size_t> extra_k) {
  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : predictions)
    if (!by_id.emplace(p.id, &p).second)
      throw IdMismatchError("duplicate document id '" + p.id + "' in predictions");
  std::unordered_set<std::string> gold_ids;
  for (const auto& d : gold)
    if (!gold_ids.insert(d.id).second)
      throw IdMismatchError("duplicate document id '" + d.id + "' in gold data");
  for (const auto& p : predictions)
    if (!gold_ids.count(p.id))
      throw IdMismatchError("prediction for unknown document id '" + p.id + "'");

  MetricReport r;
  r.extra_k.assign(extra_k.begin(), extra_k.end());
  r.documents = gold.size();
  for (const auto& doc : gold) {
    PhraseList preds;
    if (auto it = by_id.find(doc.id); it != by_id.end()) {
      for (const auto& text : it->second->phrases) preds.push_back(Phrase::from_text(text));
    } else {
      ++r.missing_predictions;
    }
    const auto d = evaluate_document(doc, preds, extra_k);
    if (d.has_present) {
      ++r.present_documents;
      accumulate(r.present.at5, d.present.at5);
      accumulate(r.present.at10, d.present.at10);
      accumulate(r.present.at_o, d.present.at_o);
      accumulate(r.present.at_m, d.present.at_m);
      for (const auto& [k, s] : d.present.extra) accumulate(r.present.extra[k], s);
    }
    if (d.has_absent) {
      ++r.absent_documents;
      r.absent.r10 += d.absent.r10;
      r.absent.r50 += d.absent.r50;
    }
  }
  if (r.present_documents > 0) {
    const auto n = static_cast<double>(r.present_documents);
    divide(r.present.at5, n);
    divide(r.present.at10, n);
    divide(r.present.at_o, n);
    divide(r.present.at_m, n);
    for (auto& [k, s] : r.present.extra) divide(s, n);
  }
  if (r.absent_documents > 0) {
    r.absent.r10 /= static_cast<double>(r.absent_documents);
    r.absent.r50 /= static_cast<double>(r.absent_documents);
  }
  return r;
}

std::string MetricReport::to_json() const {
  json present_obj = {{"@5", scores_json(present.at5)},
                      {"@10", scores_json(present.at10)},
                      {"@O", scores_json(present.at_o)},
                      {"@M", scores_json(present.at_m)}};
  for (const auto& [k, s] : present.extra) present_obj["@" + std::to_string(k)] = scores_json(s);
  json obj = {{"present", present_obj},
              {"absent", {{"R@10", absent.r10}, {"R@50", absent.r50}}},
              {"documents", documents},
              {"present_documents", present_documents},
              {"absent_documents", absent_documents},
              {"missing_predictions", missing_predictions}};
  return obj.dump(2);
}

std::string MetricReport::to_table() const {
  std::string out;
  char buf[128];
  const auto row = [&](const std::string& name, const Scores& s) {
    std::snprintf(buf, sizeof buf, "%-12s %9.4f %9.4f %9.4f\n", name.c_str(), s.precision,
                  s.recall, s.f1);
    out += buf;
  };
  std::snprintf(buf, sizeof buf, "present (%zu docs)\n%-12s %9s %9s %9s\n", present_documents,
                "metric", "P", "R", "F1");
  out += buf;
  row("@5", present.at5);
  row("@10", present.at10);
  for (const auto& [k, s] : present.extra) row("@" + std::to_string(k), s);
  row("@O", present.at_o);
  row("@M", present.at_m);
  std::snprintf(buf, sizeof buf, "absent (%zu docs)\n%-12s %9.4f\n%-12s %9.4f\n",
                absent_documents, "R@10", absent.r10, "R@50", absent.r50);
  out += buf;
  if (missing_predictions > 0) {
    std::snprintf(buf, sizeof buf, "missing predictions: %zu of %zu\n", missing_predictions,
                  documents);
    out += buf;
  }
  return out;
}

double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

double mean_pairwise_cosine(const Matrix& states) {
  const auto n = states.cols();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) sum += cosine_similarity(states.col(i), states.col(j));
  return sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double average_unique_phrases(std::span<const DecodeResult> results) {
  if (results.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : results) total += static_cast<double>(r.phrases.size());
  return total / static_cast<double>(results.size());
}

Matrix delimiter_following_states(const ModelParams& params, const EncodedExample& example,
                                  std::size_t k) {
  if (k == 0) throw std::invalid_argument("delimiter_following_states: k must be >= 1");
  const auto source = prepare_source(params, example);
  const auto steps = example.target_ids.size();
  Matrix h = init_decoder_state(source.final_state, params);
  Matrix h_sc = Matrix::Zero(static_cast<Index>(params.dims.target_hidden), 1);
  std::vector<Vector> picked;
  for (std::size_t t = 0; t < steps; ++t) {
    const TokenId in[] = {example.target_in_ids[t]};
    auto out = decoder_step_batch(params, source, h, h_sc, in);
    h = std::move(out.h);
    if (t >= k && example.target_ids[t - k] == kSepId) picked.push_back(h.col(0));
    const TokenId y = to_base_id(example.target_ids[t], example.base_vocab_size);
    h_sc = target_encoder_step(y, h_sc.col(0), params);
  }
  Matrix m(h.rows(), static_cast<Index>(picked.size()));
  for (std::size_t i = 0; i < picked.size(); ++i) m.col(static_cast<Index>(i)) = picked[i];
  return m;
}

DiversityStats diversity_stats(std::span<const Matrix> groups,
                               std::span<const DecodeResult> results) {
  DiversityStats s;
  double sum = 0.0;
  for (const auto& g : groups) {
    s.states += static_cast<std::size_t>(g.cols());
    if (g.cols() < 2) continue;
    sum += mean_pairwise_cosine(g);
    ++s.groups;
  }
  if (s.groups > 0) s.mean_pairwise_cosine = sum / static_cast<double>(s.groups);
  s.avg_unique_phrases = average_unique_phrases(results);
  return s;
}

}  // namespace kpg
