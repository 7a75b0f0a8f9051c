// SPDX-License-Identifier: Apache-2.0
//
// Keyphrase metrics: P/R/F1 at k with one-to-one stemmed matching, F1@O,
// F1@M, absent recall, the present/absent protocol with macro averaging,
// and diversity diagnostics.
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kpg/corpus.hpp"
#include "kpg/decoding.hpp"
#include "kpg/params.hpp"
#include "kpg/text.hpp"

namespace kpg {

struct MatchResult {
  std::size_t considered = 0;  // min(k, #pred)
  std::size_t correct = 0;
  std::size_t targets = 0;
};

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Throws std::invalid_argument on empty gold. k = 0 considers nothing.
MatchResult match_at_k(std::span<const Phrase> preds, std::span<const Phrase> gold,
                       std::size_t k);
Scores scores_of(const MatchResult& m);

Scores f1_at_O(std::span<const Phrase> preds, std::span<const Phrase> gold);
Scores f1_at_M(std::span<const Phrase> preds, std::span<const Phrase> gold);
double recall_at_k(std::span<const Phrase> preds, std::span<const Phrase> gold, std::size_t k);

/// First occurrence of each stemmed key, order preserved.
PhraseList dedup_predictions(std::span<const Phrase> preds);

struct PresentMetrics {
  Scores at5;
  Scores at10;
  Scores at_o;
  Scores at_m;
  std::map<std::size_t, Scores> extra;  // additional fixed k
};

struct AbsentMetrics {
  double r10 = 0.0;
  double r50 = 0.0;
};

struct DocumentMetrics {
  std::string id;
  bool has_present = false;
  bool has_absent = false;
  PresentMetrics present;
  AbsentMetrics absent;
};

/// Per-document scores: gold and predictions are split by presence in the
/// source, predictions deduplicated by stemmed key.
DocumentMetrics evaluate_document(const Document& doc, std::span<const Phrase> preds,
                                  std::span<const std::size_t> extra_k = {});

struct MetricReport {
  PresentMetrics present;  // macro averages over documents with present gold
  AbsentMetrics absent;    // over documents with absent gold
  std::size_t documents = 0;
  std::size_t present_documents = 0;
  std::size_t absent_documents = 0;
  std::size_t missing_predictions = 0;
  std::vector<std::size_t> extra_k;

  std::string to_json() const;
  std::string to_table() const;
};

/// Throws IdMismatchError on duplicate ids in either input or on predictions
/// for unknown documents. Gold documents without a prediction score as
/// empty predictions and are counted in `missing_predictions`.
MetricReport evaluate_dataset(std::span<const PredictionRecord> predictions,
                              std::span<const Document> gold,
                              std::span<const std::size_t> extra_k = {});

double cosine_similarity(const Vector& a, const Vector& b);
/// Mean cosine over all unordered column pairs; 0 for fewer than two.
double mean_pairwise_cosine(const Matrix& states);

struct DiversityStats {
  double avg_unique_phrases = 0.0;
  double mean_pairwise_cosine = 0.0;  // averaged over groups with >= 2 states
  std::size_t states = 0;
  std::size_t groups = 0;
};

double average_unique_phrases(std::span<const DecodeResult> results);

/// Undropped decoder states `k` steps after each <sep> of the gold target,
/// teacher-forced (k >= 1). Columns in target order.
Matrix delimiter_following_states(const ModelParams& params, const EncodedExample& example,
                                  std::size_t k);

/// Cosine statistic over per-document groups of states.
DiversityStats diversity_stats(std::span<const Matrix> groups,
                               std::span<const DecodeResult> results = {});

}  // namespace kpg
