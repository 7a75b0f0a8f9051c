// SPDX-License-Identifier: Apache-2.0
//
// Greedy and beam-search decoding over the extended vocabulary, splitting
// generated sequences into phrases, and the prediction file format.
#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kpg/corpus.hpp"
#include "kpg/model.hpp"
#include "kpg/params.hpp"

namespace kpg {

struct Hypothesis {
  std::vector<TokenId> tokens;  // extended ids; ends with </s> when finished
  double log_prob = 0.0;
  bool finished = false;
  Vector h_d;
  Vector h_sc;
};

struct BeamOptions {
  std::size_t width = 50;
  std::size_t max_len = 40;
  bool length_normalize = false;
};

enum class Strategy { kGreedy, kTopBeam, kExhaustive };

std::string_view strategy_name(Strategy s);
/// Accepts "greedy", "top-beam", "exhaustive"; throws std::invalid_argument.
Strategy parse_strategy(std::string_view name);

/// Evaluation-mode encoding of one example.
SourceContext prepare_source(const ModelParams& params, const EncodedExample& example);

/// Argmax decoding (lowest id on ties); stops after </s> or max_len tokens.
std::vector<TokenId> greedy_decode(const ModelParams& params, const SourceContext& source,
                                   std::size_t max_len);

/// Completed hypotheses, best first, at most `width`. Ties in score are
/// ordered by lexicographic token ids. Throws std::invalid_argument when
/// width or max_len is 0.
std::vector<Hypothesis> beam_search(const ModelParams& params, const SourceContext& source,
                                    const BeamOptions& options);

/// Ranking score of a completed hypothesis under `options`.
double hypothesis_score(const Hypothesis& h, const BeamOptions& options);

/// Truncates at the first </s> and splits on <sep>, dropping empty segments.
PhraseList sequence_to_phrases(std::span<const Token> tokens);

struct DecodeResult {
  std::string source_id;
  Strategy strategy = Strategy::kGreedy;
  PhraseList phrases;  // unique by stemmed key, ranked
  std::vector<double> scores;
  std::size_t unk_phrases = 0;  // phrases containing <unk>
};

DecodeResult self_terminating_decode(const ModelParams& params, const Vocabulary& vocab,
                                     const EncodedExample& example, Strategy mode,
                                     const BeamOptions& options);

/// Beam search, then phrases harvested in hypothesis rank order and position
/// order, keeping the first occurrence of each stemmed key.
DecodeResult exhaustive_decode(const ModelParams& params, const Vocabulary& vocab,
                               const EncodedExample& example, const BeamOptions& options);

DecodeResult decode(const ModelParams& params, const Vocabulary& vocab,
                    const EncodedExample& example, Strategy strategy,
                    const BeamOptions& options);

/// Decodes every example on up to `threads` workers; output is in input order.
std::vector<DecodeResult> decode_all(const ModelParams& params, const Vocabulary& vocab,
                                     std::span<const EncodedExample> examples,
                                     Strategy strategy, const BeamOptions& options,
                                     std::size_t threads = 1);

/// {"id", "phrases", "scores", "strategy"} per line.
struct PredictionRecord {
  std::string id;
  std::vector<std::string> phrases;
  std::vector<double> scores;
  std::string strategy;
};

PredictionRecord to_record(const DecodeResult& result);
void write_predictions(std::ostream& out, std::span<const PredictionRecord> records);
/// Throws ParseError on malformed lines.
std::vector<PredictionRecord> read_predictions(std::istream& in);

}  // namespace kpg
