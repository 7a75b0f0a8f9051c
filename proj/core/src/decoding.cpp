// SPDX-License-Identifier: Apache-2.0
#include "kpg/decoding.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "kpg/error.hpp"

namespace kpg {

using Eigen::Index;
using json = nlohmann::json;

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kTopBeam: return "top-beam";
    case Strategy::kExhaustive: return "exhaustive";
  }
  return "greedy";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "greedy") return Strategy::kGreedy;
  if (name == "top-beam") return Strategy::kTopBeam;
  if (name == "exhaustive") return Strategy::kExhaustive;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

SourceContext prepare_source(const ModelParams& params, const EncodedExample& example) {
  return make_source_context(params, encode_source(params, example.source_ids),
                             example.source_ext_ids, example.extended_size());
}

namespace {

TokenId argmax_lowest(const Eigen::Ref<const Vector>& p) {
  Index best = 0;
  for (Index i = 1; i < p.size(); ++i)
    if (p(i) > p(best)) best = i;
  return static_cast<TokenId>(best);
}

}  // namespace

std::vector<TokenId> greedy_decode(const ModelParams& params, const SourceContext& source,
                                   std::size_t max_len) {
  const auto base = static_cast<std::size_t>(params.gen_out_w.rows());
  Matrix h = init_decoder_state(source.final_state, params);
  Matrix h_sc = Matrix::Zero(static_cast<Index>(params.dims.target_hidden), 1);
  TokenId input = kBosId;
  std::vector<TokenId> out;
  while (out.size() < max_len) {
    const TokenId ids[] = {input};
    auto step = decoder_step_batch(params, source, h, h_sc, ids);
    const TokenId y = argmax_lowest(step.p.col(0));
    out.push_back(y);
    if (y == kEosId) break;
    input = to_base_id(y, base);
    h_sc = target_encoder_step(input, h_sc.col(0), params);
    h = std::move(step.h);
  }
  return out;
}

double hypothesis_score(const Hypothesis& h, const BeamOptions& options) {
  if (options.length_normalize && !h.tokens.empty())
    return h.log_prob / static_cast<double>(h.tokens.size());
  return h.log_prob;
}

namespace {

struct Candidate {
  double score;
  double p;
  std::size_t parent;
  TokenId token;
};

}  // namespace

std::vector<Hypothesis> beam_search(const ModelParams& params, const SourceContext& source,
                                    const BeamOptions& options) {
  if (options.width == 0) throw std::invalid_argument("beam_search: width must be >= 1");
  if (options.max_len == 0) throw std::invalid_argument("beam_search: max_len must be >= 1");
  const auto base = static_cast<std::size_t>(params.gen_out_w.rows());
  const auto width = options.width;

  std::vector<Hypothesis> alive(1);
  alive[0].h_d = init_decoder_state(source.final_state, params);
  alive[0].h_sc = Vector::Zero(static_cast<Index>(params.dims.target_hidden));
  std::vector<Hypothesis> pool;

  const auto better = [&](const Hypothesis& a, const Hypothesis& b) {
    const double sa = hypothesis_score(a, options), sb = hypothesis_score(b, options);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  };

  for (std::size_t len = 1; len <= options.max_len && !alive.empty(); ++len) {
    const auto k_cols = static_cast<Index>(alive.size());
    Matrix h(alive[0].h_d.size(), k_cols), h_sc(alive[0].h_sc.size(), k_cols);
    std::vector<TokenId> inputs(alive.size());
    for (std::size_t k = 0; k < alive.size(); ++k) {
      h.col(static_cast<Index>(k)) = alive[k].h_d;
      h_sc.col(static_cast<Index>(k)) = alive[k].h_sc;
      inputs[k] = alive[k].tokens.empty() ? kBosId : to_base_id(alive[k].tokens.back(), base);
    }
    const auto step = decoder_step_batch(params, source, h, h_sc, inputs);

    // Per-parent shortlist: within one parent, order by probability then id.
    std::vector<Candidate> cands;
    for (std::size_t k = 0; k < alive.size(); ++k) {
      const auto col = step.p.col(static_cast<Index>(k));
      std::vector<Candidate> local;
      for (Index v = 0; v < col.size(); ++v)
        if (col(v) > 0.0)
          local.push_back({alive[k].log_prob + std::log(col(v)), col(v), k, static_cast<TokenId>(v)});
      const auto keep = std::min(width, local.size());
      std::partial_sort(local.begin(), local.begin() + static_cast<std::ptrdiff_t>(keep),
                        local.end(), [](const Candidate& a, const Candidate& b) {
                          return a.p != b.p ? a.p > b.p : a.token < b.token;
                        });
      cands.insert(cands.end(), local.begin(), local.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.parent != b.parent) return alive[a.parent].tokens < alive[b.parent].tokens;
      return a.p != b.p ? a.p > b.p : a.token < b.token;
    });
    if (cands.size() > width) cands.resize(width);

    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      Hypothesis hyp;
      hyp.tokens = alive[c.parent].tokens;
      hyp.tokens.push_back(c.token);
      hyp.log_prob = c.score;
      hyp.h_d = step.h.col(static_cast<Index>(c.parent));
      if (c.token == kEosId || len == options.max_len) {
        hyp.finished = true;
        hyp.h_sc = alive[c.parent].h_sc;
        pool.push_back(std::move(hyp));
      } else {
        hyp.h_sc = target_encoder_step(to_base_id(c.token, base), alive[c.parent].h_sc, params);
        next.push_back(std::move(hyp));
      }
    }
    alive = std::move(next);

    // Scores only fall as tokens append, so a full pool that beats every
    // live hypothesis is final.
    if (!options.length_normalize && pool.size() >= width && !alive.empty()) {
      std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(width - 1),
                       pool.end(), better);
      const double threshold = pool[width - 1].log_prob;
      double best_alive = -std::numeric_limits<double>::infinity();
      for (const auto& a : alive) best_alive = std::max(best_alive, a.log_prob);
      if (best_alive < threshold) break;
    }
  }
  std::sort(pool.begin(), pool.end(), better);
  if (pool.size() > width) pool.resize(width);
  return pool;
}

PhraseList sequence_to_phrases(std::span<const Token> tokens) {
  PhraseList out;
  TokenList current;
  const auto flush = [&] {
    if (!current.empty()) out.emplace_back(std::move(current));
    current.clear();
  };
  for (const auto& t : tokens) {
    if (t == kEosToken) break;
    if (t == kSepToken)
      flush();
    else
      current.push_back(t);
  }
  flush();
  return out;
}

namespace {

void harvest(DecodeResult& result, std::unordered_set<std::string>& seen,
             std::span<const TokenId> ids, double score, const Vocabulary& vocab,
             const EncodedExample& example) {
  const auto tokens = decode_ids(ids, vocab, example.ext_map);
  for (auto& phrase : sequence_to_phrases(tokens)) {
    if (!seen.insert(phrase.stemmed_key()).second) continue;
    if (std::find(phrase.tokens().begin(), phrase.tokens().end(), kUnkToken) !=
        phrase.tokens().end())
      ++result.unk_phrases;
    result.phrases.push_back(std::move(phrase));
    result.scores.push_back(score);
  }
}

double sequence_log_prob(const ModelParams& params, const SourceContext& source,
                         std::span<const TokenId> ids) {
  const auto base = static_cast<std::size_t>(params.gen_out_w.rows());
  Matrix h = init_decoder_state(source.final_state, params);
  Matrix h_sc = Matrix::Zero(static_cast<Index>(params.dims.target_hidden), 1);
  TokenId input = kBosId;
  double total = 0.0;
  for (const auto y : ids) {
    const TokenId in[] = {input};
    auto step = decoder_step_batch(params, source, h, h_sc, in);
    total += std::log(step.p(y, 0));
    input = to_base_id(y, base);
    h_sc = target_encoder_step(input, h_sc.col(0), params);
    h = std::move(step.h);
  }
  return total;
}

}  // namespace

DecodeResult self_terminating_decode(const ModelParams& params, const Vocabulary& vocab,
                                     const EncodedExample& example, Strategy mode,
                                     const BeamOptions& options) {
  if (mode == Strategy::kExhaustive)
    throw std::invalid_argument("self_terminating_decode: mode must be greedy or top-beam");
  const auto source = prepare_source(params, example);
  DecodeResult result;
  result.source_id = example.id;
  result.strategy = mode;
  std::unordered_set<std::string> seen;
  if (mode == Strategy::kGreedy) {
    const auto ids = greedy_decode(params, source, options.max_len);
    harvest(result, seen, ids, sequence_log_prob(params, source, ids), vocab, example);
  } else {
    const auto beams = beam_search(params, source, options);
    if (!beams.empty())
      harvest(result, seen, beams[0].tokens, hypothesis_score(beams[0], options), vocab, example);
  }
  return result;
}

DecodeResult exhaustive_decode(const ModelParams& params, const Vocabulary& vocab,
                               const EncodedExample& example, const BeamOptions& options) {
  const auto source = prepare_source(params, example);
  DecodeResult result;
  result.source_id = example.id;
  result.strategy = Strategy::kExhaustive;
  std::unordered_set<std::string> seen;
  for (const auto& hyp : beam_search(params, source, options))
    harvest(result, seen, hyp.tokens, hypothesis_score(hyp, options), vocab, example);
  return result;
}

DecodeResult decode(const ModelParams& params, const Vocabulary& vocab,
                    const EncodedExample& example, Strategy strategy,
                    const BeamOptions& options) {
  if (strategy == Strategy::kExhaustive) return exhaustive_decode(params, vocab, example, options);
  return self_terminating_decode(params, vocab, example, strategy, options);
}

std::vector<DecodeResult> decode_all(const ModelParams& params, const Vocabulary& vocab,
                                     std::span<const EncodedExample> examples,
                                     Strategy strategy, const BeamOptions& options,
                                     std::size_t threads) {
  std::vector<DecodeResult> results(examples.size());
  threads = std::max<std::size_t>(1, std::min(threads, examples.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < examples.size(); ++i)
      results[i] = decode(params, vocab, examples[i], strategy, options);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < examples.size() && !failed; i = next++) {
        try {
          results[i] = decode(params, vocab, examples[i], strategy, options);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

PredictionRecord to_record(const DecodeResult& result) {
  PredictionRecord r;
  r.id = result.source_id;
  for (const auto& p : result.phrases) r.phrases.push_back(p.text());
  r.scores = result.scores;
  r.strategy = std::string(strategy_name(result.strategy));
  return r;
}

void write_predictions(std::ostream& out, std::span<const PredictionRecord> records) {
  for (const auto& r : records) {
    json obj = {{"id", r.id}, {"phrases", r.phrases}, {"scores", r.scores},
                {"strategy", r.strategy}};
    out << obj.dump() << '\n';
  }
}

std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no, e.byte);
    }
    if (!obj.is_object()) throw ParseError("expected a JSON object", line_no);
    PredictionRecord r;
    try {
      r.id = obj.at("id").get<std::string>();
      r.phrases = obj.at("phrases").get<std::vector<std::string>>();
      if (obj.contains("scores")) r.scores = obj.at("scores").get<std::vector<double>>();
      if (obj.contains("strategy")) r.strategy = obj.at("strategy").get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad prediction record: ") + e.what(), line_no);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace kpg
