// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "kpg/decoding.hpp"
#include "kpg/evaluation.hpp"
#include "kpg/losses.hpp"
#include "kpg/text.hpp"
#include "support.hpp"

using namespace kpg;

namespace {

ModelDims bench_dims() {
  ModelDims d;
  d.vocab = 2000;
  d.embedding = 100;
  d.hidden = d.target_hidden = d.attention = d.generator = d.switch_hidden = 150;
  return d;
}

EncodedExample bench_example(std::size_t vocab, std::size_t length) {
  Rng rng(11);
  EncodedExample ex;
  ex.base_vocab_size = vocab;
  for (std::size_t i = 0; i < length; ++i) {
    const auto id = static_cast<TokenId>(kNumReserved + rng.below(vocab - kNumReserved));
    ex.source_ids.push_back(id);
    ex.source_ext_ids.push_back(id);
  }
  ex.target_ids = {ex.source_ids[3], kSepId, ex.source_ids[9], kEosId};
  ex.target_in_ids = {kBosId, ex.source_ids[3], kSepId, ex.source_ids[9]};
  return ex;
}

void BM_PorterStem(benchmark::State& state) {
  const std::vector<std::string> words{"generalizations", "oscillators", "relational", "hopefulness",
                                       "conditionally", "electrical", "controlling", "agreed"};
  for (auto _ : state)
    for (const auto& w : words) benchmark::DoNotOptimize(porter_stem(w));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(words.size()));
}
BENCHMARK(BM_PorterStem);

void BM_DecoderStep(benchmark::State& state) {
  const auto params = ModelParams::random(bench_dims(), 1);
  const auto source = prepare_source(params, bench_example(2000, static_cast<std::size_t>(state.range(0))));
  const auto init = initial_decoder_state(params, source);
  for (auto _ : state) benchmark::DoNotOptimize(decoder_step(kBosId, init, source, params));
}
BENCHMARK(BM_DecoderStep)->Arg(100)->Arg(300);

void BM_BeamSearch(benchmark::State& state) {
  const auto params = ModelParams::random(bench_dims(), 1);
  const auto source = prepare_source(params, bench_example(2000, 200));
  BeamOptions opts;
  opts.width = static_cast<std::size_t>(state.range(0));
  opts.max_len = 10;
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(params, source, opts));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_TrainingStep(benchmark::State& state) {
  const auto params = ModelParams::random(bench_dims(), 1);
  std::vector<EncodedExample> examples;
  for (int i = 0; i < 8; ++i) examples.push_back(bench_example(2000, 120));
  const auto batch = make_batch(std::move(examples));
  for (auto _ : state) {
    const auto tape = forward_batch(params, batch, {});
    benchmark::DoNotOptimize(gradients(params, tape, {1.0, 0.03}));
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

void BM_DocumentMetrics(benchmark::State& state) {
  Document doc;
  doc.id = "d";
  doc.source = normalize_and_tokenize("deep networks for keyphrase generation with copy attention and beam search");
  for (const char* g : {"deep networks", "keyphrase generation", "copy attention", "sequence models"})
    doc.gold.push_back(Phrase::from_text(g));
  PhraseList preds;
  for (const char* p : {"beam search", "keyphrase generation", "attention", "deep networks", "copy attention",
                        "generation", "networks", "search", "models", "copy"})
    preds.push_back(Phrase::from_text(p));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_document(doc, preds));
}
BENCHMARK(BM_DocumentMetrics);

}  // namespace

BENCHMARK_MAIN();
