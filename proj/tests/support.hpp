// SPDX-License-Identifier: Apache-2.0
// Shared fixtures: tiny random models and synthetic encoded examples.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kpg/corpus.hpp"
#include "kpg/params.hpp"
#include "kpg/random.hpp"

namespace kpg::test {

inline ModelDims tiny_dims(std::size_t vocab = 12) {
  ModelDims d;
  d.vocab = vocab;
  d.embedding = 6;
  d.hidden = 8;
  d.target_hidden = 8;
  d.attention = 8;
  d.generator = 8;
  d.switch_hidden = 8;
  return d;
}

/// Random example over a base vocabulary of `vocab` ids with up to
/// `max_oov` copyable out-of-vocabulary source tokens.
inline EncodedExample random_example(Rng& rng, std::size_t vocab, std::size_t max_source,
                                     std::size_t max_phrases = 3, std::size_t max_oov = 2) {
  EncodedExample ex;
  ex.base_vocab_size = vocab;
  const auto n = 1 + rng.below(max_source);
  const auto oov = rng.below(max_oov + 1);
  for (std::size_t i = 0; i < oov; ++i) ex.ext_map.push_back("oov" + std::to_string(i));
  for (std::size_t i = 0; i < n; ++i) {
    const auto pick = rng.below(vocab - kNumReserved + oov);
    if (pick < vocab - kNumReserved) {
      const auto id = static_cast<TokenId>(kNumReserved + pick);
      ex.source_ids.push_back(id);
      ex.source_ext_ids.push_back(id);
    } else {
      ex.source_ids.push_back(kUnkId);
      ex.source_ext_ids.push_back(static_cast<TokenId>(vocab + pick - (vocab - kNumReserved)));
    }
  }
  const auto phrases = 1 + rng.below(max_phrases);
  for (std::size_t p = 0; p < phrases; ++p) {
    if (p) ex.target_ids.push_back(kSepId);
    const auto len = 1 + rng.below(2);
    for (std::size_t i = 0; i < len; ++i) {
      if (rng.uniform() < 0.3)
        ex.target_ids.push_back(ex.source_ext_ids[rng.below(ex.source_ext_ids.size())]);
      else
        ex.target_ids.push_back(static_cast<TokenId>(kNumReserved + rng.below(vocab - kNumReserved)));
    }
  }
  ex.target_ids.push_back(kEosId);
  ex.target_in_ids.push_back(kBosId);
  for (std::size_t t = 0; t + 1 < ex.target_ids.size(); ++t)
    ex.target_in_ids.push_back(to_base_id(ex.target_ids[t], vocab));
  ex.id = "ex" + std::to_string(rng.below(1000000));
  return ex;
}

inline Batch random_batch(Rng& rng, std::size_t size, std::size_t vocab, std::size_t max_source) {
  std::vector<EncodedExample> examples;
  for (std::size_t i = 0; i < size; ++i)
    examples.push_back(random_example(rng, vocab, max_source));
  return make_batch(std::move(examples));
}

}  // namespace kpg::test
