// SPDX-License-Identifier: Apache-2.0
//
// Adam optimization of the combined objective with per-epoch validation
// (greedy self-terminating decoding, F1@O) and best-checkpoint selection.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kpg/corpus.hpp"
#include "kpg/losses.hpp"
#include "kpg/params.hpp"
#include "kpg/vocabulary.hpp"

namespace kpg {

struct TrainConfig {
  std::size_t embedding_dim = 100;
  std::size_t hidden = 150;
  std::size_t target_encoder_hidden = 150;
  std::size_t vocab = 50000;
  std::size_t attention_hidden = 150;
  std::size_t generator_hidden = 150;
  std::size_t switch_hidden = 150;
  double dropout = 0.1;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 20;
  double lambda_or = 1.0;
  double lambda_sc = 0.03;
  std::size_t negatives = 16;
  std::uint64_t seed = 1;
  double clip_norm = 1.0;  // 0 disables clipping
  double init_scale = 0.1;
  std::size_t valid_max_len = 40;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  ModelDims dims(std::size_t vocab_size) const;
  LossWeights loss_weights() const { return {lambda_or, lambda_sc}; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// JSON object whose keys are the field names above.
std::string config_to_json(const TrainConfig& config);
/// Overrides the fields present in `json_text`; unknown keys or mistyped
/// values throw std::invalid_argument.
TrainConfig config_from_json(std::string_view json_text, TrainConfig base = {});

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ModelParams& params);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// Bias-corrected Adam update. Parameters and moments are rounded to float
/// afterwards. Throws DivergenceError naming a tensor whose update is not
/// finite; `params` is left untouched in that case.
void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state,
               double learning_rate);

/// Rescales to global norm `max_norm` when above it; returns the norm
/// before clipping.
double clip_global_norm(GradientSet& grads, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // batch-mean training objective
  double nll = 0.0;
  double l_or = 0.0;
  double l_sc = 0.0;
  double valid_f1_o = 0.0;
};

struct Checkpoint {
  TrainConfig config;
  Vocabulary vocab;
  ModelParams params;
  AdamState adam;
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called with every new best checkpoint, before training continues.
  std::function<void(const Checkpoint&)> on_best;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
};

/// Mean per-example teacher-forced NLL without dropout.
double dataset_nll(const ModelParams& params, std::span<const EncodedExample> examples);

/// Macro F1@O of greedy self-terminating predictions against all gold.
double validation_f1(const ModelParams& params, const Vocabulary& vocab,
                     std::span<const Document> docs, std::size_t max_len);

/// Throws std::invalid_argument on empty datasets and DivergenceError when
/// the loss or an update becomes non-finite (on_best has already seen the
/// last good checkpoint).
TrainResult train(const TrainConfig& config, const Vocabulary& vocab,
                  std::span<const Document> train_docs, std::span<const Document> valid_docs,
                  const TrainHooks& hooks = {});

}  // namespace kpg
