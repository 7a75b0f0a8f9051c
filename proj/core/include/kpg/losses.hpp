// SPDX-License-Identifier: Apache-2.0
//
// Training objective: token NLL + lambda_OR * orthogonal regularization +
// lambda_SC * semantic coverage, and exact gradients with two detached paths:
//   - the target-encoder state fed to the decoder GRU carries no gradient;
//   - source-encoder final states entering the coverage loss carry none.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kpg/corpus.hpp"
#include "kpg/model.hpp"
#include "kpg/params.hpp"

namespace kpg {

struct LossWeights {
  double lambda_or = 0.0;
  double lambda_sc = 0.0;
};

struct LossBreakdown {
  double nll = 0.0;
  double l_or = 0.0;
  double l_sc = 0.0;
  double total = 0.0;
  double lambda_or = 0.0;
  double lambda_sc = 0.0;
};

inline constexpr double kMinProbability = 1e-12;

/// Mean of -log p_t(target_t) over positions with mask != 0; probabilities
/// below 1e-12 are clamped. Throws std::out_of_range on an id outside its
/// distribution.
double nll_loss(std::span<const Vector> distributions, std::span<const TokenId> targets,
                std::span<const std::uint8_t> mask);

/// -log softmax(h_i^T B h_sc)[true_index] over the candidates, evaluated with
/// log-sum-exp. Throws std::invalid_argument with fewer than two candidates.
double semantic_coverage_loss(const Vector& h_sc_final, std::span<const Vector> candidates,
                              std::size_t true_index, const Matrix& bilinear);

/// Frobenius norm of the off-diagonal part of H^T H; columns of `states` are
/// the delimiter-position decoder states. Zero for fewer than two columns.
double orthogonal_reg_loss(const Matrix& states);

LossBreakdown combine_losses(double nll, double l_or, double l_sc, LossWeights weights);

struct ForwardOptions {
  double dropout = 0.0;  // 0 disables dropout (evaluation mode)
  std::uint64_t seed = 0;
  std::size_t negatives = 16;
};

/// Values that enter the loss through detached paths. Supplying them to
/// forward_batch freezes those paths (used by finite-difference checks).
struct DetachedInputs {
  std::vector<Matrix> target_states;  // per example: S x T, h_SC fed at step t
  Matrix encoder_finals;              // 2H x B, coverage-loss candidates
};

struct ExampleTape {
  EncoderTrace encoder;
  SourceContext source;
  Vector h0;
  std::vector<StepTrace> steps;
  std::vector<GruTrace> target_steps;
  Matrix target_states;  // S x T, detached decoder inputs
  Vector h_sc_final;
  std::vector<TokenId> targets;
  std::vector<TokenId> inputs;
  std::vector<TokenId> target_encoder_inputs;
  std::vector<double> p_target;
  std::vector<std::size_t> delimiter_positions;
  Matrix delimiter_states;  // H x n, undropped
  std::vector<std::size_t> candidates;  // batch indices, includes self
  std::size_t true_index = 0;
  double nll = 0.0;
  double l_or = 0.0;
  double l_sc = 0.0;
};

struct BatchTape {
  std::vector<ExampleTape> examples;
  Matrix encoder_finals;  // 2H x B as used by the coverage loss
  bool coverage_defined = false;  // false for single-example batches
  double nll = 0.0;   // means over examples
  double l_or = 0.0;
  double l_sc = 0.0;

  DetachedInputs detached() const;
};

/// Teacher-forced forward pass over every example of the batch.
BatchTape forward_batch(const ModelParams& params, const Batch& batch,
                        const ForwardOptions& options, const DetachedInputs* frozen = nullptr);

LossBreakdown total_loss(const BatchTape& tape, LossWeights weights);

/// Analytic gradient of total_loss(tape, weights). Throws DivergenceError
/// naming the first tensor with a non-finite entry.
GradientSet gradients(const ModelParams& params, const BatchTape& tape, LossWeights weights);

}  // namespace kpg
