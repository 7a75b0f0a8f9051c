// SPDX-License-Identifier: Apache-2.0
//
// Forward computations: GRU cells, bidirectional encoder, attentive decoder
// step with the semantic-coverage input, pointer softmax, target encoder and
// the bilinear source/target score.
//
// Batched routines treat matrix columns as independent items (hypotheses or
// a single training example), so training and decoding share one code path.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "kpg/params.hpp"
#include "kpg/random.hpp"
#include "kpg/vocabulary.hpp"

namespace kpg {

/// Inverted dropout. Without a generator (evaluation mode) it is the
/// identity and consumes no randomness.
class Dropout {
 public:
  Dropout() = default;
  Dropout(double rate, Rng* rng) : rate_(rate), rng_(rng) {}

  bool active() const noexcept { return rng_ != nullptr && rate_ > 0.0; }
  /// Entries are 0 (dropped) or 1 / (1 - rate).
  Matrix mask(Eigen::Index rows, Eigen::Index cols) const;

 private:
  double rate_ = 0.0;
  Rng* rng_ = nullptr;
};

struct GruTrace {
  Matrix x;
  Matrix h_prev;
  Matrix r;
  Matrix z;
  Matrix n;
  Matrix hn;  // W_hn h + b_hn, before the reset gate
  Matrix h;
};

GruTrace gru_forward(const GruWeights& w, const Matrix& x, const Matrix& h_prev);

/// Single-vector GRU update. Throws std::invalid_argument on shape mismatch.
Vector gru_cell(const Vector& x, const Vector& h, const GruWeights& w);

struct EncoderOutput {
  Matrix states;       // 2H x N; column t is <h_fwd^t, h_bwd^t>
  Vector final_state;  // column of the last unmasked position
};

struct EncoderTrace {
  std::vector<TokenId> ids;
  Matrix input_mask;  // E x N
  std::vector<GruTrace> fwd;
  std::vector<GruTrace> bwd;
  Matrix state_mask;  // 2H x N
};

/// Runs the bidirectional encoder over `ids` (base vocabulary). Throws
/// std::invalid_argument on an empty source.
EncoderOutput encode_source(const ModelParams& params, std::span<const TokenId> ids,
                            const Dropout& dropout = {}, EncoderTrace* trace = nullptr);

/// Padded variant: only positions with mask != 0 are encoded (in order);
/// masked columns of the output are zero.
EncoderOutput encode_source(const ModelParams& params, std::span<const TokenId> ids,
                            std::span<const std::uint8_t> mask);

Vector init_decoder_state(const Vector& encoder_final, const ModelParams& params);

struct AttentionResult {
  Vector alpha;
  Vector context;
};

/// Masked additive attention. Throws std::invalid_argument if every
/// position is masked.
AttentionResult attention(const Vector& h_d, const Matrix& states,
                          std::span<const std::uint8_t> mask, const ModelParams& params);

/// Softmax over the base vocabulary of the generator MLP.
Vector generative_distribution(const Vector& h_d, const Vector& context, const ModelParams& params);

double pointer_switch(const Vector& context, const Vector& h_d, const ModelParams& params);

/// s * p_a (base ids) + (1 - s) * alpha scattered onto `source_ext_ids`,
/// accumulating repeated ids.
Vector mix_distributions(double s, const Vector& p_a, const Vector& alpha,
                         std::span<const TokenId> source_ext_ids, std::size_t extended_size);

/// One GRU step of the target encoder over the embedding of `prev_id`.
Vector target_encoder_step(TokenId prev_id, const Vector& h_sc, const ModelParams& params);

/// exp(h_a^T B h_b).
double bilinear_score(const Vector& h_a, const Vector& h_b, const Matrix& b);
double bilinear_logit(const Vector& h_a, const Vector& h_b, const Matrix& b);

/// Per-source quantities reused by every decoder step.
struct SourceContext {
  Matrix states;     // 2H x N
  Vector final_state;
  Matrix projected;  // attention projection of the states, A x N
  std::vector<TokenId> ext_ids;
  std::size_t extended_size = 0;
};

SourceContext make_source_context(const ModelParams& params, EncoderOutput encoded,
                                  std::span<const TokenId> source_ext_ids,
                                  std::size_t extended_size);

struct StepTrace {
  Matrix input_mask;  // E x K
  GruTrace gru;
  Matrix state_mask;  // H x K
  Matrix h_drop;      // H x K
  std::vector<Matrix> attn_hidden;  // per column, A x N
  Matrix alpha;       // N x K
  Matrix context;     // 2H x K
  Matrix gen_hidden;  // G x K
  Matrix p_gen;       // V x K
  Matrix switch_hidden;  // P x K
  Vector s;              // K
};

struct StepOutput {
  Matrix h;      // new decoder states (before dropout), H x K
  Matrix p;      // extended-vocabulary distributions, V_ext x K
  Matrix alpha;  // N x K
  Vector s;      // K
};

/// Decoder step for K columns: GRU_d(<x_d, h_SC>, h_d) followed by
/// attention, generator, switch and mixture. `h_sc` enters as a constant.
StepOutput decoder_step_batch(const ModelParams& params, const SourceContext& source,
                              const Matrix& h_prev, const Matrix& h_sc,
                              std::span<const TokenId> input_ids, const Dropout& dropout = {},
                              StepTrace* trace = nullptr);

struct DecoderState {
  Vector h_d;
  Vector h_sc;
  std::size_t step = 0;
};

struct StepDistribution {
  Vector p;
  Vector alpha;
  double s = 0.0;
};

DecoderState initial_decoder_state(const ModelParams& params, const SourceContext& source);

/// Feeds `input_id` (base vocabulary) and returns the advanced state (h_sc
/// unchanged) together with the output distribution.
std::pair<DecoderState, StepDistribution> decoder_step(TokenId input_id, const DecoderState& state,
                                                       const SourceContext& source,
                                                       const ModelParams& params,
                                                       const Dropout& dropout = {});

namespace detail {
Matrix sigmoid(const Matrix& x);
/// Column-wise numerically stable softmax.
Matrix softmax_columns(const Matrix& logits);
Matrix gather_embeddings(const ModelParams& params, std::span<const TokenId> ids);
}  // namespace detail

}  // namespace kpg
