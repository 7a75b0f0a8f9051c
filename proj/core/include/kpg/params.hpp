// SPDX-License-Identifier: Apache-2.0
//
// Learned tensors of the encoder / decoder / target-encoder / attention /
// pointer stack.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace kpg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct ModelDims {
  std::size_t vocab = 50000;
  std::size_t embedding = 100;
  std::size_t hidden = 150;         // per encoder direction and decoder
  std::size_t target_hidden = 150;  // target encoder
  std::size_t attention = 150;      // hidden units of the attention energy MLP
  std::size_t generator = 150;      // hidden units before the vocabulary softmax
  std::size_t switch_hidden = 150;  // hidden units of the pointer switch

  std::size_t source_state() const noexcept { return 2 * hidden; }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Gate rows are stacked [reset; update; candidate]. The candidate uses
/// r * (W_hn h + b_hn), as in cuDNN / PyTorch.
struct GruWeights {
  Matrix w_x;  // 3H x in
  Matrix w_h;  // 3H x H
  Vector b_x;  // 3H
  Vector b_h;  // 3H

  std::size_t input_size() const noexcept { return static_cast<std::size_t>(w_x.cols()); }
  std::size_t hidden_size() const noexcept { return static_cast<std::size_t>(w_h.cols()); }
};

struct ModelParams {
  ModelDims dims;

  Matrix embedding;  // V x E; row 0 (<pad>) stays zero

  GruWeights encoder_fwd;     // in E
  GruWeights encoder_bwd;     // in E
  GruWeights decoder;         // in E + S
  GruWeights target_encoder;  // in E, hidden S

  Matrix init_w;  // H x 2H          h_d^0 = tanh(init_w h_e^N + init_b)
  Vector init_b;

  Matrix attn_w;  // A x (H + 2H)    energy = attn_v . tanh(attn_w <h_d, h_e^i> + attn_b)
  Vector attn_b;
  Vector attn_v;  // A

  Matrix gen_hidden_w;  // G x (H + 2H)
  Vector gen_hidden_b;
  Matrix gen_out_w;  // V x G
  Vector gen_out_b;

  Matrix switch_ctx_w;  // P x 2H     s = sigmoid(switch_out . tanh(ctx_w c + ctx_b + dec_w h) + out_b)
  Vector switch_ctx_b;
  Matrix switch_dec_w;  // P x H
  Vector switch_out_w;  // P
  Vector switch_out_b;  // 1

  Matrix bilinear;  // 2H x S

  /// All tensors shaped for `dims` and filled with zeros.
  static ModelParams zeros(const ModelDims& dims);

  /// Uniform(-scale, scale) initialization, with the <pad> embedding row
  /// zeroed. Values are rounded to float precision so checkpoints
  /// round-trip exactly.
  static ModelParams random(const ModelDims& dims, std::uint64_t seed, double scale = 0.1);

  void set_zero();
  std::size_t parameter_count() const;
  bool all_finite() const;
};

/// Calls `f(name, tensor_a, tensor_b, ...)` for every tensor, in a fixed
/// order, across parameter sets of identical layout. Tensors are either
/// `Matrix` or `Vector`.
template <class F, class... Ps>
void for_each_tensor(F&& f, Ps&... ps) {
  f(std::string_view("embedding"), ps.embedding...);
  auto gru = [&](std::string_view prefix, auto member) {
    const std::string p(prefix);
    f(std::string_view(p + ".w_x"), (ps.*member).w_x...);
    f(std::string_view(p + ".w_h"), (ps.*member).w_h...);
    f(std::string_view(p + ".b_x"), (ps.*member).b_x...);
    f(std::string_view(p + ".b_h"), (ps.*member).b_h...);
  };
  gru("encoder_fwd", &ModelParams::encoder_fwd);
  gru("encoder_bwd", &ModelParams::encoder_bwd);
  gru("decoder", &ModelParams::decoder);
  gru("target_encoder", &ModelParams::target_encoder);
  f(std::string_view("init.w"), ps.init_w...);
  f(std::string_view("init.b"), ps.init_b...);
  f(std::string_view("attention.w"), ps.attn_w...);
  f(std::string_view("attention.b"), ps.attn_b...);
  f(std::string_view("attention.v"), ps.attn_v...);
  f(std::string_view("generator.hidden_w"), ps.gen_hidden_w...);
  f(std::string_view("generator.hidden_b"), ps.gen_hidden_b...);
  f(std::string_view("generator.out_w"), ps.gen_out_w...);
  f(std::string_view("generator.out_b"), ps.gen_out_b...);
  f(std::string_view("switch.ctx_w"), ps.switch_ctx_w...);
  f(std::string_view("switch.ctx_b"), ps.switch_ctx_b...);
  f(std::string_view("switch.dec_w"), ps.switch_dec_w...);
  f(std::string_view("switch.out_w"), ps.switch_out_w...);
  f(std::string_view("switch.out_b"), ps.switch_out_b...);
  f(std::string_view("bilinear"), ps.bilinear...);
}

/// Names of the tensors owned by the target encoder.
bool is_target_encoder_tensor(std::string_view name);
/// Names of the tensors owned by the bidirectional source encoder.
bool is_source_encoder_tensor(std::string_view name);

/// One gradient per parameter tensor, same layout as ModelParams.
struct GradientSet {
  ModelParams tensors;

  static GradientSet zeros_like(const ModelParams& params) {
    return GradientSet{ModelParams::zeros(params.dims)};
  }
  double squared_norm() const;
  void scale(double factor);
  void add(const GradientSet& other, double weight = 1.0);
  /// Name of the first tensor containing a non-finite value, or empty.
  std::string first_non_finite() const;
};

/// Rounds every entry to the nearest float.
void round_to_float(ModelParams& params);

}  // namespace kpg
