// SPDX-License-Identifier: Apache-2.0
#include "kpg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace kpg {

using Eigen::Index;

namespace detail {

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index k = 0; k < logits.cols(); ++k) {
    const double m = logits.col(k).maxCoeff();
    out.col(k) = (logits.col(k).array() - m).exp().matrix();
    out.col(k) /= out.col(k).sum();
  }
  return out;
}

Matrix gather_embeddings(const ModelParams& params, std::span<const TokenId> ids) {
  Matrix x(params.embedding.cols(), static_cast<Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || id >= params.embedding.rows())
      throw std::out_of_range("token id " + std::to_string(id) + " outside the embedding table");
    x.col(static_cast<Index>(i)) = params.embedding.row(id).transpose();
  }
  return x;
}

}  // namespace detail

using detail::sigmoid;
using detail::softmax_columns;

Matrix Dropout::mask(Index rows, Index cols) const {
  if (!active()) return Matrix::Ones(rows, cols);
  const double keep = 1.0 / (1.0 - rate_);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng_->uniform() < rate_ ? 0.0 : keep;
  return m;
}

GruTrace gru_forward(const GruWeights& w, const Matrix& x, const Matrix& h_prev) {
  const Index hidden = w.w_h.cols();
  GruTrace t;
  t.x = x;
  t.h_prev = h_prev;
  Matrix gx = w.w_x * x;
  gx.colwise() += w.b_x;
  Matrix gh = w.w_h * h_prev;
  gh.colwise() += w.b_h;
  t.r = sigmoid(gx.topRows(hidden) + gh.topRows(hidden));
  t.z = sigmoid(gx.middleRows(hidden, hidden) + gh.middleRows(hidden, hidden));
  t.hn = gh.bottomRows(hidden);
  t.n = (gx.bottomRows(hidden) + t.r.cwiseProduct(t.hn)).array().tanh().matrix();
  t.h = (1.0 - t.z.array()) * t.n.array() + t.z.array() * h_prev.array();
  return t;
}

Vector gru_cell(const Vector& x, const Vector& h, const GruWeights& w) {
  if (w.w_x.rows() != 3 * w.w_h.cols() || w.w_h.rows() != 3 * w.w_h.cols() ||
      w.b_x.size() != w.w_x.rows() || w.b_h.size() != w.w_h.rows())
    throw std::invalid_argument("gru_cell: inconsistent weight shapes");
  if (x.size() != w.w_x.cols() || h.size() != w.w_h.cols())
    throw std::invalid_argument("gru_cell: input of size " + std::to_string(x.size()) +
                                " / state of size " + std::to_string(h.size()) +
                                " does not match weights (" + std::to_string(w.w_x.cols()) +
                                ", " + std::to_string(w.w_h.cols()) + ")");
  return gru_forward(w, x, h).h.col(0);
}

EncoderOutput encode_source(const ModelParams& params, std::span<const TokenId> ids,
                            const Dropout& dropout, EncoderTrace* trace) {
  if (ids.empty()) throw std::invalid_argument("encode_source: empty source");
  const auto n = static_cast<Index>(ids.size());
  const auto hidden = static_cast<Index>(params.dims.hidden);

  const Matrix in_mask = dropout.mask(params.embedding.cols(), n);
  const Matrix x = detail::gather_embeddings(params, ids).cwiseProduct(in_mask);

  Matrix raw(2 * hidden, n);
  std::vector<GruTrace> fwd, bwd;
  if (trace) {
    fwd.resize(ids.size());
    bwd.resize(ids.size());
  }
  Matrix h = Matrix::Zero(hidden, 1);
  for (Index t = 0; t < n; ++t) {
    auto g = gru_forward(params.encoder_fwd, x.col(t), h);
    h = g.h;
    raw.col(t).head(hidden) = h.col(0);
    if (trace) fwd[static_cast<std::size_t>(t)] = std::move(g);
  }
  h = Matrix::Zero(hidden, 1);
  for (Index t = n - 1; t >= 0; --t) {
    auto g = gru_forward(params.encoder_bwd, x.col(t), h);
    h = g.h;
    raw.col(t).tail(hidden) = h.col(0);
    if (trace) bwd[static_cast<std::size_t>(t)] = std::move(g);
  }
  const Matrix state_mask = dropout.mask(2 * hidden, n);
  EncoderOutput out;
  out.states = raw.cwiseProduct(state_mask);
  out.final_state = out.states.col(n - 1);
  if (trace) {
    trace->ids.assign(ids.begin(), ids.end());
    trace->input_mask = in_mask;
    trace->fwd = std::move(fwd);
    trace->bwd = std::move(bwd);
    trace->state_mask = state_mask;
  }
  return out;
}

EncoderOutput encode_source(const ModelParams& params, std::span<const TokenId> ids,
                            std::span<const std::uint8_t> mask) {
  if (mask.size() != ids.size()) throw std::invalid_argument("encode_source: mask size mismatch");
  std::vector<TokenId> kept;
  std::vector<Index> where;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (mask[i]) {
      kept.push_back(ids[i]);
      where.push_back(static_cast<Index>(i));
    }
  }
  auto compact = encode_source(params, kept);
  EncoderOutput out;
  out.states = Matrix::Zero(compact.states.rows(), static_cast<Index>(ids.size()));
  for (std::size_t j = 0; j < where.size(); ++j)
    out.states.col(where[j]) = compact.states.col(static_cast<Index>(j));
  out.final_state = std::move(compact.final_state);
  return out;
}

Vector init_decoder_state(const Vector& encoder_final, const ModelParams& params) {
  return (params.init_w * encoder_final + params.init_b).array().tanh().matrix();
}

AttentionResult attention(const Vector& h_d, const Matrix& states,
                          std::span<const std::uint8_t> mask, const ModelParams& params) {
  const auto n = states.cols();
  if (static_cast<Index>(mask.size()) != n)
    throw std::invalid_argument("attention: mask size mismatch");
  const auto hidden = static_cast<Index>(params.dims.hidden);
  const Vector q = params.attn_w.leftCols(hidden) * h_d + params.attn_b;
  const Matrix proj = params.attn_w.rightCols(states.rows()) * states;
  Vector energy(n);
  double max_e = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (Index i = 0; i < n; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    energy(i) = params.attn_v.dot((proj.col(i) + q).array().tanh().matrix());
    max_e = std::max(max_e, energy(i));
    any = true;
  }
  if (!any) throw std::invalid_argument("attention: every source position is masked");
  AttentionResult r;
  r.alpha = Vector::Zero(n);
  for (Index i = 0; i < n; ++i)
    if (mask[static_cast<std::size_t>(i)]) r.alpha(i) = std::exp(energy(i) - max_e);
  r.alpha /= r.alpha.sum();
  r.context = states * r.alpha;
  return r;
}

Vector generative_distribution(const Vector& h_d, const Vector& context, const ModelParams& params) {
  Vector in(h_d.size() + context.size());
  in << h_d, context;
  const Vector hidden = (params.gen_hidden_w * in + params.gen_hidden_b).array().tanh().matrix();
  return softmax_columns(params.gen_out_w * hidden + params.gen_out_b).col(0);
}

double pointer_switch(const Vector& context, const Vector& h_d, const ModelParams& params) {
  const Vector u = (params.switch_ctx_w * context + params.switch_ctx_b + params.switch_dec_w * h_d)
                       .array()
                       .tanh()
                       .matrix();
  return 1.0 / (1.0 + std::exp(-(params.switch_out_w.dot(u) + params.switch_out_b(0))));
}

Vector mix_distributions(double s, const Vector& p_a, const Vector& alpha,
                         std::span<const TokenId> source_ext_ids, std::size_t extended_size) {
  if (static_cast<std::size_t>(alpha.size()) != source_ext_ids.size())
    throw std::invalid_argument("mix_distributions: alpha / source length mismatch");
  Vector p = Vector::Zero(static_cast<Index>(extended_size));
  p.head(p_a.size()) = s * p_a;
  for (std::size_t i = 0; i < source_ext_ids.size(); ++i)
    p(source_ext_ids[i]) += (1.0 - s) * alpha(static_cast<Index>(i));
  return p;
}

Vector target_encoder_step(TokenId prev_id, const Vector& h_sc, const ModelParams& params) {
  const TokenId ids[] = {prev_id};
  return gru_forward(params.target_encoder, detail::gather_embeddings(params, ids), h_sc).h.col(0);
}

double bilinear_logit(const Vector& h_a, const Vector& h_b, const Matrix& b) {
  return h_a.dot(b * h_b);
}

double bilinear_score(const Vector& h_a, const Vector& h_b, const Matrix& b) {
  return std::exp(bilinear_logit(h_a, h_b, b));
}

SourceContext make_source_context(const ModelParams& params, EncoderOutput encoded,
                                  std::span<const TokenId> source_ext_ids,
                                  std::size_t extended_size) {
  if (static_cast<Index>(source_ext_ids.size()) != encoded.states.cols())
    throw std::invalid_argument("make_source_context: ext ids / states length mismatch");
  SourceContext c;
  c.states = std::move(encoded.states);
  c.final_state = std::move(encoded.final_state);
  c.projected = params.attn_w.rightCols(c.states.rows()) * c.states;
  c.ext_ids.assign(source_ext_ids.begin(), source_ext_ids.end());
  c.extended_size = extended_size;
  return c;
}

StepOutput decoder_step_batch(const ModelParams& params, const SourceContext& source,
                              const Matrix& h_prev, const Matrix& h_sc,
                              std::span<const TokenId> input_ids, const Dropout& dropout,
                              StepTrace* trace) {
  const auto k_cols = static_cast<Index>(input_ids.size());
  const auto hidden = static_cast<Index>(params.dims.hidden);
  const auto emb = params.embedding.cols();
  const auto n = source.states.cols();
  const auto vocab = params.gen_out_w.rows();

  const Matrix in_mask = dropout.mask(emb, k_cols);
  Matrix x(emb + h_sc.rows(), k_cols);
  x.topRows(emb) = detail::gather_embeddings(params, input_ids).cwiseProduct(in_mask);
  x.bottomRows(h_sc.rows()) = h_sc;
  auto gru = gru_forward(params.decoder, x, h_prev);

  const Matrix state_mask = dropout.mask(hidden, k_cols);
  const Matrix h_drop = gru.h.cwiseProduct(state_mask);

  Matrix q = params.attn_w.leftCols(hidden) * h_drop;
  q.colwise() += params.attn_b;
  Matrix alpha(n, k_cols);
  std::vector<Matrix> attn_hidden;
  if (trace) attn_hidden.resize(static_cast<std::size_t>(k_cols));
  for (Index k = 0; k < k_cols; ++k) {
    Matrix a = source.projected.colwise() + q.col(k);
    a = a.array().tanh().matrix();
    Vector e = a.transpose() * params.attn_v;
    e = (e.array() - e.maxCoeff()).exp().matrix();
    alpha.col(k) = e / e.sum();
    if (trace) attn_hidden[static_cast<std::size_t>(k)] = std::move(a);
  }
  const Matrix context = source.states * alpha;

  Matrix gen_in(hidden + context.rows(), k_cols);
  gen_in << h_drop, context;
  Matrix gen_hidden = params.gen_hidden_w * gen_in;
  gen_hidden.colwise() += params.gen_hidden_b;
  gen_hidden = gen_hidden.array().tanh().matrix();
  Matrix logits = params.gen_out_w * gen_hidden;
  logits.colwise() += params.gen_out_b;
  Matrix p_gen = softmax_columns(logits);

  Matrix sw = params.switch_ctx_w * context + params.switch_dec_w * h_drop;
  sw.colwise() += params.switch_ctx_b;
  sw = sw.array().tanh().matrix();
  Vector s_pre = sw.transpose() * params.switch_out_w;
  s_pre.array() += params.switch_out_b(0);
  const Vector s = sigmoid(s_pre);

  StepOutput out;
  out.p = Matrix::Zero(static_cast<Index>(source.extended_size), k_cols);
  for (Index k = 0; k < k_cols; ++k) {
    out.p.col(k).head(vocab) = s(k) * p_gen.col(k);
    for (Index i = 0; i < n; ++i)
      out.p(source.ext_ids[static_cast<std::size_t>(i)], k) += (1.0 - s(k)) * alpha(i, k);
  }
  out.h = gru.h;
  out.alpha = alpha;
  out.s = s;
  if (trace) {
    trace->input_mask = in_mask;
    trace->gru = std::move(gru);
    trace->state_mask = state_mask;
    trace->h_drop = h_drop;
    trace->attn_hidden = std::move(attn_hidden);
    trace->alpha = alpha;
    trace->context = context;
    trace->gen_hidden = std::move(gen_hidden);
    trace->p_gen = std::move(p_gen);
    trace->switch_hidden = std::move(sw);
    trace->s = s;
  }
  return out;
}

DecoderState initial_decoder_state(const ModelParams& params, const SourceContext& source) {
  DecoderState st;
  st.h_d = init_decoder_state(source.final_state, params);
  st.h_sc = Vector::Zero(static_cast<Index>(params.dims.target_hidden));
  return st;
}

std::pair<DecoderState, StepDistribution> decoder_step(TokenId input_id, const DecoderState& state,
                                                       const SourceContext& source,
                                                       const ModelParams& params,
                                                       const Dropout& dropout) {
  const TokenId ids[] = {input_id};
  auto out = decoder_step_batch(params, source, state.h_d, state.h_sc, ids, dropout);
  DecoderState next{out.h.col(0), state.h_sc, state.step + 1};
  StepDistribution dist{out.p.col(0), out.alpha.col(0), out.s(0)};
  return {std::move(next), std::move(dist)};
}

}  // namespace kpg
