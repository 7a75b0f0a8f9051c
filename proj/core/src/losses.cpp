// SPDX-License-Identifier: Apache-2.0
#include "kpg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "kpg/error.hpp"

namespace kpg {

using Eigen::Index;

double nll_loss(std::span<const Vector> distributions, std::span<const TokenId> targets,
                std::span<const std::uint8_t> mask) {
  if (distributions.size() != targets.size() || targets.size() != mask.size())
    throw std::invalid_argument("nll_loss: length mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (!mask[t]) continue;
    const auto y = targets[t];
    if (y < 0 || y >= distributions[t].size())
      throw std::out_of_range("nll_loss: target id " + std::to_string(y) + " outside distribution");
    sum -= std::log(std::max(distributions[t](y), kMinProbability));
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

namespace {

Vector coverage_logits(const Vector& h_sc, std::span<const Vector> candidates, const Matrix& b) {
  const Vector bh = b * h_sc;
  Vector logits(static_cast<Index>(candidates.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i)
    logits(static_cast<Index>(i)) = candidates[i].dot(bh);
  return logits;
}

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

double semantic_coverage_loss(const Vector& h_sc_final, std::span<const Vector> candidates,
                              std::size_t true_index, const Matrix& bilinear) {
  if (candidates.size() < 2)
    throw std::invalid_argument("semantic_coverage_loss: needs at least two candidates");
  if (true_index >= candidates.size())
    throw std::invalid_argument("semantic_coverage_loss: true_index out of range");
  const Vector logits = coverage_logits(h_sc_final, candidates, bilinear);
  return log_sum_exp(logits) - logits(static_cast<Index>(true_index));
}

double orthogonal_reg_loss(const Matrix& states) {
  if (states.cols() < 2) return 0.0;
  Matrix gram = states.transpose() * states;
  gram.diagonal().setZero();
  return gram.norm();
}

LossBreakdown combine_losses(double nll, double l_or, double l_sc, LossWeights w) {
  LossBreakdown b;
  b.nll = nll;
  b.l_or = l_or;
  b.l_sc = l_sc;
  b.lambda_or = w.lambda_or;
  b.lambda_sc = w.lambda_sc;
  b.total = nll + w.lambda_or * l_or + w.lambda_sc * l_sc;
  return b;
}

DetachedInputs BatchTape::detached() const {
  DetachedInputs d;
  for (const auto& ex : examples) d.target_states.push_back(ex.target_states);
  d.encoder_finals = encoder_finals;
  return d;
}

namespace {

constexpr std::uint64_t kNegativeStream = 0x6e656761746976ULL;

ExampleTape forward_example(const ModelParams& params, const EncodedExample& ex, Rng* rng,
                            double dropout_rate, const Matrix* frozen_targets) {
  const Dropout dropout = rng ? Dropout(dropout_rate, rng) : Dropout();
  ExampleTape tape;
  auto encoded = encode_source(params, ex.source_ids, dropout, &tape.encoder);
  tape.source = make_source_context(params, std::move(encoded), ex.source_ext_ids,
                                    ex.extended_size());
  tape.h0 = init_decoder_state(tape.source.final_state, params);

  const auto steps = ex.target_ids.size();
  const auto s_dim = static_cast<Index>(params.dims.target_hidden);
  tape.targets = ex.target_ids;
  tape.inputs = ex.target_in_ids;

  // Target encoder over the gold tokens; h_SC^0 = 0.
  tape.target_states = Matrix::Zero(s_dim, static_cast<Index>(steps));
  Matrix h_sc = Matrix::Zero(s_dim, 1);
  for (std::size_t t = 0; t < steps; ++t) {
    tape.target_states.col(static_cast<Index>(t)) = h_sc.col(0);
    const TokenId id = to_base_id(ex.target_ids[t], ex.base_vocab_size);
    tape.target_encoder_inputs.push_back(id);
    const TokenId ids[] = {id};
    auto g = gru_forward(params.target_encoder, detail::gather_embeddings(params, ids), h_sc);
    h_sc = g.h;
    tape.target_steps.push_back(std::move(g));
  }
  tape.h_sc_final = h_sc.col(0);
  const Matrix& decoder_sc = frozen_targets ? *frozen_targets : tape.target_states;

  Matrix h = tape.h0;
  double nll = 0.0;
  tape.steps.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const TokenId ids[] = {ex.target_in_ids[t]};
    auto out = decoder_step_batch(params, tape.source, h, decoder_sc.col(static_cast<Index>(t)),
                                  ids, dropout, &tape.steps[t]);
    const double p = out.p(ex.target_ids[t], 0);
    tape.p_target.push_back(p);
    nll -= std::log(std::max(p, kMinProbability));
    h = std::move(out.h);
    if (ex.target_ids[t] == kSepId || ex.target_ids[t] == kEosId)
      tape.delimiter_positions.push_back(t);
  }
  tape.nll = steps == 0 ? 0.0 : nll / static_cast<double>(steps);

  tape.delimiter_states.resize(static_cast<Index>(params.dims.hidden),
                               static_cast<Index>(tape.delimiter_positions.size()));
  for (std::size_t j = 0; j < tape.delimiter_positions.size(); ++j)
    tape.delimiter_states.col(static_cast<Index>(j)) =
        tape.steps[tape.delimiter_positions[j]].gru.h.col(0);
  tape.l_or = orthogonal_reg_loss(tape.delimiter_states);
  return tape;
}

}  // namespace

BatchTape forward_batch(const ModelParams& params, const Batch& batch,
                        const ForwardOptions& options, const DetachedInputs* frozen) {
  const auto n = batch.size();
  if (n == 0) throw std::invalid_argument("forward_batch: empty batch");
  BatchTape tape;
  tape.examples.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    Rng rng(mix_seed(options.seed, j));
    tape.examples.push_back(forward_example(params, batch.examples[j],
                                            options.dropout > 0.0 ? &rng : nullptr,
                                            options.dropout,
                                            frozen ? &frozen->target_states[j] : nullptr));
  }

  if (frozen) {
    tape.encoder_finals = frozen->encoder_finals;
  } else {
    tape.encoder_finals.resize(static_cast<Index>(params.dims.source_state()),
                               static_cast<Index>(n));
    for (std::size_t j = 0; j < n; ++j)
      tape.encoder_finals.col(static_cast<Index>(j)) = tape.examples[j].source.final_state;
  }

  tape.coverage_defined = n >= 2;
  Rng neg_rng(mix_seed(options.seed, kNegativeStream));
  for (std::size_t j = 0; j < n; ++j) {
    auto& ex = tape.examples[j];
    if (!tape.coverage_defined) continue;
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < n; ++i)
      if (i != j) others.push_back(i);
    if (others.size() > options.negatives) {
      neg_rng.shuffle(std::span<std::size_t>(others));
      others.resize(options.negatives);
    }
    others.push_back(j);
    std::sort(others.begin(), others.end());
    ex.candidates = others;
    ex.true_index = static_cast<std::size_t>(
        std::find(others.begin(), others.end(), j) - others.begin());
    std::vector<Vector> cands;
    for (auto i : ex.candidates) cands.push_back(tape.encoder_finals.col(static_cast<Index>(i)));
    ex.l_sc = semantic_coverage_loss(ex.h_sc_final, cands, ex.true_index, params.bilinear);
  }

  for (const auto& ex : tape.examples) {
    tape.nll += ex.nll;
    tape.l_or += ex.l_or;
    tape.l_sc += ex.l_sc;
  }
  const double inv = 1.0 / static_cast<double>(n);
  tape.nll *= inv;
  tape.l_or *= inv;
  tape.l_sc *= inv;
  return tape;
}

LossBreakdown total_loss(const BatchTape& tape, LossWeights weights) {
  return combine_losses(tape.nll, tape.l_or, tape.l_sc, weights);
}

namespace {

/// Accumulates weight gradients into `g`; returns (dx, dh_prev).
std::pair<Matrix, Matrix> gru_backward(const GruWeights& w, const GruTrace& t, const Matrix& dh,
                                       GruWeights& g) {
  const Index hidden = w.w_h.cols();
  const Matrix dn = dh.cwiseProduct((1.0 - t.z.array()).matrix());
  const Matrix dz = dh.cwiseProduct(t.h_prev - t.n);
  Matrix dh_prev = dh.cwiseProduct(t.z);
  const Matrix dn_pre = dn.cwiseProduct((1.0 - t.n.array().square()).matrix());
  const Matrix dhn = dn_pre.cwiseProduct(t.r);
  const Matrix dr = dn_pre.cwiseProduct(t.hn);
  const Matrix dr_pre = dr.cwiseProduct((t.r.array() * (1.0 - t.r.array())).matrix());
  const Matrix dz_pre = dz.cwiseProduct((t.z.array() * (1.0 - t.z.array())).matrix());

  Matrix dgx(3 * hidden, dh.cols());
  dgx << dr_pre, dz_pre, dn_pre;
  Matrix dgh(3 * hidden, dh.cols());
  dgh << dr_pre, dz_pre, dhn;

  g.w_x.noalias() += dgx * t.x.transpose();
  g.b_x += dgx.rowwise().sum();
  g.w_h.noalias() += dgh * t.h_prev.transpose();
  g.b_h += dgh.rowwise().sum();
  Matrix dx = w.w_x.transpose() * dgx;
  dh_prev.noalias() += w.w_h.transpose() * dgh;
  return {std::move(dx), std::move(dh_prev)};
}

void add_embedding_grad(ModelParams& g, TokenId id, const Vector& d) {
  g.embedding.row(id) += d.transpose();
}

void backward_example(const ModelParams& params, const ExampleTape& ex, double weight,
                      LossWeights lw, const Vector* coverage_dlogits,
                      const Matrix& encoder_finals, ModelParams& g) {
  const auto hidden = static_cast<Index>(params.dims.hidden);
  const auto emb = params.embedding.cols();
  const auto vocab = params.gen_out_w.rows();
  const auto& states = ex.source.states;
  const auto n = states.cols();
  const auto two_h = states.rows();
  const auto steps = ex.steps.size();

  // Orthogonal-regularization gradient on each delimiter state.
  Matrix d_delim = Matrix::Zero(hidden, ex.delimiter_states.cols());
  if (lw.lambda_or != 0.0 && ex.l_or > 0.0) {
    Matrix off = ex.delimiter_states.transpose() * ex.delimiter_states;
    off.diagonal().setZero();
    d_delim = (weight * lw.lambda_or * 2.0 / ex.l_or) * (ex.delimiter_states * off);
  }

  Matrix d_states = Matrix::Zero(two_h, n);
  Matrix d_attn_sum = Matrix::Zero(params.attn_w.rows(), n);
  Matrix dh_next = Matrix::Zero(hidden, 1);
  std::size_t delim_cursor = ex.delimiter_positions.size();
  const double token_weight = steps == 0 ? 0.0 : weight / static_cast<double>(steps);

  for (std::size_t tt = steps; tt-- > 0;) {
    const auto& st = ex.steps[tt];
    Matrix dh = dh_next;
    if (delim_cursor > 0 && ex.delimiter_positions[delim_cursor - 1] == tt) {
      --delim_cursor;
      dh.col(0) += d_delim.col(static_cast<Index>(delim_cursor));
    }

    const TokenId y = ex.targets[tt];
    const double p = ex.p_target[tt];
    const double dp = p >= kMinProbability ? -token_weight / p : 0.0;
    const double s = st.s(0);
    const double pa_y = y < vocab ? st.p_gen(y, 0) : 0.0;
    Vector dalpha = Vector::Zero(n);
    double copy_mass = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (ex.source.ext_ids[static_cast<std::size_t>(i)] == y) {
        copy_mass += st.alpha(i, 0);
        dalpha(i) = dp * (1.0 - s);
      }
    }
    const double ds = dp * (pa_y - copy_mass);

    // Pointer switch.
    const double dq = ds * s * (1.0 - s);
    const Vector u = st.switch_hidden.col(0);
    g.switch_out_w += dq * u;
    g.switch_out_b(0) += dq;
    const Vector du_pre =
        (dq * params.switch_out_w).cwiseProduct((1.0 - u.array().square()).matrix());
    const Vector ctx = st.context.col(0);
    const Vector h_drop = st.h_drop.col(0);
    g.switch_ctx_w.noalias() += du_pre * ctx.transpose();
    g.switch_ctx_b += du_pre;
    g.switch_dec_w.noalias() += du_pre * h_drop.transpose();
    Vector d_ctx = params.switch_ctx_w.transpose() * du_pre;
    Vector d_hdrop = params.switch_dec_w.transpose() * du_pre;

    // Generator softmax; only the target entry has a nonzero upstream grad.
    if (y < vocab && dp != 0.0) {
      const Vector p_gen = st.p_gen.col(0);
      Vector d_logits = -(dp * s * pa_y) * p_gen;
      d_logits(y) += dp * s * pa_y;
      const Vector gh = st.gen_hidden.col(0);
      g.gen_out_w.noalias() += d_logits * gh.transpose();
      g.gen_out_b += d_logits;
      const Vector dg = (params.gen_out_w.transpose() * d_logits)
                            .cwiseProduct((1.0 - gh.array().square()).matrix());
      Vector gen_in(hidden + two_h);
      gen_in << h_drop, ctx;
      g.gen_hidden_w.noalias() += dg * gen_in.transpose();
      g.gen_hidden_b += dg;
      const Vector d_in = params.gen_hidden_w.transpose() * dg;
      d_hdrop += d_in.head(hidden);
      d_ctx += d_in.tail(two_h);
    }

    // Context vector and attention softmax.
    const Vector alpha = st.alpha.col(0);
    dalpha.noalias() += states.transpose() * d_ctx;
    d_states.noalias() += d_ctx * alpha.transpose();
    const Vector de = alpha.cwiseProduct((dalpha.array() - alpha.dot(dalpha)).matrix());
    const Matrix& a = st.attn_hidden[0];
    g.attn_v.noalias() += a * de;
    Matrix d_pre = params.attn_v * de.transpose();
    d_pre.array() *= 1.0 - a.array().square();
    const Vector dq_attn = d_pre.rowwise().sum();
    g.attn_b += dq_attn;
    g.attn_w.leftCols(hidden).noalias() += dq_attn * h_drop.transpose();
    d_hdrop.noalias() += params.attn_w.leftCols(hidden).transpose() * dq_attn;
    d_attn_sum += d_pre;

    dh.col(0) += d_hdrop.cwiseProduct(st.state_mask.col(0));
    auto [dx, dh_prev] = gru_backward(params.decoder, st.gru, dh, g.decoder);
    // dx.bottomRows(S) is the gradient w.r.t. the detached h_SC input: dropped.
    add_embedding_grad(g, ex.inputs[tt], dx.col(0).head(emb).cwiseProduct(st.input_mask.col(0)));
    dh_next = std::move(dh_prev);
  }

  // Initial decoder state.
  const Vector d_pre0 = dh_next.col(0).cwiseProduct((1.0 - ex.h0.array().square()).matrix());
  g.init_w.noalias() += d_pre0 * ex.source.final_state.transpose();
  g.init_b += d_pre0;
  d_states.col(n - 1).noalias() += params.init_w.transpose() * d_pre0;

  // Attention projection of the source states (shared by every step).
  g.attn_w.rightCols(two_h).noalias() += d_attn_sum * states.transpose();
  d_states.noalias() += params.attn_w.rightCols(two_h).transpose() * d_attn_sum;

  // Bidirectional encoder.
  const Matrix d_raw = d_states.cwiseProduct(ex.encoder.state_mask);
  Matrix d_x = Matrix::Zero(emb, n);
  Matrix dh = Matrix::Zero(hidden, 1);
  for (Index t = n - 1; t >= 0; --t) {
    dh.col(0) += d_raw.col(t).head(hidden);
    auto [dx, dh_prev] =
        gru_backward(params.encoder_fwd, ex.encoder.fwd[static_cast<std::size_t>(t)], dh,
                     g.encoder_fwd);
    d_x.col(t) += dx.col(0);
    dh = std::move(dh_prev);
  }
  dh.setZero();
  for (Index t = 0; t < n; ++t) {
    dh.col(0) += d_raw.col(t).tail(hidden);
    auto [dx, dh_prev] =
        gru_backward(params.encoder_bwd, ex.encoder.bwd[static_cast<std::size_t>(t)], dh,
                     g.encoder_bwd);
    d_x.col(t) += dx.col(0);
    dh = std::move(dh_prev);
  }
  d_x.array() *= ex.encoder.input_mask.array();
  for (Index t = 0; t < n; ++t)
    add_embedding_grad(g, ex.encoder.ids[static_cast<std::size_t>(t)], d_x.col(t));

  // Semantic coverage: trains the bilinear map and the target encoder only.
  if (coverage_dlogits) {
    Vector weighted = Vector::Zero(encoder_finals.rows());
    for (std::size_t i = 0; i < ex.candidates.size(); ++i)
      weighted += (*coverage_dlogits)(static_cast<Index>(i)) *
                  encoder_finals.col(static_cast<Index>(ex.candidates[i]));
    g.bilinear.noalias() += weighted * ex.h_sc_final.transpose();
    Matrix dsc = params.bilinear.transpose() * weighted;
    for (std::size_t t = ex.target_steps.size(); t-- > 0;) {
      auto [dx, dh_prev] =
          gru_backward(params.target_encoder, ex.target_steps[t], dsc, g.target_encoder);
      add_embedding_grad(g, ex.target_encoder_inputs[t], dx.col(0));
      dsc = std::move(dh_prev);
    }
  }
}

}  // namespace

GradientSet gradients(const ModelParams& params, const BatchTape& tape, LossWeights weights) {
  auto grads = GradientSet::zeros_like(params);
  const double weight = 1.0 / static_cast<double>(tape.examples.size());
  for (const auto& ex : tape.examples) {
    Vector dlogits;
    const Vector* cov = nullptr;
    if (tape.coverage_defined && weights.lambda_sc != 0.0) {
      std::vector<Vector> cands;
      for (auto i : ex.candidates) cands.push_back(tape.encoder_finals.col(static_cast<Index>(i)));
      const Vector logits = coverage_logits(ex.h_sc_final, cands, params.bilinear);
      dlogits = (logits.array() - log_sum_exp(logits)).exp().matrix();
      dlogits(static_cast<Index>(ex.true_index)) -= 1.0;
      dlogits *= weight * weights.lambda_sc;
      cov = &dlogits;
    }
    backward_example(params, ex, weight, weights, cov, tape.encoder_finals, grads.tensors);
  }
  grads.tensors.embedding.row(kPadId).setZero();
  if (auto bad = grads.first_non_finite(); !bad.empty())
    throw DivergenceError("non-finite gradient in tensor '" + bad + "'");
  return grads;
}

}  // namespace kpg
