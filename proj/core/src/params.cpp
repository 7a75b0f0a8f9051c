// SPDX-License-Identifier: Apache-2.0
#include "kpg/params.hpp"

#include <cmath>

#include "kpg/random.hpp"

namespace kpg {
namespace {

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

GruWeights gru_zeros(std::size_t in, std::size_t hidden) {
  GruWeights g;
  g.w_x = Matrix::Zero(idx(3 * hidden), idx(in));
  g.w_h = Matrix::Zero(idx(3 * hidden), idx(hidden));
  g.b_x = Vector::Zero(idx(3 * hidden));
  g.b_h = Vector::Zero(idx(3 * hidden));
  return g;
}

}  // namespace

ModelParams ModelParams::zeros(const ModelDims& d) {
  ModelParams p;
  p.dims = d;
  const auto two_h = d.source_state();
  p.embedding = Matrix::Zero(idx(d.vocab), idx(d.embedding));
  p.encoder_fwd = gru_zeros(d.embedding, d.hidden);
  p.encoder_bwd = gru_zeros(d.embedding, d.hidden);
  p.decoder = gru_zeros(d.embedding + d.target_hidden, d.hidden);
  p.target_encoder = gru_zeros(d.embedding, d.target_hidden);
  p.init_w = Matrix::Zero(idx(d.hidden), idx(two_h));
  p.init_b = Vector::Zero(idx(d.hidden));
  p.attn_w = Matrix::Zero(idx(d.attention), idx(d.hidden + two_h));
  p.attn_b = Vector::Zero(idx(d.attention));
  p.attn_v = Vector::Zero(idx(d.attention));
  p.gen_hidden_w = Matrix::Zero(idx(d.generator), idx(d.hidden + two_h));
  p.gen_hidden_b = Vector::Zero(idx(d.generator));
  p.gen_out_w = Matrix::Zero(idx(d.vocab), idx(d.generator));
  p.gen_out_b = Vector::Zero(idx(d.vocab));
  p.switch_ctx_w = Matrix::Zero(idx(d.switch_hidden), idx(two_h));
  p.switch_ctx_b = Vector::Zero(idx(d.switch_hidden));
  p.switch_dec_w = Matrix::Zero(idx(d.switch_hidden), idx(d.hidden));
  p.switch_out_w = Vector::Zero(idx(d.switch_hidden));
  p.switch_out_b = Vector::Zero(1);
  p.bilinear = Matrix::Zero(idx(two_h), idx(d.target_hidden));
  return p;
}

ModelParams ModelParams::random(const ModelDims& dims, std::uint64_t seed, double scale) {
  auto p = zeros(dims);
  Rng rng(seed);
  for_each_tensor(
      [&](std::string_view, auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i)
          t.data()[i] = static_cast<double>(static_cast<float>(rng.uniform(-scale, scale)));
      },
      p);
  p.embedding.row(0).setZero();
  return p;
}

void ModelParams::set_zero() {
  for_each_tensor([](std::string_view, auto& t) { t.setZero(); }, *this);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); },
                  *this);
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each_tensor([&](std::string_view, const auto& t) { ok = ok && t.allFinite(); }, *this);
  return ok;
}

bool is_target_encoder_tensor(std::string_view name) { return name.starts_with("target_encoder."); }

bool is_source_encoder_tensor(std::string_view name) {
  return name.starts_with("encoder_fwd.") || name.starts_with("encoder_bwd.");
}

double GradientSet::squared_norm() const {
  double s = 0.0;
  for_each_tensor([&](std::string_view, const auto& t) { s += t.squaredNorm(); }, tensors);
  return s;
}

void GradientSet::scale(double factor) {
  for_each_tensor([&](std::string_view, auto& t) { t *= factor; }, tensors);
}

void GradientSet::add(const GradientSet& other, double weight) {
  for_each_tensor([&](std::string_view, auto& a, const auto& b) { a += weight * b; }, tensors,
                  other.tensors);
}

std::string GradientSet::first_non_finite() const {
  std::string bad;
  for_each_tensor(
      [&](std::string_view name, const auto& t) {
        if (bad.empty() && !t.allFinite()) bad = name;
      },
      tensors);
  return bad;
}

void round_to_float(ModelParams& params) {
  for_each_tensor(
      [](std::string_view, auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i)
          t.data()[i] = static_cast<double>(static_cast<float>(t.data()[i]));
      },
      params);
}

}  // namespace kpg
