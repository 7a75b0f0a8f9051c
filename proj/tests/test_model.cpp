// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "kpg/model.hpp"
#include "support.hpp"

using namespace kpg;

namespace {

// Scalar transcription of the network equations, used as the oracle.
namespace oracle {

using Vec = std::vector<double>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec affine(const Matrix& w, const Vec& x, const Vector* b) {
  Vec y(static_cast<std::size_t>(w.rows()), 0.0);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double acc = b ? (*b)(i) : 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(i, j) * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

Vec cat(Vec a, const Vec& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Vec gru(const GruWeights& w, const Vec& x, const Vec& h) {
  const auto gx = affine(w.w_x, x, &w.b_x);
  const auto gh = affine(w.w_h, h, &w.b_h);
  const auto n = h.size();
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = sigmoid(gx[i] + gh[i]);
    const double z = sigmoid(gx[n + i] + gh[n + i]);
    const double c = std::tanh(gx[2 * n + i] + r * gh[2 * n + i]);
    out[i] = (1.0 - z) * c + z * h[i];
  }
  return out;
}

Vec embed(const ModelParams& p, TokenId id) {
  Vec e(static_cast<std::size_t>(p.embedding.cols()));
  for (std::size_t j = 0; j < e.size(); ++j) e[j] = p.embedding(id, static_cast<Eigen::Index>(j));
  return e;
}

std::vector<Vec> encode(const ModelParams& p, const std::vector<TokenId>& ids) {
  const auto n = ids.size();
  const auto h = p.dims.hidden;
  std::vector<Vec> fwd(n), bwd(n);
  Vec s(h, 0.0);
  for (std::size_t t = 0; t < n; ++t) fwd[t] = s = gru(p.encoder_fwd, embed(p, ids[t]), s);
  s.assign(h, 0.0);
  for (std::size_t t = n; t-- > 0;) bwd[t] = s = gru(p.encoder_bwd, embed(p, ids[t]), s);
  std::vector<Vec> out(n);
  for (std::size_t t = 0; t < n; ++t) out[t] = cat(fwd[t], bwd[t]);
  return out;
}

Vec softmax(const Vec& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  Vec y(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += y[i] = std::exp(x[i] - m);
  for (auto& v : y) v /= sum;
  return y;
}

struct Step {
  Vec h;
  Vec p;
  Vec alpha;
  double s;
};

Step decoder_step(const ModelParams& p, const std::vector<Vec>& states,
                  const std::vector<TokenId>& ext_ids, std::size_t ext_size, const Vec& h_prev,
                  const Vec& h_sc, TokenId input) {
  Step out;
  out.h = gru(p.decoder, cat(embed(p, input), h_sc), h_prev);
  Vec energy;
  for (const auto& st : states) {
    const auto a = affine(p.attn_w, cat(out.h, st), &p.attn_b);
    double e = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) e += p.attn_v(static_cast<Eigen::Index>(i)) * std::tanh(a[i]);
    energy.push_back(e);
  }
  out.alpha = softmax(energy);
  Vec ctx(states[0].size(), 0.0);
  for (std::size_t i = 0; i < states.size(); ++i)
    for (std::size_t j = 0; j < ctx.size(); ++j) ctx[j] += out.alpha[i] * states[i][j];
  auto g = affine(p.gen_hidden_w, cat(out.h, ctx), &p.gen_hidden_b);
  for (auto& v : g) v = std::tanh(v);
  const auto pa = softmax(affine(p.gen_out_w, g, &p.gen_out_b));
  auto u = affine(p.switch_ctx_w, ctx, &p.switch_ctx_b);
  const auto ud = affine(p.switch_dec_w, out.h, nullptr);
  double pre = p.switch_out_b(0);
  for (std::size_t i = 0; i < u.size(); ++i) pre += p.switch_out_w(static_cast<Eigen::Index>(i)) * std::tanh(u[i] + ud[i]);
  out.s = sigmoid(pre);
  out.p.assign(ext_size, 0.0);
  for (std::size_t v = 0; v < pa.size(); ++v) out.p[v] = out.s * pa[v];
  for (std::size_t i = 0; i < ext_ids.size(); ++i)
    out.p[static_cast<std::size_t>(ext_ids[i])] += (1.0 - out.s) * out.alpha[i];
  return out;
}

}  // namespace oracle

Vector to_vector(const oracle::Vec& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

oracle::Vec to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

double max_diff(const Vector& a, const oracle::Vec& b) {
  REQUIRE(static_cast<std::size_t>(a.size()) == b.size());
  return (a - to_vector(b)).cwiseAbs().maxCoeff();
}

constexpr double kOracleTol = 1e-12;

}  // namespace

TEST_SUITE("model") {

TEST_CASE("gru cell basics and shape contract") {
  auto p = ModelParams::zeros(test::tiny_dims());
  CHECK(gru_cell(Vector::Zero(6), Vector::Zero(8), p.target_encoder).isZero());
  ModelDims big;
  big.vocab = 10;
  big.embedding = 100;
  const auto wide = ModelParams::random(big, 1);
  CHECK(gru_cell(Vector::Ones(250), Vector::Zero(150), wide.decoder).size() == 150);
  CHECK_THROWS_AS(gru_cell(Vector::Ones(7), Vector::Zero(8), p.target_encoder), std::invalid_argument);
}

TEST_CASE("gru cell matches the scalar oracle") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = ModelParams::random(test::tiny_dims(), seed, 0.8);
    Rng rng(seed);
    Vector x(14), h(8);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : h) v = rng.uniform(-1, 1);
    CHECK(max_diff(gru_cell(x, h, p.decoder), oracle::gru(p.decoder, to_vec(x), to_vec(h))) < kOracleTol);
  }
}

TEST_CASE("encoder matches the oracle and honours its contracts") {
  const auto p = ModelParams::random(test::tiny_dims(), 4, 0.8);
  const std::vector<TokenId> ids{6, 9, 1, 11, 7};
  const auto out = encode_source(p, ids);
  const auto want = oracle::encode(p, ids);
  REQUIRE(out.states.cols() == 5);
  for (Eigen::Index t = 0; t < 5; ++t) CHECK(max_diff(out.states.col(t), want[static_cast<std::size_t>(t)]) < kOracleTol);
  CHECK(out.final_state == out.states.col(4));

  const std::vector<TokenId> one{8};
  const auto single = encode_source(p, one);
  CHECK(single.states.cols() == 1);
  CHECK(single.final_state == single.states.col(0));
  CHECK_THROWS_AS(encode_source(p, std::vector<TokenId>{}), std::invalid_argument);

  const auto again = encode_source(p, ids);
  CHECK(again.states == out.states);
}

TEST_CASE("masked encoding skips padding and zeroes padded columns") {
  const auto p = ModelParams::random(test::tiny_dims(), 5, 0.8);
  const std::vector<TokenId> padded{6, 9, 7, kPadId, kPadId};
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 0};
  const auto out = encode_source(p, padded, mask);
  const auto ref = encode_source(p, std::vector<TokenId>{6, 9, 7});
  CHECK(out.states.leftCols(3) == ref.states);
  CHECK(out.states.rightCols(2).isZero());
  CHECK(out.final_state == ref.final_state);
}

TEST_CASE("reversing the source swaps the halves when both directions share weights") {
  auto p = ModelParams::random(test::tiny_dims(), 6, 0.8);
  p.encoder_bwd = p.encoder_fwd;
  const std::vector<TokenId> ids{6, 7, 8, 9};
  const std::vector<TokenId> rev(ids.rbegin(), ids.rend());
  const auto a = encode_source(p, ids), b = encode_source(p, rev);
  for (Eigen::Index t = 0; t < 4; ++t) {
    CHECK((a.states.col(t).head(8) - b.states.col(3 - t).tail(8)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((a.states.col(t).tail(8) - b.states.col(3 - t).head(8)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("init state is tanh of the final state map") {
  auto p = ModelParams::zeros(test::tiny_dims());
  CHECK(init_decoder_state(Vector::Ones(16), p).isZero());
  p = ModelParams::random(test::tiny_dims(), 7, 3.0);
  Rng rng(7);
  Vector e(16);
  for (auto& v : e) v = rng.uniform(-50, 50);
  const auto h = init_decoder_state(e, p);
  CHECK(h.cwiseAbs().maxCoeff() <= 1.0);
  oracle::Vec want = oracle::affine(p.init_w, to_vec(e), &p.init_b);
  for (auto& v : want) v = std::tanh(v);
  CHECK(max_diff(h, want) < kOracleTol);
}

TEST_CASE("attention fixtures") {
  auto p = ModelParams::zeros(test::tiny_dims());
  const Matrix states = Matrix::Random(16, 4);
  const std::vector<std::uint8_t> all{1, 1, 1, 1};
  auto r = attention(Vector::Zero(8), states, all, p);
  for (int i = 0; i < 4; ++i) CHECK(r.alpha(i) == doctest::Approx(0.25).epsilon(1e-15));

  const std::vector<std::uint8_t> one{0, 0, 1, 0};
  r = attention(Vector::Zero(8), states, one, p);
  CHECK(r.alpha(2) == 1.0);
  CHECK(r.context == states.col(2));
  CHECK_THROWS_AS(attention(Vector::Zero(8), states, std::vector<std::uint8_t>(4, 0), p), std::invalid_argument);

  // energies [1, 2] via two attention units, each contributing 2 * tanh(atanh(0.5))
  p.attn_v(0) = p.attn_v(1) = 2.0;
  p.attn_w(0, 8) = p.attn_w(1, 9) = 1.0;
  Matrix two = Matrix::Zero(16, 2);
  two(0, 0) = two(0, 1) = two(1, 1) = std::atanh(0.5);
  r = attention(Vector::Zero(8), two, std::vector<std::uint8_t>{1, 1}, p);
  CHECK(r.alpha(0) == doctest::Approx(0.2689).epsilon(1e-4));
  CHECK(r.alpha(1) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(r.alpha(0) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-14));
}

TEST_CASE("generator, switch and mixture fixtures") {
  auto p = ModelParams::zeros(test::tiny_dims());
  const auto pa = generative_distribution(Vector::Zero(8), Vector::Zero(16), p);
  for (Eigen::Index i = 0; i < pa.size(); ++i) CHECK(pa(i) == doctest::Approx(1.0 / 12));
  CHECK(pointer_switch(Vector::Ones(16), Vector::Ones(8), p) == 0.5);

  Vector two(2);
  two << 0.6, 0.4;
  const std::vector<TokenId> src{0};
  const auto mixed = mix_distributions(0.5, two, Vector::Ones(1), src, 2);
  CHECK(mixed(0) == doctest::Approx(0.8));
  CHECK(mixed(1) == doctest::Approx(0.2));
  const auto gen_only = mix_distributions(1.0, two, Vector::Ones(1), std::vector<TokenId>{2}, 3);
  CHECK(gen_only(0) == 0.6);
  CHECK(gen_only(2) == 0.0);
  const auto copy_only = mix_distributions(0.0, two, Vector::Ones(1), src, 2);
  CHECK(copy_only(0) == 1.0);

  Vector alpha(3);
  alpha << 0.2, 0.5, 0.3;
  const auto acc = mix_distributions(0.25, two, alpha, std::vector<TokenId>{2, 1, 2}, 3);
  CHECK(acc(2) == doctest::Approx(0.75 * (0.2 + 0.3)).epsilon(1e-15));
}

TEST_CASE("switch is monotone in its pre-activation") {
  auto p = ModelParams::random(test::tiny_dims(), 9, 0.5);
  double last = -1.0;
  for (double b = -5.0; b <= 5.0; b += 0.5) {
    p.switch_out_b(0) = b;
    const double s = pointer_switch(Vector::Ones(16), Vector::Ones(8), p);
    CHECK(s > last);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    last = s;
  }
}

TEST_CASE("target encoder and bilinear score") {
  auto z = ModelParams::zeros(test::tiny_dims());
  CHECK(target_encoder_step(7, Vector::Zero(8), z).isZero());
  const auto p = ModelParams::random(test::tiny_dims(), 10, 0.8);
  Vector h = Vector::Zero(8);
  oracle::Vec o(8, 0.0);
  for (TokenId id : {6, 9, kSepId, 11}) {
    h = target_encoder_step(id, h, p);
    o = oracle::gru(p.target_encoder, oracle::embed(p, id), o);
  }
  CHECK(max_diff(h, o) < kOracleTol);

  Vector a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  Matrix bm(2, 2);
  bm << 0, 2, 0, 0;
  CHECK(bilinear_score(a, b, bm) == doctest::Approx(std::exp(2.0)).epsilon(1e-15));
  CHECK(bilinear_score(a, b, Matrix::Zero(2, 2)) == 1.0);
}

TEST_CASE("decoder steps match the oracle over a whole teacher-forced sequence") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = ModelParams::random(test::tiny_dims(), seed, 0.8);
    Rng rng(seed);
    const auto ex = test::random_example(rng, 12, 6);
    const auto src = make_source_context(p, encode_source(p, ex.source_ids), ex.source_ext_ids, ex.extended_size());
    const auto states = oracle::encode(p, ex.source_ids);

    auto state = initial_decoder_state(p, src);
    oracle::Vec h = to_vec(init_decoder_state(src.final_state, p)), h_sc(8, 0.0);
    CHECK(state.h_sc.isZero());
    for (std::size_t t = 0; t < ex.target_ids.size(); ++t) {
      const auto [next, dist] = decoder_step(ex.target_in_ids[t], state, src, p);
      const auto want = oracle::decoder_step(p, states, ex.source_ext_ids, ex.extended_size(), h, h_sc, ex.target_in_ids[t]);
      CHECK(max_diff(next.h_d, want.h) < kOracleTol);
      CHECK(max_diff(dist.p, want.p) < kOracleTol);
      CHECK(max_diff(dist.alpha, want.alpha) < kOracleTol);
      CHECK(std::abs(dist.s - want.s) < kOracleTol);
      state = next;
      state.h_sc = target_encoder_step(to_base_id(ex.target_ids[t], 12), state.h_sc, p);
      h = want.h;
      h_sc = oracle::gru(p.target_encoder, oracle::embed(p, to_base_id(ex.target_ids[t], 12)), h_sc);
    }
  }
}

TEST_CASE("batched decoder columns equal single-column steps") {
  const auto p = ModelParams::random(test::tiny_dims(), 12, 0.8);
  Rng rng(12);
  const auto ex = test::random_example(rng, 12, 6);
  const auto src = make_source_context(p, encode_source(p, ex.source_ids), ex.source_ext_ids, ex.extended_size());
  Matrix h(8, 3), s(8, 3);
  for (auto& v : h.reshaped()) v = rng.uniform(-1, 1);
  for (auto& v : s.reshaped()) v = rng.uniform(-1, 1);
  const std::vector<TokenId> in{6, kSepId, 11};
  const auto batch = decoder_step_batch(p, src, h, s, in);
  for (Eigen::Index k = 0; k < 3; ++k) {
    const TokenId one[] = {in[static_cast<std::size_t>(k)]};
    const auto single = decoder_step_batch(p, src, h.col(k), s.col(k), one);
    CHECK((batch.p.col(k) - single.p.col(0)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((batch.h.col(k) - single.h.col(0)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("step distributions are normalized on 1000 random fixtures") {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto p = ModelParams::random(test::tiny_dims(), static_cast<std::uint64_t>(i), 2.0);
    const auto ex = test::random_example(rng, 12, 6);
    const auto src = make_source_context(p, encode_source(p, ex.source_ids), ex.source_ext_ids, ex.extended_size());
    const auto [next, dist] = decoder_step(kBosId, initial_decoder_state(p, src), src, p);
    REQUIRE(std::abs(dist.p.sum() - 1.0) < 1e-6);
    REQUIRE(dist.p.minCoeff() >= 0.0);
    REQUIRE(std::abs(dist.alpha.sum() - 1.0) < 1e-6);
    REQUIRE(dist.s >= 0.0);
    REQUIRE(dist.s <= 1.0);
  }
}

TEST_CASE("repeated source tokens pool their copy mass") {
  const auto p = ModelParams::random(test::tiny_dims(), 13, 0.8);
  const std::vector<TokenId> ids{6, 7, 6};
  const std::vector<TokenId> ext{12, 7, 12};
  const auto src = make_source_context(p, encode_source(p, ids), ext, 13);
  const auto [next, dist] = decoder_step(kBosId, initial_decoder_state(p, src), src, p);
  CHECK(dist.p(12) == doctest::Approx((1.0 - dist.s) * (dist.alpha(0) + dist.alpha(2))).epsilon(1e-14));
}

TEST_CASE("dropout masks are inverted and identity in eval mode") {
  const Dropout off;
  CHECK(off.mask(3, 4) == Matrix::Ones(3, 4));
  Rng rng(1);
  const Dropout on(0.5, &rng);
  const auto m = on.mask(100, 100);
  for (auto v : m.reshaped()) CHECK((v == 0.0 || v == 2.0));
  CHECK(m.mean() == doctest::Approx(1.0).epsilon(0.05));
}

}
