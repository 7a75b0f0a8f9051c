// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "kpg/error.hpp"
#include "kpg/losses.hpp"
#include "support.hpp"

using namespace kpg;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::size_t i = 0;
  for (double x : v) out(static_cast<Eigen::Index>(i++)) = x;
  return out;
}

template <class Pred>
bool all_zero_where(const GradientSet& g, Pred pred) {
  bool ok = true;
  for_each_tensor([&](std::string_view name, const auto& t) {
    if (pred(name)) ok = ok && (t.array() == 0.0).all();
  }, g.tensors);
  return ok;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("nll examples") {
  const std::vector<Vector> uniform(3, Vector::Constant(4, 0.25));
  const std::vector<TokenId> y{0, 3, 2};
  const std::vector<std::uint8_t> all{1, 1, 1};
  CHECK(nll_loss(uniform, y, all) == doctest::Approx(std::log(4.0)).epsilon(1e-15));

  const std::vector<Vector> certain{vec({0, 1}), vec({1, 0})};
  CHECK(nll_loss(certain, std::vector<TokenId>{1, 0}, std::vector<std::uint8_t>{1, 1}) == 0.0);

  const std::vector<Vector> one{vec({0.5, 0.25, 0.25})};
  CHECK(nll_loss(one, std::vector<TokenId>{1}, std::vector<std::uint8_t>{1}) ==
        doctest::Approx(1.3863).epsilon(1e-4));

  const std::vector<Vector> zero{vec({1, 0})};
  CHECK(nll_loss(zero, std::vector<TokenId>{1}, std::vector<std::uint8_t>{1}) ==
        doctest::Approx(-std::log(kMinProbability)));
  CHECK(nll_loss(uniform, y, std::vector<std::uint8_t>{1, 0, 0}) == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(nll_loss(one, std::vector<TokenId>{3}, std::vector<std::uint8_t>{1}), std::out_of_range);
}

TEST_CASE("semantic coverage examples") {
  std::vector<Vector> cands(17, Vector::Ones(4));
  CHECK(std::abs(semantic_coverage_loss(Vector::Ones(3), cands, 5, Matrix::Zero(4, 3)) - std::log(17.0)) < 1e-9);

  // logit_true - logit_neg = 1
  std::vector<Vector> two{vec({1.0}), vec({0.0})};
  CHECK(semantic_coverage_loss(vec({1.0}), two, 0, Matrix::Ones(1, 1)) ==
        doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
  CHECK(std::log1p(std::exp(-1.0)) == doctest::Approx(0.3133).epsilon(1e-4));

  CHECK_THROWS_AS(semantic_coverage_loss(vec({1.0}), std::vector<Vector>{vec({1.0})}, 0, Matrix::Ones(1, 1)),
                  std::invalid_argument);

  // huge logits stay finite via log-sum-exp
  std::vector<Vector> big{vec({1000.0}), vec({-1000.0})};
  CHECK(std::isfinite(semantic_coverage_loss(vec({1.0}), big, 1, Matrix::Ones(1, 1))));
}

TEST_CASE("semantic coverage is non-negative and falls as the true logit rises") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vector> cands;
    for (int i = 0; i < 5; ++i) cands.push_back(Vector::NullaryExpr(3, [&] { return rng.uniform(-2, 2); }));
    const Vector h = Vector::NullaryExpr(2, [&] { return rng.uniform(-2, 2); });
    const Matrix b = Matrix::NullaryExpr(3, 2, [&] { return rng.uniform(-2, 2); });
    const double base = semantic_coverage_loss(h, cands, 2, b);
    CHECK(base >= 0.0);
    // move the true candidate along B h: its logit increases, negatives fixed
    const Vector dir = b * h;
    if (dir.norm() < 1e-9) continue;
    cands[2] += 0.1 * dir;
    CHECK(semantic_coverage_loss(h, cands, 2, b) < base);
  }
}

TEST_CASE("orthogonal regularization examples and properties") {
  Matrix orth(3, 2);
  orth << 1, 0, 0, 1, 0, 0;
  CHECK(orthogonal_reg_loss(orth) == 0.0);
  Matrix same(3, 2);
  same << 1, 1, 0, 0, 0, 0;
  CHECK(std::abs(orthogonal_reg_loss(same) - std::sqrt(2.0)) < 1e-9);
  CHECK(orthogonal_reg_loss(Matrix::Ones(3, 1)) == 0.0);
  CHECK(orthogonal_reg_loss(Matrix(3, 0)) == 0.0);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix h = Matrix::NullaryExpr(6, 4, [&] { return rng.uniform(-1, 1); });
    const double base = orthogonal_reg_loss(h);
    Matrix perm(6, 4);
    perm << h.col(2), h.col(0), h.col(3), h.col(1);
    CHECK(orthogonal_reg_loss(perm) == doctest::Approx(base).epsilon(1e-14));
    CHECK(orthogonal_reg_loss(3.0 * h) == doctest::Approx(9.0 * base).epsilon(1e-14));
  }
}

TEST_CASE("loss combination") {
  const auto b = combine_losses(2.0, 0.5, 3.0, {0.0, 0.0});
  CHECK(b.total == 2.0);
  const auto one = combine_losses(2.0, 0.5, 3.0, {1.0, 0.03});
  const auto two = combine_losses(2.0, 0.5, 3.0, {2.0, 0.03});
  CHECK(two.total - one.total == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(one.total == 2.0 + 0.5 + 0.03 * 3.0);
  CHECK(one.lambda_sc == 0.03);
}

TEST_CASE("batch forward: components, reproducibility and negatives") {
  Rng rng(21);
  const auto params = ModelParams::random(test::tiny_dims(), 21, 0.5);
  const auto batch = test::random_batch(rng, 20, 12, 6);
  ForwardOptions opts;
  opts.seed = 4;
  opts.dropout = 0.1;
  const auto a = forward_batch(params, batch, opts);
  const auto b = forward_batch(params, batch, opts);
  CHECK(total_loss(a, {1.0, 0.03}).total == total_loss(b, {1.0, 0.03}).total);
  CHECK(a.coverage_defined);
  for (const auto& ex : a.examples) {
    CHECK(ex.candidates.size() == 17);
    CHECK(ex.nll >= 0.0);
    CHECK(ex.l_or >= 0.0);
    CHECK(ex.l_sc >= 0.0);
  }
  // OR states sit at <sep> / </s> targets
  for (std::size_t j = 0; j < batch.size(); ++j) {
    std::size_t delims = 0;
    for (auto id : batch.examples[j].target_ids) delims += (id == kSepId || id == kEosId);
    CHECK(a.examples[j].delimiter_positions.size() == delims);
  }
  const auto single = forward_batch(params, make_batch({batch.examples[0]}), opts);
  CHECK_FALSE(single.coverage_defined);
  CHECK(single.l_sc == 0.0);
}

TEST_CASE("detach rule (a): no target-encoder gradient without the coverage term") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto params = ModelParams::random(test::tiny_dims(), seed, 0.5);
    const auto batch = test::random_batch(rng, 3, 12, 6);
    ForwardOptions opts;
    opts.seed = seed;
    opts.dropout = seed % 2 ? 0.2 : 0.0;
    const auto tape = forward_batch(params, batch, opts);
    const auto g = gradients(params, tape, {1.0, 0.0});
    CHECK(all_zero_where(g, is_target_encoder_tensor));

    // the forward value still depends on the target encoder
    params.target_encoder.w_x(0, 0) += 0.5;
    CHECK(forward_batch(params, batch, opts).nll != tape.nll);
  }
}

TEST_CASE("detach rule (b): the coverage term leaves the source encoder untouched") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const auto params = ModelParams::random(test::tiny_dims(), seed, 0.5);
    const auto batch = test::random_batch(rng, 3, 12, 6);
    const auto tape = forward_batch(params, batch, {});
    const auto without = gradients(params, tape, {0.0, 0.0});
    const auto with = gradients(params, tape, {0.0, 1.0});
    bool identical = true, bilinear_moves = false;
    for_each_tensor([&](std::string_view name, const auto& a, const auto& b) {
      if (is_source_encoder_tensor(name)) identical = identical && a == b;
      if (name == "bilinear") bilinear_moves = (a.array() != b.array()).any();
    }, without.tensors, with.tensors);
    CHECK(identical);
    CHECK(bilinear_moves);
  }
}

TEST_CASE("pad embedding gradient is zero and non-finite gradients are named") {
  Rng rng(2);
  auto params = ModelParams::random(test::tiny_dims(), 2, 0.5);
  const auto batch = test::random_batch(rng, 3, 12, 6);
  auto g = gradients(params, forward_batch(params, batch, {}), {1.0, 1.0});
  CHECK(g.tensors.embedding.row(kPadId).isZero());
  CHECK(g.first_non_finite().empty());

  params.gen_out_w(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto tape = forward_batch(params, batch, {});
  try {
    gradients(params, tape, {1.0, 1.0});
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find('\'') != std::string::npos);
  }
}

}
