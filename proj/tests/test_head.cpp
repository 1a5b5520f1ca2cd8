// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "dat/head.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace dat;
using Md = Matrix<double>;
using Vd = Vector<double>;

TEST_CASE("layer_norm on constant input returns beta") {
  const Vd x = Vd::Constant(5, 3.25);
  const Vd gamma = Vd::LinSpaced(5, -2, 2);
  const Vd beta = Vd::LinSpaced(5, 0.1, 0.5);
  CHECK(layer_norm(x, gamma, beta, 1e-6).isApprox(beta, 1e-15));
}

TEST_CASE("layer_norm of [1,-1] divides by sqrt(1 + eps)") {
  Vd x(2);
  x << 1, -1;
  const Vd y = layer_norm(x, Vd(Vd::Ones(2)), Vd(Vd::Zero(2)), 1e-6);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-6);
  CHECK(y[0] == doctest::Approx(expect).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(-expect).epsilon(1e-15));
  CHECK(y[0] == doctest::Approx(0.9999995).epsilon(1e-9));
}

TEST_CASE("layer_norm with zero gain returns beta for any input") {
  std::mt19937_64 rng(2);
  const Vd x = fixtures::gaussian(rng, 7, 1);
  const Vd beta = fixtures::gaussian(rng, 7, 1);
  CHECK(layer_norm(x, Vd(Vd::Zero(7)), beta, 1e-6) == beta);
}

TEST_CASE("head_forward rows have unit norm") {
  std::mt19937_64 rng(4);
  const auto theta = fixtures::random_head(rng, 10, 6);
  const Md out = head_forward(fixtures::gaussian(rng, 9, 10, 3.0), theta);
  for (Eigen::Index i = 0; i < out.rows(); ++i) CHECK(std::abs(out.row(i).norm() - 1.0) <= 1e-6);
}

TEST_CASE("head_forward rejects a zero projection") {
  auto theta = HeadParameters<double>::identity(4, 3);
  theta.W.setZero();
  std::mt19937_64 rng(1);
  try {
    head_forward(fixtures::gaussian(rng, 2, 4), theta);
    FAIL("zero projection accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerate);
  }
}

TEST_CASE("identity head on [1,-1] yields the unit diagonal") {
  const auto theta = HeadParameters<double>::identity(2, 2);
  Md x(1, 2);
  x << 1, -1;
  const Md v = head_forward(x, theta);
  CHECK(v(0, 0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(v(0, 1) == doctest::Approx(-std::sqrt(0.5)).epsilon(1e-12));
}

TEST_CASE("identity initialisation uses t = 10, b = -10") {
  const auto theta = HeadParameters<double>::identity(5, 3);
  CHECK(std::exp(theta.log_t) == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(theta.b == -10.0);
  CHECK(theta.gamma == Vd::Ones(5));
  CHECK(theta.beta == Vd::Zero(5));
  CHECK(theta.W == Md::Identity(5, 3));
}

TEST_CASE("pair logits") {
  Md v(1, 2), u(1, 2);
  v << 0.6, 0.8;
  u << 0.6, 0.8;
  CHECK(pair_logits(v, u, 0.0, 0.0)(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  u << -0.8, 0.6;
  CHECK(pair_logits(v, u, 1.7, 0.0)(0, 0) == doctest::Approx(0.0));
  // cosine 0.5 at t = 10, b = -10
  v << 1, 0;
  u << 0.5, std::sqrt(0.75);
  CHECK(pair_logits(v, u, std::log(10.0), -10.0)(0, 0) == doctest::Approx(-5.0).epsilon(1e-13));
}

TEST_CASE("sigmoid contrastive loss values") {
  Md z(1, 1), y(1, 1);
  z << 0;
  y << 1;
  CHECK(sigmoid_contrastive_loss(z, y) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  y << 0;
  CHECK(sigmoid_contrastive_loss(z, y) == doctest::Approx(0.693147).epsilon(1e-6));

  Md z2(1, 2), y2(1, 2);
  z2 << 2, -2;
  y2 << 1, 0;
  const double expect = std::log1p(std::exp(-2.0));
  CHECK(sigmoid_contrastive_loss(z2, y2) == doctest::Approx(expect).epsilon(1e-15));
  CHECK(sigmoid_contrastive_loss(z2, y2) == doctest::Approx(0.126928).epsilon(1e-6));
}

TEST_CASE("loss and gradients stay finite for extreme logits") {
  Md z(2, 2), y(2, 2);
  z << 1e4, -1e4, -1e4, 1e4;
  y << 0, 1, 1, 0;
  const double l = sigmoid_contrastive_loss(z, y);
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(1e4));

  // Same scale through the head: t = e^9 (about 8100) with cosines near +-1.
  auto theta = HeadParameters<double>::identity(3, 3);
  theta.log_t = 9.0;
  theta.b = 0.0;
  Md f(2, 3), u(2, 3);
  f << 1, 0, -1, -1, 0, 1;
  u = head_forward(f, theta);
  const auto batch = make_pair_batch<double>(f, {1, 0}, u, {0, 1});
  const auto lg = loss_gradients(batch, theta);
  CHECK(std::isfinite(lg.loss));
  CHECK(lg.grads.all_finite());
}

TEST_CASE("gradients vanish when every sigmoid equals its label") {
  auto theta = HeadParameters<double>::identity(2, 2);
  theta.log_t = 7.0;  // t ~ 1097, so z = +-1097 and sigmoid saturates to exactly 1 or 0
  theta.b = 0.0;
  Md f(1, 2);
  f << 1, -1;
  const Md v = head_forward(f, theta);
  Md u(2, 2);
  u << v, -v;
  const auto batch = make_pair_batch<double>(f, {0}, u, {0, 1});
  const auto lg = loss_gradients(batch, theta);
  CHECK(lg.loss == 0.0);
  CHECK(lg.grads.gamma.isZero(0.0));
  CHECK(lg.grads.beta.isZero(0.0));
  CHECK(lg.grads.W.isZero(0.0));
  CHECK(lg.grads.log_t == 0.0);
  CHECK(lg.grads.b == 0.0);
}

TEST_CASE("bias gradient is the mean residual") {
  std::mt19937_64 rng(9);
  const auto theta = fixtures::random_head(rng, 6, 4);
  const auto batch = fixtures::random_batch(rng, 6, 4, 5, 3);
  const auto lg = loss_gradients(batch, theta);
  const Md z = pair_logits(head_forward(batch.region_features, theta), batch.text_embeddings, theta.log_t, theta.b);
  double mean = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) mean += stable_sigmoid(z.data()[i]) - batch.y.data()[i];
  mean /= static_cast<double>(z.size());
  CHECK(lg.grads.b == doctest::Approx(mean).epsilon(1e-14));
}

TEST_CASE("analytic gradients agree with finer finite differences") {
  // h = 1e-5 keeps the O(h^2) truncation term near 1e-10, so agreement
  // here isolates the analytic formula from finite-difference error.
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    std::mt19937_64 rng(seed);
    const auto theta = fixtures::random_head(rng, 16, 8);
    const auto batch = fixtures::random_batch(rng, 16, 8, 4, 3);
    const auto analytic = oracle::flatten(loss_gradients(batch, theta).grads);
    const auto numeric =
        oracle::numeric_gradient(theta, [&](const HeadParameters<double>& p) { return batch_loss(batch, p); }, 1e-5);
    CHECK(oracle::max_relative_error(analytic, numeric) < 1e-6);
  }
}

TEST_CASE("label matrix supports several positives per column") {
  const std::vector<ClassId> labels = {2, 0, 2};
  const std::vector<ClassId> classes = {0, 2, 5};
  const Md y = label_matrix<double>(labels, classes);
  Md expect(3, 3);
  expect << 0, 1, 0, 1, 0, 0, 0, 1, 0;
  CHECK(y == expect);
  CHECK(y.col(1).sum() == 2.0);
}

TEST_CASE("trainable parameter census") {
  CHECK(trainable_parameter_count(64, 32) == 2178);
  const auto theta = HeadParameters<float>::identity(64, 32);
  CHECK(theta.parameter_count() == 2178);
  const auto c = census(theta);
  CHECK(c.layer_norm_and_projection == 2176);
  CHECK(c.total == 2178);
}

TEST_CASE("parameters cast between precisions") {
  std::mt19937_64 rng(5);
  const auto theta = fixtures::random_head(rng, 4, 3);
  const auto f = theta.cast<float>();
  CHECK(f.cast<float>() == f);
  CHECK(f.cast<double>().W.isApprox(theta.W, 1e-6));
}
