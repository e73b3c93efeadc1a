#include <doctest.h>

#include <cmath>

#include "rainrecon/autograd.hpp"
#include "rainrecon/errors.hpp"
#include "support.hpp"

using namespace rainrecon;
using rainrecon::testing::gradient_error;
using rainrecon::testing::random_parameter;

constexpr double kTol = 1e-4;

TEST_CASE("elementwise and activation gradients") {
  Rng rng(1);
  auto a = random_parameter({3, 4}, rng);
  auto b = random_parameter({3, 4}, rng);
  CHECK(gradient_error([&] { return ag::mul(ag::add(a, b), ag::sub(a, b)); }, {a, b}) < kTol);
  CHECK(gradient_error([&] { return ag::elu(a); }, {a}) < kTol);
  CHECK(gradient_error([&] { return ag::sigmoid(a); }, {a}) < kTol);
  CHECK(gradient_error([&] { return ag::tanh(a); }, {a}) < kTol);
  CHECK(gradient_error([&] { return ag::softplus(a); }, {a}) < kTol);
  CHECK(gradient_error([&] { return ag::leaky_relu(a); }, {a}) < kTol);
  CHECK(gradient_error([&] { return ag::one_minus(ag::square(a)); }, {a}) < kTol);
  auto s = random_parameter({1}, rng);
  CHECK(gradient_error([&] { return ag::scale_by(a, s); }, {a, s}) < kTol);
}

TEST_CASE("matrix op gradients") {
  Rng rng(2);
  auto a = random_parameter({3, 4}, rng);
  auto b = random_parameter({4, 5}, rng);
  auto c = random_parameter({5, 4}, rng);
  auto bias = random_parameter({5}, rng);
  auto e = random_parameter({3, 5}, rng);
  CHECK(gradient_error([&] { return ag::add_bias(ag::matmul(a, b), bias); }, {a, b, bias}) < kTol);
  CHECK(gradient_error([&] { return ag::matmul_bt(a, c); }, {a, c}) < kTol);
  CHECK(gradient_error([&] { return ag::transpose(ag::concat_cols({a, ag::slice_cols(e, 1, 3)})); }, {a, e}) <
        kTol);
  CHECK(gradient_error([&] { return ag::concat_rows({a, ag::slice_rows(c, 2, 4)}); }, {a, c}) < kTol);
  CHECK(gradient_error([&] { return ag::gather(a, {0, 5, 5, 11}, {2, 2}); }, {a}) < kTol);
}

TEST_CASE("masked softmax") {
  Rng rng(3);
  auto x = random_parameter({2, 5}, rng);
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0};
  const auto y = ag::softmax_rows(x, mask);
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      if (!mask[c]) CHECK(y.value()[r * 5 + c] == 0.0);
      sum += y.value()[r * 5 + c];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  CHECK(gradient_error([&] { return ag::softmax_rows(x, mask); }, {x}) < kTol);
}

TEST_CASE("image op gradients") {
  Rng rng(4);
  auto x = random_parameter({2, 2, 4, 4}, rng);
  auto w = random_parameter({3, 2, 3, 3}, rng);
  auto b = random_parameter({3}, rng);
  CHECK(gradient_error([&] { return ag::conv2d(x, w, b); }, {x, w, b}) < kTol);
  auto k = random_parameter({2, 3}, rng);
  auto kb = random_parameter({2}, rng);
  CHECK(gradient_error([&] { return ag::temporal_conv(x, k, kb); }, {x, k, kb}) < kTol);
  CHECK(gradient_error([&] { return ag::upsample_nearest(ag::avg_pool(x, 2), 2); }, {x}) < kTol);
  auto tt = random_parameter({2, 2}, rng);
  auto sp = random_parameter({16, 2}, rng);
  CHECK(gradient_error([&] { return ag::add_spacetime(x, tt, sp); }, {x, tt, sp}) < kTol);
}

TEST_CASE("conv2d with a centred delta kernel is the identity") {
  Rng rng(5);
  auto x = random_parameter({1, 1, 5, 5}, rng);
  std::vector<double> kernel(9, 0.0);
  kernel[4] = 1.0;
  const auto y = ag::conv2d(x, ag::constant({1, 1, 3, 3}, kernel), ag::Var());
  for (std::size_t i = 0; i < 25; ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("attention primitive gradients") {
  Rng rng(6);
  auto wh = random_parameter({4, 3}, rng);
  auto src = random_parameter({4, 1}, rng);
  auto dst = random_parameter({4, 1}, rng, 3.0);
  const std::vector<std::vector<int>> groups{{0, 1}, {0, 1, 2}, {1, 2, 3}, {2, 3}};
  CHECK(gradient_error([&] { return ag::graph_attention(wh, src, dst, groups); }, {wh, src, dst}) < kTol);
  auto q = random_parameter({2, 3}, rng);
  auto k = random_parameter({4, 3}, rng);
  auto v = random_parameter({4, 3}, rng);
  const std::vector<std::vector<int>> subsets{{0, 2}, {1, 2, 3}};
  CHECK(gradient_error([&] { return ag::subset_attention(q, k, v, subsets, 0.7); }, {q, k, v}) < kTol);
}

TEST_CASE("pair cosine and masked mse") {
  Rng rng(7);
  auto x = random_parameter({3, 4}, rng);
  CHECK(gradient_error([&] { return ag::pair_cosine(x, {{0, 1}, {1, 2}, {0, 2}}); }, {x}) < kTol);
  auto zero_row = ag::parameter({2, 2}, {0.0, 0.0, 1.0, 2.0});
  CHECK(ag::pair_cosine(zero_row, {{0, 1}}).item() == 0.0);
  auto p = random_parameter({4, 1}, rng);
  const auto t = ag::constant({4, 1}, {1.0, 2.0, 3.0, 4.0});
  const std::vector<std::uint8_t> mask{1, 0, 1, 1};
  CHECK(gradient_error([&] { return ag::masked_mse(p, t, mask); }, {p}) < kTol);
}

TEST_CASE("constant-only graphs record no gradient") {
  const auto a = ag::constant({2}, {1.0, 2.0});
  const auto b = ag::mul(a, a);
  CHECK_FALSE(b.requires_grad());
  CHECK(b.node()->parents.empty());
}

TEST_CASE("shape errors") {
  const auto a = ag::zeros({2, 3});
  const auto b = ag::zeros({2, 2});
  CHECK_THROWS_AS(ag::add(a, b), ShapeError);
  CHECK_THROWS_AS(ag::matmul(a, b), ShapeError);
  CHECK_THROWS_AS(ag::reshape(a, {5}), ShapeError);
}
