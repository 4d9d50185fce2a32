#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "grda/autodiff.hpp"
#include "grda/errors.hpp"

using namespace grda;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Contracts an op's output with fixed random weights so every output
// element carries a distinct upstream gradient.
Var weighted_sum(Tape& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

}  // namespace

TEST_CASE("matmul") {
  Tape tape;
  SUBCASE("identity") {
    Var i2 = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
    Var a = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
    CHECK(matmul(i2, a).value().identical(a.value()));
  }
  SUBCASE("dot product") {
    Var a = tape.constant(Tensor::from_rows({{1, 2, 3}}));
    Var b = tape.constant(Tensor::from_rows({{1}, {0}, {-1}}));
    const Tensor c = matmul(a, b).value();
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c[0] == -2.0);
  }
  SUBCASE("zero annihilates") {
    std::mt19937_64 rng(3);
    Var z = tape.constant(Tensor::zeros({2, 3}));
    Var b = tape.constant(random_tensor({3, 4}, rng));
    const Tensor c = matmul(z, b).value();
    CHECK(c.shape() == Shape{2, 4});
    for (double v : c.data()) CHECK(v == 0.0);
  }
  SUBCASE("shape mismatch names both shapes") {
    Var a = tape.constant(Tensor::zeros({2, 3}));
    Var b = tape.constant(Tensor::zeros({4, 2}));
    try {
      matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[4x2]") != std::string::npos);
    }
  }
  SUBCASE("backward matches dA = dC B^T, dB = A^T dC") {
    std::mt19937_64 rng(11);
    auto res = gradcheck::check(
        [](Tape& t, std::span<const Var> v) { return weighted_sum(t, matmul(v[0], v[1]), 5); },
        {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
    CHECK(res.max_rel_error() <= 1e-6);
  }
}

TEST_CASE("conv2d") {
  Tape tape;
  SUBCASE("zero kernel leaves the bias") {
    Var x = tape.constant(Tensor::full({1, 1, 3, 3}, 1.0));
    Var k = tape.constant(Tensor::zeros({1, 1, 3, 3}));
    Var b = tape.constant(Tensor::vector({0.5}));
    for (double v : conv2d(x, k, b).value().data()) CHECK(v == 0.5);
  }
  SUBCASE("identity-centre kernel reproduces the input") {
    Tensor delta({1, 1, 3, 3});
    delta[4] = 1.0;
    Tensor centre({1, 1, 3, 3});
    centre[4] = 1.0;
    Var y = conv2d(tape.constant(delta), tape.constant(centre), tape.constant(Tensor::vector({0.0})));
    CHECK(y.value().identical(delta));
  }
  SUBCASE("channel mismatch") {
    Var x = tape.constant(Tensor::zeros({1, 2, 4, 4}));
    Var k = tape.constant(Tensor::zeros({1, 3, 3, 3}));
    CHECK_THROWS_AS(conv2d(x, k, tape.constant(Tensor::zeros({1}))), DimensionError);
  }
  SUBCASE("finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      std::mt19937_64 rng(seed);
      auto res = gradcheck::check(
          [seed](Tape& t, std::span<const Var> v) { return weighted_sum(t, conv2d(v[0], v[1], v[2]), seed); },
          {random_tensor({1, 1, 4, 4}, rng), random_tensor({2, 1, 3, 3}, rng), random_tensor({2}, rng)});
      CHECK(res.max_rel_error() <= 1e-6);
    }
  }
  SUBCASE("multi-channel, rectangular") {
    std::mt19937_64 rng(42);
    auto res = gradcheck::check(
        [](Tape& t, std::span<const Var> v) { return weighted_sum(t, conv2d(v[0], v[1], v[2]), 9); },
        {random_tensor({2, 2, 3, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
    CHECK(res.max_rel_error() <= 1e-6);
  }
}

TEST_CASE("maxpool2d") {
  Tape tape;
  SUBCASE("single window") {
    Var x = tape.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
    CHECK(maxpool2d(x).value().item() == 4.0);
  }
  SUBCASE("ties route to the top-left of each window") {
    Var x = tape.parameter("x", Tensor::full({1, 1, 4, 4}, 0.7));
    Var y = maxpool2d(x);
    for (double v : y.value().data()) CHECK(v == 0.7);
    const Tensor g = backward(sum(y)).at("x");
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(g[r * 4 + c] == ((r % 2 == 0 && c % 2 == 0) ? 1.0 : 0.0));
      }
    }
  }
  SUBCASE("odd extent") {
    CHECK_THROWS_AS(maxpool2d(tape.constant(Tensor::zeros({1, 1, 3, 4}))), DimensionError);
  }
  SUBCASE("finite differences away from ties") {
    std::mt19937_64 rng(7);
    auto res = gradcheck::check(
        [](Tape& t, std::span<const Var> v) { return weighted_sum(t, maxpool2d(v[0]), 2); },
        {random_tensor({1, 1, 4, 4}, rng)});
    CHECK(res.max_rel_error() <= 1e-6);
    CHECK(res.skipped == 0);
  }
}

TEST_CASE("leaky_relu") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::vector({2, -2}));
  const Tensor y = leaky_relu(x, 0.01).value();
  CHECK(y[0] == 2.0);
  CHECK(y[1] == doctest::Approx(-0.02).epsilon(1e-15));

  Var pos = tape.constant(Tensor::vector({0.0, 1.5, 3.0}));
  CHECK(leaky_relu(pos, 0.01).value().identical(pos.value()));

  Tape t2;
  Var z = t2.parameter("z", Tensor::vector({3, -3}));
  const Tensor g = backward(sum(leaky_relu(z, 0.01))).at("z");
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.01);
}

TEST_CASE("concat") {
  Tape tape;
  SUBCASE("one part is the identity") {
    Var a = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
    Var parts[] = {a};
    CHECK(concat(parts).value().identical(a.value()));
  }
  SUBCASE("six taps of width 100 give a 600-wide latent") {
    std::vector<Var> parts;
    for (int i = 0; i < 6; ++i) parts.push_back(tape.constant(Tensor::zeros({2, 100})));
    CHECK(concat(parts).shape() == Shape{2, 600});
  }
  SUBCASE("backward slices the gradient back") {
    std::vector<Var> parts;
    for (int i = 0; i < 4; ++i) parts.push_back(tape.parameter("p" + std::to_string(i), Tensor::zeros({3, 16})));
    Var y = concat(parts);
    CHECK(y.shape() == Shape{3, 64});
    const auto g = backward(sum(y));
    for (int i = 0; i < 4; ++i) {
      const Tensor& gi = g.at("p" + std::to_string(i));
      CHECK(gi.shape() == Shape{3, 16});
      for (double v : gi.data()) CHECK(v == 1.0);
    }
  }
  SUBCASE("batch mismatch") {
    std::vector<Var> parts{tape.constant(Tensor::zeros({2, 3})), tape.constant(Tensor::zeros({3, 3}))};
    CHECK_THROWS_AS(concat(parts), DimensionError);
  }
}

TEST_CASE("log_softmax") {
  Tape tape;
  SUBCASE("zeros row") {
    const Tensor y = log_softmax(tape.constant(Tensor::zeros({1, 7}))).value();
    for (double v : y.data()) CHECK(v == doctest::Approx(-std::log(7.0)).epsilon(1e-14));
    CHECK(y[0] == doctest::Approx(-1.945910).epsilon(1e-6));
  }
  SUBCASE("shift invariance") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({3, 5}, rng);
    Tensor shifted = x;
    for (double& v : shifted.data()) v += 123.25;
    const Tensor a = log_softmax(tape.constant(x)).value();
    const Tensor b = log_softmax(tape.constant(shifted)).value();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
  SUBCASE("large logits do not overflow") {
    const Tensor y = log_softmax(tape.constant(Tensor::from_rows({{1000, 0}}))).value();
    CHECK(std::isfinite(y[0]));
    CHECK(std::isfinite(y[1]));
    CHECK(std::abs(y[0]) < 1e-300);
    CHECK(y[1] == doctest::Approx(-1000.0));
  }
  SUBCASE("rows are normalised and non-positive") {
    std::mt19937_64 rng(2);
    const Tensor y = log_softmax(tape.constant(random_tensor({6, 4}, rng, -20, 20))).value();
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        s += std::exp(y[i * 4 + j]);
        CHECK(y[i * 4 + j] <= 0.0);
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
  SUBCASE("finite differences") {
    std::mt19937_64 rng(8);
    auto res = gradcheck::check(
        [](Tape& t, std::span<const Var> v) { return weighted_sum(t, log_softmax(v[0]), 4); },
        {random_tensor({3, 7}, rng, -3, 3)});
    CHECK(res.max_rel_error() <= 1e-6);
  }
}

TEST_CASE("nll_loss") {
  Tape tape;
  const std::vector<int> targets{0, 2};
  SUBCASE("certain prediction") {
    Tensor lp = Tensor::full({2, 3}, -50.0);
    lp[0] = 0.0;
    lp[5] = 0.0;
    for (double v : nll_loss(tape.constant(lp), targets).value().data()) CHECK(v == 0.0);
  }
  SUBCASE("uniform over seven classes") {
    Var lp = log_softmax(tape.constant(Tensor::zeros({2, 7})));
    for (double v : nll_loss(lp, targets).value().data()) CHECK(v == doctest::Approx(1.945910).epsilon(1e-6));
  }
  SUBCASE("mask all false") {
    Var lp = log_softmax(tape.constant(Tensor::from_rows({{1, 2, 3}, {0, 0, 5}})));
    const std::vector<std::uint8_t> mask{0, 0};
    for (double v : nll_loss(lp, targets, mask).value().data()) CHECK(v == 0.0);
  }
  SUBCASE("target out of range") {
    Var lp = log_softmax(tape.constant(Tensor::zeros({2, 3})));
    const std::vector<int> bad{0, 3};
    CHECK_THROWS_AS(nll_loss(lp, bad), LabelError);
  }
  SUBCASE("finite differences through log_softmax with a mask") {
    std::mt19937_64 rng(12);
    auto res = gradcheck::check(
        [](Tape&, std::span<const Var> v) {
          const std::vector<int> t{1, 0, 3, 2};
          const std::vector<std::uint8_t> m{1, 0, 1, 1};
          return sum(nll_loss(log_softmax(v[0]), t, m));
        },
        {random_tensor({4, 4}, rng, -2, 2)});
    CHECK(res.max_rel_error() <= 1e-6);
  }
}

TEST_CASE("grad_reverse") {
  SUBCASE("forward is bit-identical") {
    Tape tape;
    Var x = tape.constant(Tensor::vector({0.3, -1.2}));
    CHECK(grad_reverse(x).value().identical(x.value()));
  }
  SUBCASE("backward negates the upstream gradient") {
    Tape tape;
    Var x = tape.parameter("x", Tensor::vector({5.0, 7.0}));
    Var up = tape.constant(Tensor::vector({0.3, -1.2}));
    const Tensor g = backward(sum(mul(grad_reverse(x), up))).at("x");
    CHECK(g[0] == -0.3);
    CHECK(g[1] == 1.2);
  }
  SUBCASE("d/dx sum(grad_reverse(x)^2) at 3 is the negated difference quotient") {
    gradcheck::Builder f = [](Tape&, std::span<const Var> v) {
      Var r = grad_reverse(v[0]);
      return sum(mul(r, r));
    };
    const auto g = gradcheck::analytic(f, {Tensor::vector({3.0})});
    CHECK(g[0][0] == doctest::Approx(-6.0).epsilon(1e-12));
    CHECK(gradcheck::check(f, {Tensor::vector({3.0})}, gradcheck::kStep, -1.0).max_rel_error() <= 1e-6);
  }
}

TEST_CASE("clamp_max and the remaining ops pass finite differences") {
  std::mt19937_64 rng(21);
  auto res = gradcheck::check(
      [](Tape& t, std::span<const Var> v) {
        Var a = add(scale(v[0], 1.5), v[1]);
        Var c = clamp_max(mul(a, a), 0.8);
        return add(weighted_sum(t, c, 1), sum(reshape(v[1], {6})));
      },
      {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  CHECK(res.max_rel_error() <= 1e-6);
}

TEST_CASE("backward") {
  SUBCASE("linear case gives dW = x") {
    Tape tape;
    const Tensor xv = Tensor::vector({0.5, -2.0, 4.0});
    Var w = tape.parameter("w", Tensor::vector({1.0, 1.0, 1.0}));
    const Tensor g = backward(sum(mul(w, tape.constant(xv)))).at("w");
    CHECK(g.identical(xv));
  }
  SUBCASE("unreachable parameters receive zeros") {
    Tape tape;
    Var a = tape.parameter("a", Tensor::vector({1.0, 2.0}));
    tape.parameter("unused", Tensor::zeros({3, 2}));
    const auto g = backward(sum(a));
    CHECK(g.size() == 2);
    CHECK(g.at("unused").shape() == Shape{3, 2});
    for (double v : g.at("unused").data()) CHECK(v == 0.0);
  }
  SUBCASE("non-scalar loss") {
    Tape tape;
    Var a = tape.parameter("a", Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(backward(a), ContractError);
  }
  SUBCASE("independent tapes give identical gradients") {
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({1, 1, 4, 4}, rng);
    const Tensor k = random_tensor({2, 1, 3, 3}, rng);
    auto run = [&] {
      Tape tape;
      Var xv = tape.parameter("x", x);
      Var kv = tape.parameter("k", k);
      Var y = leaky_relu(conv2d(xv, kv, tape.constant(Tensor::zeros({2}))), 0.01);
      return backward(sum(mul(y, y)));
    };
    const auto g1 = run();
    const auto g2 = run();
    CHECK(g1.at("x").identical(g2.at("x")));
    CHECK(g1.at("k").identical(g2.at("k")));
  }
  SUBCASE("each record is visited once even with shared inputs") {
    Tape tape;
    Var x = tape.parameter("x", Tensor::vector({2.0}));
    Var y = add(x, x);
    Var z = mul(y, y);  // 4x^2
    CHECK(backward(sum(z)).at("x")[0] == 16.0);
  }
}
