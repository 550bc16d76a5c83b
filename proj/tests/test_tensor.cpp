#include <catch2/catch_amalgamated.hpp>

#include "backpack/tensor.hpp"

using namespace backpack;

namespace {

Tensor randt(std::vector<int> shape, Rng& rng, bool rg = true) {
  return Tensor::randn(std::move(shape), rng, 1.0, rg);
}

}  // namespace

TEST_CASE("matmul matches hand-computed product") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {0, 1});
  Tensor c = matmul(a, b);
  REQUIRE(c.shape() == std::vector<int>{2, 1});
  CHECK(c.data()[0] == 2.0);
  CHECK(c.data()[1] == 4.0);
}

TEST_CASE("matmul by identity is exact and zero matrix annihilates") {
  Rng rng(7);
  Tensor a = randt({5, 5}, rng, false);
  Tensor b = randt({5, 3}, rng, false);
  Tensor eye = Tensor::zeros({5, 5});
  for (int i = 0; i < 5; ++i) eye.data()[i * 5 + i] = 1.0;

  Tensor ai = matmul(a, eye);
  for (size_t i = 0; i < a.size(); ++i) REQUIRE(ai.data()[i] == a.data()[i]);
  Tensor lhs = matmul(ai, b);
  Tensor rhs = matmul(a, b);
  for (size_t i = 0; i < lhs.size(); ++i) REQUIRE(lhs.data()[i] == rhs.data()[i]);

  Tensor z = Tensor::zeros({4, 5});
  Tensor zb = matmul(z, b);
  for (double v : zb.data()) REQUIRE(v == 0.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  CHECK_NOTHROW(matmul_nt(a, b));
  CHECK_THROWS_AS(matmul_nt(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), DimensionError);
}

TEST_CASE("matmul_nt equals matmul with explicitly transposed operand") {
  Rng rng(3);
  Tensor a = randt({4, 6}, rng, false);
  Tensor b = randt({5, 6}, rng, false);
  Tensor bt = Tensor::zeros({6, 5});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j) bt.data()[j * 5 + i] = b.data()[i * 6 + j];
  Tensor lhs = matmul_nt(a, b);
  Tensor rhs = matmul(a, bt);
  for (size_t i = 0; i < lhs.size(); ++i)
    REQUIRE_THAT(lhs.data()[i], Catch::Matchers::WithinAbs(rhs.data()[i], 1e-12));
}

TEST_CASE("softmax frozen values") {
  Tensor x = Tensor::from({2}, {0.0, std::log(3.0)});
  Tensor y = softmax(x, 0);
  CHECK_THAT(y.data()[0], Catch::Matchers::WithinAbs(0.25, 1e-15));
  CHECK_THAT(y.data()[1], Catch::Matchers::WithinAbs(0.75, 1e-15));

  Tensor u = softmax(Tensor::from({3}, {0.0, 0.0, 0.0}), 0);
  for (double v : u.data()) CHECK_THAT(v, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-16));

  // Max subtraction keeps huge logits finite.
  Tensor big = softmax(Tensor::from({2}, {1000.0, 1000.0 + std::log(3.0)}), 0);
  CHECK_THAT(big.data()[0], Catch::Matchers::WithinAbs(0.25, 1e-12));
  CHECK_THAT(big.data()[1], Catch::Matchers::WithinAbs(0.75, 1e-12));
}

TEST_CASE("softmax across a chosen axis of a matrix") {
  Tensor x = Tensor::from({2, 2}, {0.0, std::log(3.0), std::log(3.0), 0.0});
  Tensor rowwise = softmax(x, 1);
  CHECK_THAT(rowwise.data()[0], Catch::Matchers::WithinAbs(0.25, 1e-15));
  CHECK_THAT(rowwise.data()[1], Catch::Matchers::WithinAbs(0.75, 1e-15));
  Tensor colwise = softmax(x, 0);
  CHECK_THAT(colwise.data()[0], Catch::Matchers::WithinAbs(0.25, 1e-15));
  CHECK_THAT(colwise.data()[2], Catch::Matchers::WithinAbs(0.75, 1e-15));
  CHECK_THROWS_AS(softmax(x, 2), DimensionError);
}

TEST_CASE("causal softmax is row-stochastic over the lower triangle") {
  Rng rng(11);
  Tensor s = randt({6, 6}, rng, false);
  Tensor a = causal_softmax(s);
  REQUIRE(a.data()[0] == 1.0);  // first row attends only to itself
  for (int i = 0; i < 6; ++i) {
    double row = 0.0;
    for (int j = 0; j < 6; ++j) {
      double v = a.data()[i * 6 + j];
      if (j > i) {
        REQUIRE(v == 0.0);
      } else {
        REQUIRE(v > 0.0);
        row += v;
      }
    }
    REQUIRE_THAT(row, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
  CHECK_THROWS_AS(causal_softmax(Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("log_softmax frozen values and normalization") {
  Tensor x = Tensor::from({1, 2}, {0.0, std::log(3.0)});
  Tensor y = log_softmax(x);
  CHECK_THAT(y.data()[0], Catch::Matchers::WithinAbs(-1.3862943611198906, 1e-14));
  CHECK_THAT(y.data()[1], Catch::Matchers::WithinAbs(-0.2876820724517809, 1e-14));

  Rng rng(5);
  Tensor z = log_softmax(randt({3, 7}, rng, false));
  for (int r = 0; r < 3; ++r) {
    double s = 0.0;
    for (int c = 0; c < 7; ++c) s += std::exp(z.data()[r * 7 + c]);
    CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("cross entropy frozen value") {
  Tensor logits = Tensor::from({1, 2}, {0.0, std::log(3.0)});
  Tensor loss = cross_entropy(logits, {1});
  CHECK_THAT(loss.item(), Catch::Matchers::WithinAbs(0.2876820724517809, 1e-14));
  CHECK_THROWS_AS(cross_entropy(logits, {2}), DimensionError);
  CHECK_THROWS_AS(cross_entropy(logits, {0, 1}), DimensionError);
}

TEST_CASE("gelu frozen values") {
  Tensor x = Tensor::from({3}, {0.0, 1.0, -2.0});
  Tensor y = gelu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK_THAT(y.data()[1], Catch::Matchers::WithinAbs(0.8411919906082768, 1e-15));
  CHECK_THAT(y.data()[2], Catch::Matchers::WithinAbs(-0.04540230591222494, 1e-15));
}

TEST_CASE("layer norm frozen values") {
  Tensor x = Tensor::from({1, 3}, {1.0, 2.0, 3.0});
  Tensor g = Tensor::full({3}, 1.0);
  Tensor b = Tensor::zeros({3});
  Tensor y = layer_norm(x, g, b);
  CHECK_THAT(y.data()[0], Catch::Matchers::WithinAbs(-1.2247356859083902, 1e-14));
  CHECK_THAT(y.data()[1], Catch::Matchers::WithinAbs(0.0, 1e-14));
  CHECK_THAT(y.data()[2], Catch::Matchers::WithinAbs(1.2247356859083902, 1e-14));

  Tensor g2 = Tensor::from({3}, {2.0, 2.0, 2.0});
  Tensor b2 = Tensor::from({3}, {1.0, 1.0, 1.0});
  Tensor y2 = layer_norm(x, g2, b2);
  CHECK_THAT(y2.data()[0], Catch::Matchers::WithinAbs(1.0 - 2.0 * 1.2247356859083902, 1e-14));
}

TEST_CASE("rows gathers and accumulates duplicate indices in backward") {
  Tensor e = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tensor r = rows(e, {0, 2, 0});
  REQUIRE(r.shape() == std::vector<int>{3, 2});
  CHECK(r.data()[0] == 1.0);
  CHECK(r.data()[4] == 1.0);
  CHECK(r.data()[5] == 2.0);
  Tensor loss = sum(r);
  backward(loss);
  CHECK(e.grad()[0] == 2.0);  // row 0 gathered twice
  CHECK(e.grad()[2] == 0.0);  // row 1 untouched
  CHECK(e.grad()[4] == 1.0);
  CHECK_THROWS_AS(rows(e, {3}), DimensionError);
  CHECK_THROWS_AS(rows(e, {-1}), DimensionError);
}

TEST_CASE("slices keep values and route gradients to the right block") {
  Tensor a = Tensor::from({2, 4}, {0, 1, 2, 3, 4, 5, 6, 7}, true);
  Tensor c = slice_cols(a, 1, 3);
  CHECK(c.data() == std::vector<double>{1, 2, 5, 6});
  backward(sum(c));
  CHECK(a.grad() == std::vector<double>{0, 1, 1, 0, 0, 1, 1, 0});

  Tensor r = slice_rows(a, 1, 2);
  CHECK(r.data() == std::vector<double>{4, 5, 6, 7});
  CHECK_THROWS_AS(slice_cols(a, 2, 2), DimensionError);
  CHECK_THROWS_AS(slice_rows(a, 0, 3), DimensionError);
}

TEST_CASE("backward rejects non-scalar roots") {
  Tensor a = Tensor::zeros({2, 2}, true);
  CHECK_THROWS_AS(backward(add(a, a)), DimensionError);
}

TEST_CASE("shape mismatches are rejected") {
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  CHECK_THROWS_AS(mul(Tensor::zeros({2, 2}), Tensor::zeros({4})), DimensionError);
  CHECK_THROWS_AS(add_row(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), DimensionError);
}

TEST_CASE("gradient of a quadratic matches 2x exactly") {
  Tensor x = Tensor::from({3}, {1.5, -0.25, 2.0}, true);
  backward(sum(mul(x, x)));
  for (int i = 0; i < 3; ++i)
    CHECK_THAT(x.grad()[i], Catch::Matchers::WithinAbs(2.0 * x.data()[i], 1e-15));
}

TEST_CASE("backward is idempotent: repeated calls give identical gradients") {
  Rng rng(21);
  Tensor a = randt({4, 4}, rng);
  Tensor b = randt({4, 4}, rng);
  Tensor loss = sum(gelu(matmul(a, b)));
  Graph g = Graph::build(loss);
  g.backward();
  std::vector<double> first = a.grad();
  g.backward();
  REQUIRE(a.grad() == first);
}

TEST_CASE("grad_check validates every differentiable op") {
  Rng rng(42);
  const double tol = 1e-6;

  SECTION("matmul chain") {
    Tensor a = randt({3, 4}, rng);
    Tensor b = randt({4, 2}, rng);
    auto f = [&] { return sum(matmul(a, b)); };
    CHECK(grad_check(f, a) < tol);
    CHECK(grad_check(f, b) < tol);
  }
  SECTION("matmul_nt") {
    Tensor a = randt({3, 4}, rng);
    Tensor b = randt({5, 4}, rng);
    auto f = [&] { return sum(gelu(matmul_nt(a, b))); };
    CHECK(grad_check(f, a) < tol);
    CHECK(grad_check(f, b) < tol);
  }
  SECTION("add, add_row, mul, scale") {
    Tensor a = randt({2, 3}, rng);
    Tensor b = randt({2, 3}, rng);
    Tensor v = randt({3}, rng);
    auto f = [&] { return sum(mul(scale(add_row(add(a, b), v), 0.7), a)); };
    CHECK(grad_check(f, a) < tol);
    CHECK(grad_check(f, b) < tol);
    CHECK(grad_check(f, v) < tol);
  }
  SECTION("layer_norm") {
    Tensor x = randt({3, 5}, rng);
    Tensor g = randt({5}, rng);
    Tensor b = randt({5}, rng);
    Tensor w = randt({3, 5}, rng, false);
    auto f = [&] { return sum(mul(layer_norm(x, g, b), w)); };
    CHECK(grad_check(f, x) < tol);
    CHECK(grad_check(f, g) < tol);
    CHECK(grad_check(f, b) < tol);
  }
  SECTION("softmax and causal softmax") {
    Tensor x = randt({4, 4}, rng);
    Tensor w = randt({4, 4}, rng, false);
    auto f = [&] { return sum(mul(softmax(x, 1), w)); };
    CHECK(grad_check(f, x) < tol);
    auto fc = [&] { return sum(mul(causal_softmax(x), w)); };
    CHECK(grad_check(fc, x) < tol);
  }
  SECTION("log_softmax and cross entropy") {
    Tensor x = randt({3, 6}, rng);
    Tensor w = randt({3, 6}, rng, false);
    auto f = [&] { return sum(mul(log_softmax(x), w)); };
    CHECK(grad_check(f, x) < tol);
    auto fce = [&] { return cross_entropy(x, {1, 5, 0}); };
    CHECK(grad_check(fce, x) < tol);
  }
  SECTION("rows with duplicates") {
    Tensor e = randt({4, 3}, rng);
    auto f = [&] { return sum(gelu(rows(e, {1, 3, 1, 0}))); };
    CHECK(grad_check(f, e) < tol);
  }
  SECTION("slices and mean") {
    Tensor a = randt({4, 6}, rng);
    auto f = [&] { return mean(gelu(slice_cols(slice_rows(a, 1, 4), 2, 5))); };
    CHECK(grad_check(f, a) < tol);
  }
}

TEST_CASE("graph of a reused subexpression backpropagates once per path") {
  // loss = sum(h + h) where h = a*a  =>  dloss/da = 4a
  Tensor a = Tensor::from({2}, {3.0, -1.0}, true);
  Tensor h = mul(a, a);
  backward(sum(add(h, h)));
  CHECK(a.grad()[0] == 12.0);
  CHECK(a.grad()[1] == -4.0);
}

TEST_CASE("constants do not accumulate gradients") {
  Tensor a = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor c = Tensor::from({2}, {5.0, 5.0}, false);
  backward(sum(mul(a, c)));
  CHECK(a.grad() == std::vector<double>{5.0, 5.0});
  CHECK(c.grad().empty());
}
