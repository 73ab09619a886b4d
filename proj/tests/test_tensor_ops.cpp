#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "somn/ops.hpp"
#include "somn/rng.hpp"

using namespace somn;

TEST_CASE("tensor invariants") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0f, 2.0f}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
  Tensor bad = Tensor::from({2}, {1.0f, std::nanf("")});
  CHECK_THROWS_AS(bad.check_finite("bad"), NumericError);
}

TEST_CASE("matmul against identity returns the input") {
  Tape tape;
  Rng rng(3);
  std::vector<float> av(12);
  for (auto& v : av) v = rng.normal();
  Tensor a = Tensor::from({3, 4}, av);
  Tensor eye = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i) eye.data()[i * 4 + i] = 1.0f;
  Tensor out = ops::matmul(tape, a, eye);
  for (int i = 0; i < 12; ++i) CHECK(out.data()[i] == av[i]);
}

TEST_CASE("matmul shape errors name both shapes") {
  Tape tape;
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    ops::matmul(tape, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("softmax of equal logits is uniform") {
  Tape tape;
  Tensor x = Tensor::from({1, 5}, std::vector<float>(5, 0.7f));
  Tensor y = ops::softmax(tape, x);
  for (int i = 0; i < 5; ++i) CHECK(y.data()[i] == doctest::Approx(0.2f));
}

TEST_CASE("layernorm of a constant vector is zero pre-affine") {
  Tape tape;
  Tensor x = Tensor::from({2, 8}, std::vector<float>(16, -4.2f));
  Tensor y = ops::layernorm(tape, x);
  // the epsilon-in-denominator convention leaves only f32 mean-rounding residue
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i]) < 1e-3f);
}

TEST_CASE("broadcast add over trailing dim") {
  Tape tape;
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3}, {10, 20, 30});
  Tensor y = ops::add(tape, a, b);
  CHECK(y.data()[0] == 11.0f);
  CHECK(y.data()[5] == 36.0f);
  Tensor bad = Tensor::from({2}, {1, 2});
  CHECK_THROWS_AS(ops::add(tape, a, bad), ShapeError);
}

TEST_CASE("embedding lookup bounds") {
  Tape tape;
  Tensor table = Tensor::from({3, 2}, {0, 1, 2, 3, 4, 5});
  Tensor out = ops::embedding(tape, table, {2, 0});
  CHECK(out.data()[0] == 4.0f);
  CHECK(out.data()[3] == 1.0f);
  CHECK_THROWS_AS(ops::embedding(tape, table, {3}), IndexError);
}

TEST_CASE("cross_entropy matches the direct formula") {
  Tape tape;
  SUBCASE("uniform logits give ln(V)") {
    Tensor z = Tensor::from({6}, std::vector<float>(6, 1.3f));
    CHECK(ops::cross_entropy(tape, z, 2).item() == doctest::Approx(std::log(6.0)).epsilon(1e-6));
  }
  SUBCASE("loss decreases as the target logit grows") {
    float prev = 1e9f;
    for (float margin = 0.0f; margin < 5.0f; margin += 1.0f) {
      Tensor z = Tensor::from({4}, {margin, 0.0f, 0.0f, 0.0f});
      const float loss = ops::cross_entropy(tape, z, 0).item();
      CHECK(loss < prev);
      prev = loss;
    }
  }
  SUBCASE("random logits vs brute force") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<float> zv(9);
      for (auto& v : zv) v = rng.normal(0.0f, 2.0f);
      const int target = rng.uniform_int(0, 8);
      double denom = 0.0;
      for (float v : zv) denom += std::exp(static_cast<double>(v));
      const double expected = -std::log(std::exp(static_cast<double>(zv[target])) / denom);
      Tensor z = Tensor::from({9}, zv);
      CHECK(ops::cross_entropy(tape, z, target).item() == doctest::Approx(expected).epsilon(1e-6));
    }
  }
  SUBCASE("out-of-range target") {
    Tensor z = Tensor::from({4}, {0, 0, 0, 0});
    CHECK_THROWS_AS(ops::cross_entropy(tape, z, 4), IndexError);
  }
}

TEST_CASE("mse") {
  Tape tape;
  Rng rng(9);
  SUBCASE("identical inputs give zero") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(ops::mse(tape, a, a).item() == 0.0f);
  }
  SUBCASE("constant offset c gives c^2") {
    std::vector<float> av(10), bv(10);
    for (int i = 0; i < 10; ++i) {
      av[i] = rng.normal();
      bv[i] = av[i] + 0.75f;
    }
    CHECK(ops::mse(tape, Tensor::from({10}, av), Tensor::from({10}, bv)).item() ==
          doctest::Approx(0.5625f).epsilon(1e-6));
  }
  SUBCASE("random pair vs direct summation") {
    std::vector<float> av(24), bv(24);
    double acc = 0.0;
    for (int i = 0; i < 24; ++i) {
      av[i] = rng.normal();
      bv[i] = rng.normal();
      acc += std::pow(static_cast<double>(av[i]) - bv[i], 2);
    }
    CHECK(ops::mse(tape, Tensor::from({4, 6}, av), Tensor::from({4, 6}, bv)).item() ==
          doctest::Approx(acc / 24.0).epsilon(1e-7));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(ops::mse(tape, Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  }
}

TEST_CASE("concat and slice round trip") {
  Tape tape;
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({1, 2}, {5, 6});
  Tensor cat = ops::concat_rows(tape, {a, b});
  CHECK(cat.shape() == Shape{3, 2});
  Tensor back = ops::slice_rows(tape, cat, 2, 1);
  CHECK(back.data()[0] == 5.0f);
  CHECK_THROWS_AS(ops::slice_rows(tape, cat, 2, 2), IndexError);
  CHECK_THROWS_AS(ops::slice_cols(tape, cat, 1, 2), IndexError);
}

TEST_CASE("clamp_max saturates") {
  Tape tape;
  Tensor x = Tensor::from({3}, {1.0f, 7.0f, 5.9f});
  Tensor y = ops::clamp_max(tape, x, 6.0f);
  CHECK(y.data()[0] == 1.0f);
  CHECK(y.data()[1] == 6.0f);
  CHECK(y.data()[2] == 5.9f);
}

TEST_CASE("determinism: identical inputs give bitwise-identical results") {
  auto run = [] {
    Tape tape;
    Rng rng(123);
    std::vector<float> av(64), bv(64);
    for (auto& v : av) v = rng.normal();
    for (auto& v : bv) v = rng.normal();
    Tensor a = Tensor::from({8, 8}, av, true);
    Tensor b = Tensor::from({8, 8}, bv);
    Tensor y = ops::softmax(tape, ops::matmul(tape, ops::gelu(tape, a), b));
    Tensor loss = ops::mean(tape, y);
    tape.backward(loss);
    return std::make_pair(y.vec(), a.grad_vec());
  };
  auto [y1, g1] = run();
  auto [y2, g2] = run();
  CHECK(y1 == y2);
  CHECK(g1 == g2);
}
