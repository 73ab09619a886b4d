#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "somn/optimizer.hpp"

using namespace somn;

TEST_CASE("zero gradients leave parameters unchanged") {
  ParameterStore P;
  P.add("w", Tensor::from({3}, {1.0f, -2.0f, 0.5f}, true));
  P.zero_grads();
  AdamState st;
  adam_step(P, st);
  CHECK(st.step_count == 1);
  CHECK(P.get("w").vec() == std::vector<float>{1.0f, -2.0f, 0.5f});
}

TEST_CASE("constant gradient moves the parameter against its sign") {
  ParameterStore P;
  P.add("w", Tensor::scalar(0.0f, true));
  AdamState st;
  st.learning_rate = 0.01f;
  for (int i = 0; i < 50; ++i) {
    P.zero_grads();
    P.get("w").grad()[0] = 2.5f;
    adam_step(P, st);
  }
  CHECK(P.get("w").item() < 0.0f);
  CHECK(st.step_count == 50);
}

TEST_CASE("one step matches the hand-computed Adam update") {
  ParameterStore P;
  P.add("w", Tensor::from({2}, {0.3f, -0.7f}, true));
  AdamState st;
  st.learning_rate = 0.05f;
  P.zero_grads();
  P.get("w").grad()[0] = 0.4f;
  P.get("w").grad()[1] = -1.2f;
  adam_step(P, st);
  // step 1: mhat = g, vhat = g^2, update = lr * g / (|g| + eps)
  auto expect = [&](double w, double g) {
    const double mhat = (0.1 * g) / (1.0 - 0.9);
    const double vhat = (0.001 * g * g) / (1.0 - 0.999);
    return w - 0.05 * mhat / (std::sqrt(vhat) + 1e-8);
  };
  CHECK(std::abs(P.get("w").vec()[0] - expect(0.3f, 0.4f)) < 1e-7);
  CHECK(std::abs(P.get("w").vec()[1] - expect(-0.7f, -1.2f)) < 1e-7);
  // grads zeroed afterwards
  CHECK(P.get("w").grad_vec()[0] == 0.0f);
}

TEST_CASE("missing gradient is an explicit error naming the parameter") {
  ParameterStore P;
  P.add("encoder.w", Tensor::scalar(1.0f, true));
  AdamState st;
  try {
    adam_step(P, st);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
  }
}

TEST_CASE("gradient clipping caps the global norm") {
  ParameterStore P;
  P.add("a", Tensor::from({2}, {0.0f, 0.0f}, true));
  P.zero_grads();
  P.get("a").grad()[0] = 3.0f;
  P.get("a").grad()[1] = 4.0f;
  CHECK(P.grad_norm() == doctest::Approx(5.0f));
  P.clip_grads(1.0f);
  CHECK(P.grad_norm() == doctest::Approx(1.0f));
}
