#include "doctest.h"

#include "mtcn/rng.hpp"
#include "mtcn/tensor.hpp"

using namespace mtcn;

TEST_CASE("shape numel and data length agree") {
  TensorF t(Shape{2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK(t.shape().numel() == t.size());
  CHECK(t.shape().str() == "[2x3x4x5]");
  CHECK_THROWS_AS(TensorF(Shape{2, 2}, TensorF::Storage::Zero(3)), ConfigError);
}

TEST_CASE("4-D indexing is row-major with W fastest") {
  TensorD t(Shape{2, 3, 4, 5});
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  CHECK(t(1, 2, 3, 4) == doctest::Approx(119));
  CHECK(t(0, 0, 1, 0) == doctest::Approx(5));
  CHECK(t(0, 1, 0, 0) == doctest::Approx(20));
  CHECK(t(1, 0, 0, 0) == doctest::Approx(60));
}

TEST_CASE("matrix view shares storage") {
  TensorF t(Shape{2, 3});
  t.matrix(2, 3)(1, 2) = 7.0f;
  CHECK(t[5] == 7.0f);
  CHECK_THROWS_AS(t.matrix(4, 2), ConfigError);
}

TEST_CASE("finiteness check") {
  TensorF t = TensorF::constant({3}, 1.0f);
  CHECK_NOTHROW(require_finite(t, "t"));
  t[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(require_finite(t, "t"), NumericError);
}

TEST_CASE("rng helpers are reproducible and in range") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(a);
    CHECK(u == uniform01(b));
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const auto k = uniform_index(a, 7);
    CHECK(k == uniform_index(b, 7));
    CHECK(k < 7);
  }
  Rng c(3);
  const std::string state = save_rng_state(c);
  const auto next = c();
  Rng d;
  load_rng_state(d, state);
  CHECK(d() == next);
}
