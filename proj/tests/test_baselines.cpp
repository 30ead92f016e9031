#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "mtcn/baselines.hpp"
#include "mtcn/rng.hpp"

using namespace mtcn;

namespace {

PixelSeries series(std::initializer_list<std::initializer_list<double>> rows) {
  PixelSeries s;
  s.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index r = 0;
  for (const auto& row : rows) {
    Index c = 0;
    for (double v : row) s.values(r, c++) = v;
    ++r;
  }
  s.available.assign(rows.size(), true);
  return s;
}

PixelSeries random_series(Index t, Index ch, Rng& rng) {
  PixelSeries s;
  s.values.resize(t, ch);
  for (Index i = 0; i < t; ++i)
    for (Index c = 0; c < ch; ++c) s.values(i, c) = uniform01(rng);
  s.available.assign(static_cast<std::size_t>(t), true);
  return s;
}

}  // namespace

TEST_CASE("recurrence plot examples") {
  const auto constant = recurrence_plot(series({{0.3, 0.1}, {0.3, 0.1}, {0.3, 0.1}}), 0.0);
  CHECK((constant.matrix.array() == 1.0).all());

  const auto two = recurrence_plot(series({{0.0}, {1.0}}), 0.5);
  CHECK(two.matrix(0, 0) == 1.0);
  CHECK(two.matrix(0, 1) == 0.0);
  CHECK(two.matrix(1, 0) == 0.0);
  CHECK(two.matrix(1, 1) == 1.0);

  const auto distinct = recurrence_plot(series({{0.1}, {0.4}, {0.2}, {0.9}}), 0.0);
  CHECK(distinct.matrix == RowMatrix<double>::Identity(4, 4));
}

TEST_CASE("recurrence plot is symmetric with a unit diagonal and channel-order invariant") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    PixelSeries s = random_series(10, 3, rng);
    const double eps = 0.5 * uniform01(rng);
    const auto rp = recurrence_plot(s, eps);
    CHECK(rp.matrix == rp.matrix.transpose());
    CHECK((rp.matrix.diagonal().array() == 1.0).all());
    PixelSeries swapped = s;
    swapped.values.col(0).swap(swapped.values.col(2));
    CHECK(recurrence_plot(swapped, eps).matrix == rp.matrix);
  }
}

TEST_CASE("recurrence plot skips unavailable timestamps") {
  PixelSeries s = series({{0.0}, {5.0}, {0.0}, {1.0}});
  s.available = {true, false, true, true};
  const auto rp = recurrence_plot(s, 0.5);
  CHECK(rp.matrix.rows() == 3);
  CHECK(rp.matrix(0, 1) == 1.0);
  CHECK(rp.matrix(0, 2) == 0.0);
  s.available = {false, true, false, false};
  CHECK_THROWS_AS(recurrence_plot(s, 0.5), InputError);
  CHECK_THROWS_AS(recurrence_plot(series({{0.0}, {1.0}}), -1.0), InputError);
}

TEST_CASE("default threshold is a tenth of the largest distance") {
  CHECK(default_threshold(series({{0.0, 0.0}, {3.0, 4.0}, {1.0, 1.0}})) == doctest::Approx(0.5));
}

TEST_CASE("lbp examples") {
  const auto flat = lbp_histogram(RowMatrix<double>::Constant(5, 6, 0.7));
  CHECK(flat[255] == 1.0);
  CHECK(std::accumulate(flat.begin(), flat.end(), 0.0) == 1.0);

  RowMatrix<double> peak = RowMatrix<double>::Zero(3, 3);
  peak(1, 1) = 1.0;
  CHECK(lbp_histogram(peak)[0] == 1.0);

  // Only the top-left neighbor (bit 0) and the left neighbor (bit 7) reach the center.
  RowMatrix<double> bits = RowMatrix<double>::Zero(3, 3);
  bits(1, 1) = 0.5;
  bits(0, 0) = 0.9;
  bits(1, 0) = 0.5;
  CHECK(lbp_histogram(bits)[1 + 128] == 1.0);
  bits.setZero();
  bits(1, 1) = 0.5;
  bits(0, 2) = 1.0;  // top-right is bit 2
  CHECK(lbp_histogram(bits)[4] == 1.0);

  CHECK_THROWS_AS(lbp_histogram(RowMatrix<double>::Zero(2, 5)), InputError);
}

TEST_CASE("lbp histogram sums to one and ignores a constant offset") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    RowMatrix<double> m(3 + static_cast<Index>(uniform_index(rng, 8)), 3 + static_cast<Index>(uniform_index(rng, 8)));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(uniform_index(rng, 4));
    const auto h = lbp_histogram(m);
    CHECK(std::abs(std::accumulate(h.begin(), h.end(), 0.0) - 1.0) < 1e-9);
    const RowMatrix<double> shifted = m.array() + 3.25;
    CHECK(lbp_histogram(shifted) == h);
  }
}

TEST_CASE("linear classifier separates disjoint one-hot descriptors") {
  RowMatrix<double> x = RowMatrix<double>::Zero(40, 256);
  std::vector<int> y(40);
  for (Index i = 0; i < 40; ++i) {
    y[static_cast<std::size_t>(i)] = static_cast<int>(i % 2);
    x(i, i % 2 ? 17 : 200) = 1.0;
  }
  LinearClassifierConfig cfg;
  cfg.iterations = 300;
  const auto model = LinearClassifier::fit(x, y, 2, cfg);
  CHECK(model.predict(x) == y);
}

TEST_CASE("linear classifier does not depend on sample order") {
  Rng rng(3);
  RowMatrix<double> x(60, 256);
  std::vector<int> y(60);
  for (Index i = 0; i < 60; ++i) {
    y[static_cast<std::size_t>(i)] = static_cast<int>(uniform_index(rng, 3));
    for (Index k = 0; k < 256; ++k) x(i, k) = uniform01(rng) + (k == y[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
  }
  std::vector<Index> perm(60);
  std::iota(perm.begin(), perm.end(), Index{0});
  shuffle(perm.begin(), perm.end(), rng);
  RowMatrix<double> xp(60, 256);
  std::vector<int> yp(60);
  for (Index i = 0; i < 60; ++i) {
    xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    yp[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  LinearClassifierConfig cfg;
  cfg.iterations = 200;
  cfg.seed = 9;
  const auto a = LinearClassifier::fit(x, y, 3, cfg);
  const auto b = LinearClassifier::fit(xp, yp, 3, cfg);
  CHECK(a.weights() == b.weights());
  CHECK(a.bias() == b.bias());
}

TEST_CASE("linear classifier rejects single-class data") {
  RowMatrix<double> x = RowMatrix<double>::Random(5, 256);
  const std::vector<int> y(5, 1);
  CHECK_THROWS_AS(LinearClassifier::fit(x, y, 2), ConfigError);
}
