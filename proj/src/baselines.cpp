#include "mtcn/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "mtcn/layers.hpp"
#include "mtcn/rng.hpp"
#include "mtcn/trainer.hpp"

namespace mtcn {

PixelSeries pixel_series(const TemporalImageStack& stack, Index x, Index y) {
  if (x < 0 || y < 0 || x >= stack.width || y >= stack.height)
    throw InputError("pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") outside the image");
  PixelSeries s;
  s.values = RowMatrix<double>::Zero(stack.size(), stack.channels);
  s.available.resize(static_cast<std::size_t>(stack.size()));
  for (Index j = 0; j < stack.size(); ++j) {
    const bool avail = stack.timestamps[static_cast<std::size_t>(j)].available;
    s.available[static_cast<std::size_t>(j)] = avail;
    if (!avail) continue;
    for (Index c = 0; c < stack.channels; ++c) s.values(j, c) = stack.at(j, c, y, x);
  }
  return s;
}

namespace {

std::vector<Index> available_rows(const PixelSeries& series) {
  if (static_cast<Index>(series.available.size()) != series.length())
    throw InputError("availability flags do not match the series length");
  std::vector<Index> rows;
  for (Index j = 0; j < series.length(); ++j)
    if (series.available[static_cast<std::size_t>(j)]) rows.push_back(j);
  if (rows.size() < 2) throw InputError("recurrence plot needs at least two available timestamps");
  return rows;
}

}  // namespace

double default_threshold(const PixelSeries& series) {
  const auto rows = available_rows(series);
  double dmax = 0;
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b)
      dmax = std::max(dmax, (series.values.row(rows[a]) - series.values.row(rows[b])).norm());
  return 0.1 * dmax;
}

RecurrencePlot recurrence_plot(const PixelSeries& series, double eps) {
  if (!(eps >= 0)) throw InputError("recurrence threshold must be >= 0");
  const auto rows = available_rows(series);
  const auto k = static_cast<Index>(rows.size());
  RecurrencePlot rp{RowMatrix<double>::Zero(k, k), eps};
  for (Index a = 0; a < k; ++a)
    for (Index b = a; b < k; ++b) {
      const double d = (series.values.row(rows[static_cast<std::size_t>(a)]) -
                        series.values.row(rows[static_cast<std::size_t>(b)]))
                           .norm();
      rp.matrix(a, b) = rp.matrix(b, a) = d <= eps ? 1.0 : 0.0;
    }
  return rp;
}

std::array<double, 256> lbp_histogram(const RowMatrix<double>& input) {
  if (input.rows() < 3 || input.cols() < 3)
    throw InputError("LBP needs at least a 3x3 input, got " + std::to_string(input.rows()) + "x" +
                     std::to_string(input.cols()));
  static constexpr int dy[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
  static constexpr int dx[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
  std::array<double, 256> hist{};
  for (Index y = 1; y + 1 < input.rows(); ++y)
    for (Index x = 1; x + 1 < input.cols(); ++x) {
      const double center = input(y, x);
      int code = 0;
      for (int b = 0; b < 8; ++b)
        if (input(y + dy[b], x + dx[b]) >= center) code |= 1 << b;
      hist[static_cast<std::size_t>(code)] += 1.0;
    }
  const double total = static_cast<double>((input.rows() - 2) * (input.cols() - 2));
  for (auto& v : hist) v /= total;
  return hist;
}

std::array<double, 256> rp_lbp_descriptor(const PixelSeries& series) {
  return lbp_histogram(recurrence_plot(series, default_threshold(series)).matrix);
}

RowMatrix<double> rp_lbp_features(const TemporalImageStack& stack, std::span<const LabeledPixel> pixels) {
  RowMatrix<double> out(static_cast<Index>(pixels.size()), 256);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto h = rp_lbp_descriptor(pixel_series(stack, pixels[i].x, pixels[i].y));
    for (Index b = 0; b < 256; ++b) out(static_cast<Index>(i), b) = h[static_cast<std::size_t>(b)];
  }
  return out;
}

LinearClassifier LinearClassifier::fit(const RowMatrix<double>& features, std::span<const int> labels,
                                       Index num_classes, const LinearClassifierConfig& config) {
  const Index n = features.rows();
  const Index dim = features.cols();
  if (n != static_cast<Index>(labels.size())) throw InputError("feature and label counts differ");
  if (n == 0) throw ConfigError("linear classifier needs training samples");
  std::set<int> seen;
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw InputError("label " + std::to_string(l) + " out of range");
    seen.insert(l);
  }
  if (seen.size() < 2) throw ConfigError("linear classifier needs at least two classes in the training set");
  if (config.iterations < 0 || config.batch_size < 1 || !(config.learning_rate > 0))
    throw ConfigError("invalid linear classifier config");

  // Canonical order: by label, then lexicographically by features.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (labels[static_cast<std::size_t>(a)] != labels[static_cast<std::size_t>(b)])
      return labels[static_cast<std::size_t>(a)] < labels[static_cast<std::size_t>(b)];
    for (Index k = 0; k < dim; ++k)
      if (features(a, k) != features(b, k)) return features(a, k) < features(b, k);
    return false;
  });
  RowMatrix<double> x(n, dim);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    x.row(i) = features.row(order[static_cast<std::size_t>(i)]);
    y[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }

  LinearClassifier model;
  model.mean_ = x.colwise().mean().transpose();
  model.scale_ = Vector<double>::Ones(dim);
  for (Index k = 0; k < dim; ++k) {
    const double sd = std::sqrt((x.col(k).array() - model.mean_[k]).square().mean());
    if (sd > 1e-12) model.scale_[k] = 1.0 / sd;
  }
  x = ((x.rowwise() - model.mean_.transpose()).array().rowwise() * model.scale_.transpose().array()).matrix();

  TensorD w(Shape{num_classes, dim}), b(Shape{num_classes});
  TensorD gw(w.shape()), gb(b.shape()), vw(w.shape()), vb(b.shape());
  const std::vector<ParamSlot<double>> slots{{"weights", &w, &gw, &vw, true}, {"bias", &b, &gb, &vb, false}};
  TrainingConfig tc;
  tc.learning_rate = config.learning_rate;
  tc.weight_decay = config.weight_decay;
  tc.momentum = config.momentum;
  tc.max_iterations = config.iterations;
  tc.decay_interval = std::max<std::int64_t>(1, config.iterations / 3);

  Rng rng(config.seed);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::size_t cursor = perm.size();
  const Index bs = std::min(config.batch_size, n);
  RowMatrix<double> xb(bs, dim);
  std::vector<int> yb(static_cast<std::size_t>(bs));
  for (std::int64_t it = 0; it < config.iterations; ++it) {
    for (Index i = 0; i < bs; ++i) {
      if (cursor == perm.size()) {
        shuffle(perm.begin(), perm.end(), rng);
        cursor = 0;
      }
      const Index s = perm[cursor++];
      xb.row(i) = x.row(s);
      yb[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(s)];
    }
    TensorD logits(Shape{bs, num_classes});
    logits.matrix(bs, num_classes) =
        (xb * w.matrix(num_classes, dim).transpose()).rowwise() + b.vec().transpose();
    const auto sl = softmax_cross_entropy(logits, std::span<const int>(yb));
    const TensorD g = softmax_cross_entropy_backward(sl.probabilities, std::span<const int>(yb));
    const auto gm = g.matrix(bs, num_classes);
    gw.matrix(num_classes, dim) = gm.transpose() * xb;
    gb.vec() = gm.colwise().sum().transpose();
    sgd_step(std::span<const ParamSlot<double>>(slots), lr_schedule(it, tc), tc);
  }
  model.weights_ = w.matrix(num_classes, dim);
  model.bias_ = b.vec();
  return model;
}

std::vector<int> LinearClassifier::predict(const RowMatrix<double>& features) const {
  if (features.cols() != weights_.cols()) throw InputError("descriptor dimension does not match the model");
  const RowMatrix<double> x =
      ((features.rowwise() - mean_.transpose()).array().rowwise() * scale_.transpose().array()).matrix();
  const RowMatrix<double> scores = (x * weights_.transpose()).rowwise() + bias_.transpose();
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Index i = 0; i < scores.rows(); ++i) {
    Index arg;
    scores.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

}  // namespace mtcn
