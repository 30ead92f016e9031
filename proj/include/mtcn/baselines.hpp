#ifndef MTCN_BASELINES_HPP
#define MTCN_BASELINES_HPP

#include <array>
#include <span>
#include <vector>

#include "mtcn/dataset.hpp"
#include "mtcn/tensor.hpp"

namespace mtcn {

/// Values of one pixel through time, [t, ch].
struct PixelSeries {
  RowMatrix<double> values;
  std::vector<bool> available;

  Index length() const { return values.rows(); }
};

PixelSeries pixel_series(const TemporalImageStack& stack, Index x, Index y);

/// 10% of the largest pairwise distance between available timestamps.
double default_threshold(const PixelSeries& series);

struct RecurrencePlot {
  RowMatrix<double> matrix;  // 0/1, over available timestamps only
  double eps = 0;
};

/// R(i, j) = 1 iff |s_i - s_j| <= eps. Needs at least two available timestamps.
RecurrencePlot recurrence_plot(const PixelSeries& series, double eps);

/// 256-bin LBP histogram, L1-normalized. Bit b is set when neighbor b is
/// >= the center; neighbors run clockwise from the top-left one (bit 0).
std::array<double, 256> lbp_histogram(const RowMatrix<double>& input);

/// Recurrence plot with the default threshold, then its LBP histogram.
std::array<double, 256> rp_lbp_descriptor(const PixelSeries& series);

struct LinearClassifierConfig {
  std::int64_t iterations = 3000;
  double learning_rate = 0.1;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  Index batch_size = 64;
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression over standardized descriptors.
class LinearClassifier {
 public:
  /// Samples are put into a canonical order before the seeded shuffle, so
  /// the fitted model does not depend on the order they are passed in.
  static LinearClassifier fit(const RowMatrix<double>& features, std::span<const int> labels, Index num_classes,
                              const LinearClassifierConfig& config = {});

  std::vector<int> predict(const RowMatrix<double>& features) const;

  const RowMatrix<double>& weights() const { return weights_; }
  const Vector<double>& bias() const { return bias_; }

 private:
  Vector<double> mean_;
  Vector<double> scale_;
  RowMatrix<double> weights_;  // [classes, dim]
  Vector<double> bias_;
};

/// One descriptor row per pixel.
RowMatrix<double> rp_lbp_features(const TemporalImageStack& stack, std::span<const LabeledPixel> pixels);

}  // namespace mtcn

#endif  // MTCN_BASELINES_HPP
