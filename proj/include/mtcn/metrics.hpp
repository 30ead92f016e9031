#ifndef MTCN_METRICS_HPP
#define MTCN_METRICS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtcn/tensor.hpp"

namespace mtcn {

using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct EvaluationReport {
  Index num_classes = 0;
  ConfusionMatrix confusion;                        // rows: reference, cols: predicted
  std::vector<std::int64_t> class_counts;
  std::vector<std::optional<double>> per_class_recall;  // empty for classes without pixels
  double average_accuracy = 0;                      // percent, mean of per-class recalls
  double overall_accuracy = 0;                      // percent
  std::int64_t pixel_count = 0;
  std::vector<std::string> warnings;
  double seconds = 0;
};

void to_json(nlohmann::json& j, const EvaluationReport& r);
std::string confusion_csv(const EvaluationReport& r);

/// Pixels whose reference label is background (255) are skipped. Classes with
/// no reference pixel are left out of the average and reported as warnings.
EvaluationReport evaluate_predictions(std::span<const int> predictions, std::span<const int> labels, Index num_classes);

double average_accuracy(std::span<const int> predictions, std::span<const int> labels, Index num_classes);

/// Fraction of positions where the two label vectors differ.
double disagreement(std::span<const int> a, std::span<const int> b);

/// 1 - disagreement.
inline double agreement(std::span<const int> a, std::span<const int> b) { return 1.0 - disagreement(a, b); }

}  // namespace mtcn

#endif  // MTCN_METRICS_HPP
