#include "mtcn/metrics.hpp"

#include <sstream>

#include "mtcn/dataset.hpp"

namespace mtcn {

EvaluationReport evaluate_predictions(std::span<const int> predictions, std::span<const int> labels, Index num_classes) {
  if (predictions.size() != labels.size()) throw InputError("prediction and label vectors differ in length");
  if (num_classes < 1) throw ConfigError("need at least one class");
  EvaluationReport r;
  r.num_classes = num_classes;
  r.confusion = ConfusionMatrix::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kBackground) continue;
    if (labels[i] < 0 || labels[i] >= num_classes) throw InputError("label " + std::to_string(labels[i]) + " out of range");
    if (predictions[i] < 0 || predictions[i] >= num_classes)
      throw InputError("prediction " + std::to_string(predictions[i]) + " out of range");
    ++r.confusion(labels[i], predictions[i]);
  }

  double recall_sum = 0;
  std::int64_t evaluated = 0, correct = 0;
  for (Index c = 0; c < num_classes; ++c) {
    const std::int64_t total = r.confusion.row(c).sum();
    r.class_counts.push_back(total);
    r.pixel_count += total;
    correct += r.confusion(c, c);
    if (total == 0) {
      r.per_class_recall.emplace_back();
      r.warnings.push_back("class " + std::to_string(c) + " has no labeled pixels; excluded from the average");
      continue;
    }
    const double recall = static_cast<double>(r.confusion(c, c)) / static_cast<double>(total);
    r.per_class_recall.emplace_back(recall);
    recall_sum += recall;
    ++evaluated;
  }
  if (evaluated == 0) throw InputError("no labeled pixels to evaluate");
  r.average_accuracy = recall_sum / static_cast<double>(evaluated) * 100.0;
  r.overall_accuracy = static_cast<double>(correct) / static_cast<double>(r.pixel_count) * 100.0;
  return r;
}

double average_accuracy(std::span<const int> predictions, std::span<const int> labels, Index num_classes) {
  return evaluate_predictions(predictions, labels, num_classes).average_accuracy;
}

double disagreement(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InputError("disagreement: prediction vectors differ in length");
  if (a.empty()) throw InputError("disagreement: empty prediction vectors");
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) differ += a[i] != b[i];
  return static_cast<double>(differ) / static_cast<double>(a.size());
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
  nlohmann::json recall = nlohmann::json::array();
  for (const auto& v : r.per_class_recall) recall.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  nlohmann::json confusion = nlohmann::json::array();
  for (Index i = 0; i < r.confusion.rows(); ++i) {
    nlohmann::json jr = nlohmann::json::array();
    for (Index k = 0; k < r.confusion.cols(); ++k) jr.push_back(r.confusion(i, k));
    confusion.push_back(jr);
  }
  j = {{"num_classes", r.num_classes},
       {"average_accuracy", r.average_accuracy},
       {"overall_accuracy", r.overall_accuracy},
       {"per_class_recall", recall},
       {"class_counts", r.class_counts},
       {"pixel_count", r.pixel_count},
       {"confusion", confusion},
       {"warnings", r.warnings},
       {"seconds", r.seconds}};
}

std::string confusion_csv(const EvaluationReport& r) {
  std::ostringstream os;
  os << "reference";
  for (Index k = 0; k < r.num_classes; ++k) os << ",pred_" << k;
  os << '\n';
  for (Index i = 0; i < r.num_classes; ++i) {
    os << i;
    for (Index k = 0; k < r.num_classes; ++k) os << ',' << r.confusion(i, k);
    os << '\n';
  }
  return os.str();
}

}  // namespace mtcn
