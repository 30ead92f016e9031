#ifndef MTCN_ABLATION_HPP
#define MTCN_ABLATION_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtcn/dataset.hpp"
#include "mtcn/metrics.hpp"
#include "mtcn/trainer.hpp"

namespace mtcn {

struct AblationConfig {
  NetworkSpec spec;          // architecture template; timestamps is set per model
  TrainingConfig training;   // shared by every model, including the seed
  double validation_fraction = 0.1;
  std::uint64_t validation_seed = 0;
  std::vector<Index> sizes;  // subset sizes; empty means 2..available
  bool retrain_subsets = true;
  std::uint64_t max_exhaustive = 10000;
  std::function<void(const std::string&)> log;
};

struct SingleTimestampResult {
  Index timestamp = 0;
  double validation_accuracy = 0;  // average accuracy, percent
  double test_accuracy = 0;
  std::vector<int> validation_predictions;
};

struct SubsetResult {
  Index size = 0;
  std::vector<Index> timestamps;
  double mean_correlation = 0;
  std::optional<EvaluationReport> test_report;
};

struct AblationResult {
  std::vector<Index> available;
  std::vector<SingleTimestampResult> singles;  // in timestamp order
  RowMatrix<double> correlation;               // 1 - disagreement, over `available`
  std::vector<Index> single_ranking;           // timestamps, best validation accuracy first
  std::vector<SubsetResult> subsets;
};

void to_json(nlohmann::json& j, const AblationResult& r);

/// Text table: size, timestamps, mean correlation, test average accuracy.
std::string ranking_table(const AblationResult& r);

/// Mean pairwise entry of `correlation` over `members` (indices into it).
double mean_pairwise(const RowMatrix<double>& correlation, std::span<const Index> members);

/// Indices of `m` rows minimizing mean pairwise correlation. Exhaustive
/// search (lexicographically first on ties) when C(n, m) <= max_exhaustive,
/// otherwise greedy growth from the least correlated pair.
std::vector<Index> select_subset(const RowMatrix<double>& correlation, Index m, std::uint64_t max_exhaustive = 10000);

/// Per-timestamp models, their correlations on a validation slice of the
/// training segments, and multi-temporal retraining on the selected subsets.
AblationResult ablate(const Dataset& dataset, const SplitAssignment& split, const AblationConfig& config);

}  // namespace mtcn

#endif  // MTCN_ABLATION_HPP
