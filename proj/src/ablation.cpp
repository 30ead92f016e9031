#include "mtcn/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mtcn/evaluate.hpp"

namespace mtcn {

double mean_pairwise(const RowMatrix<double>& correlation, std::span<const Index> members) {
  if (members.size() < 2) return 1.0;
  double sum = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < members.size(); ++a)
    for (std::size_t b = a + 1; b < members.size(); ++b, ++pairs) sum += correlation(members[a], members[b]);
  return sum / static_cast<double>(pairs);
}

namespace {

std::uint64_t binomial(std::uint64_t n, std::uint64_t k, std::uint64_t cap) {
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > cap) return cap + 1;
  }
  return r;
}

template <typename F>
void rethrow_with(const std::string& context, F&& f) {
  try {
    f();
  } catch (const NumericError& e) {
    throw NumericError(context + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(context + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(context + ": " + e.what());
  }
}

}  // namespace

std::vector<Index> select_subset(const RowMatrix<double>& correlation, Index m, std::uint64_t max_exhaustive) {
  const Index n = correlation.rows();
  if (correlation.cols() != n) throw InputError("correlation matrix must be square");
  if (m < 1 || m > n) throw ConfigError("subset size " + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");
  std::vector<Index> best(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) best[static_cast<std::size_t>(i)] = i;
  if (m == n || m == 1) return best;

  if (binomial(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(m), max_exhaustive) <= max_exhaustive) {
    std::vector<Index> cur = best;
    double best_score = mean_pairwise(correlation, best);
    for (;;) {
      Index i = m - 1;
      while (i >= 0 && cur[static_cast<std::size_t>(i)] == n - m + i) --i;
      if (i < 0) break;
      ++cur[static_cast<std::size_t>(i)];
      for (Index k = i + 1; k < m; ++k) cur[static_cast<std::size_t>(k)] = cur[static_cast<std::size_t>(k - 1)] + 1;
      const double s = mean_pairwise(correlation, cur);
      if (s < best_score) {
        best_score = s;
        best = cur;
      }
    }
    return best;
  }

  std::vector<Index> chosen{0, 1};
  for (Index a = 0; a < n; ++a)
    for (Index b = a + 1; b < n; ++b)
      if (correlation(a, b) < correlation(chosen[0], chosen[1])) chosen = {a, b};
  while (static_cast<Index>(chosen.size()) < m) {
    Index pick = -1;
    double pick_score = 0;
    for (Index c = 0; c < n; ++c) {
      if (std::find(chosen.begin(), chosen.end(), c) != chosen.end()) continue;
      auto trial = chosen;
      trial.push_back(c);
      const double s = mean_pairwise(correlation, trial);
      if (pick < 0 || s < pick_score) {
        pick = c;
        pick_score = s;
      }
    }
    chosen.push_back(pick);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

AblationResult ablate(const Dataset& dataset, const SplitAssignment& split, const AblationConfig& config) {
  const auto& stack = dataset.stack;
  const auto log = [&](const std::string& s) {
    if (config.log) config.log(s);
  };
  AblationResult result;
  for (Index j = 0; j < stack.size(); ++j)
    if (stack.timestamps[static_cast<std::size_t>(j)].available) result.available.push_back(j);
  const auto n = static_cast<Index>(result.available.size());
  if (n < 2) throw ConfigError("ablation needs at least two available timestamps");
  std::vector<Index> sizes = config.sizes;
  if (sizes.empty())
    for (Index m = 2; m <= n; ++m) sizes.push_back(m);
  for (Index m : sizes)
    if (m < 2 || m > n)
      throw ConfigError("subset size " + std::to_string(m) + " outside [2, " + std::to_string(n) + "]");

  SplitOptions vopt;
  vopt.min_test_per_class = 1;
  vopt.restrict_to = &split.train;
  const SplitAssignment vsplit =
      split_segments(dataset.labels, 1.0 - config.validation_fraction, config.validation_seed, vopt);
  const auto fit_pixels = annotated_pixels(dataset.labels, &vsplit.train);
  const auto val_pixels = annotated_pixels(dataset.labels, &vsplit.test);
  const auto train_pixels = annotated_pixels(dataset.labels, &split.train);
  const auto test_pixels = annotated_pixels(dataset.labels, &split.test);
  std::vector<int> val_labels;
  for (const auto& p : val_pixels) val_labels.push_back(p.label);

  for (Index j : result.available) {
    rethrow_with("timestamp " + std::to_string(j), [&] {
      const Index keep[] = {j};
      const TemporalImageStack single = stack.subset(keep);
      NetworkSpec spec = config.spec;
      spec.timestamps = 1;
      const TrainResult tr = train(spec, TrainingSet{&single, fit_pixels}, config.training);
      NetworkParams<float> params = tr.checkpoint.params;
      const auto mask = single.availability();
      SingleTimestampResult s;
      s.timestamp = j;
      s.validation_predictions = predict_labels(tr.checkpoint.spec, params, single, mask, val_pixels);
      s.validation_accuracy = average_accuracy(s.validation_predictions, val_labels, spec.num_classes);
      s.test_accuracy = evaluate_pixels(tr.checkpoint.spec, params, single, mask, test_pixels).average_accuracy;
      log("timestamp " + std::to_string(j) + ": validation AA " + std::to_string(s.validation_accuracy) +
          ", test AA " + std::to_string(s.test_accuracy));
      result.singles.push_back(std::move(s));
    });
  }

  result.correlation = RowMatrix<double>::Ones(n, n);
  for (Index a = 0; a < n; ++a)
    for (Index b = a + 1; b < n; ++b)
      result.correlation(a, b) = result.correlation(b, a) =
          agreement(result.singles[static_cast<std::size_t>(a)].validation_predictions,
                    result.singles[static_cast<std::size_t>(b)].validation_predictions);

  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return result.singles[static_cast<std::size_t>(a)].validation_accuracy >
           result.singles[static_cast<std::size_t>(b)].validation_accuracy;
  });
  for (Index i : order) result.single_ranking.push_back(result.available[static_cast<std::size_t>(i)]);

  for (Index m : sizes) {
    SubsetResult sr;
    sr.size = m;
    const auto members = select_subset(result.correlation, m, config.max_exhaustive);
    sr.mean_correlation = mean_pairwise(result.correlation, members);
    for (Index i : members) sr.timestamps.push_back(result.available[static_cast<std::size_t>(i)]);
    if (config.retrain_subsets) {
      rethrow_with("subset of size " + std::to_string(m), [&] {
        const TemporalImageStack sub = stack.subset(sr.timestamps);
        NetworkSpec spec = config.spec;
        spec.timestamps = m;
        const TrainResult tr = train(spec, TrainingSet{&sub, train_pixels}, config.training);
        NetworkParams<float> params = tr.checkpoint.params;
        sr.test_report = evaluate_pixels(tr.checkpoint.spec, params, sub, sub.availability(), test_pixels);
        log("subset size " + std::to_string(m) + ": test AA " + std::to_string(sr.test_report->average_accuracy));
      });
    }
    result.subsets.push_back(std::move(sr));
  }
  return result;
}

void to_json(nlohmann::json& j, const AblationResult& r) {
  j = nlohmann::json::object();
  j["available"] = r.available;
  auto singles = nlohmann::json::array();
  for (const auto& s : r.singles)
    singles.push_back({{"timestamp", s.timestamp},
                       {"validation_accuracy", s.validation_accuracy},
                       {"test_accuracy", s.test_accuracy}});
  j["singles"] = singles;
  auto corr = nlohmann::json::array();
  for (Index a = 0; a < r.correlation.rows(); ++a) {
    std::vector<double> row(r.correlation.row(a).data(), r.correlation.row(a).data() + r.correlation.cols());
    corr.push_back(row);
  }
  j["correlation"] = corr;
  j["single_ranking"] = r.single_ranking;
  auto subsets = nlohmann::json::array();
  for (const auto& s : r.subsets) {
    nlohmann::json e{{"size", s.size}, {"timestamps", s.timestamps}, {"mean_correlation", s.mean_correlation}};
    if (s.test_report) e["test_report"] = *s.test_report;
    subsets.push_back(e);
  }
  j["subsets"] = subsets;
}

std::string ranking_table(const AblationResult& r) {
  std::ostringstream os;
  os << "size\ttimestamps\tmean_correlation\ttest_average_accuracy\n";
  char buf[64];
  for (const auto& s : r.subsets) {
    os << s.size << '\t';
    for (std::size_t i = 0; i < s.timestamps.size(); ++i) os << (i ? "," : "") << s.timestamps[i];
    std::snprintf(buf, sizeof buf, "\t%.6f\t", s.mean_correlation);
    os << buf;
    if (s.test_report) {
      std::snprintf(buf, sizeof buf, "%.2f", s.test_report->average_accuracy);
      os << buf;
    } else {
      os << '-';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mtcn
