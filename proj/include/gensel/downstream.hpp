#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gensel/core.hpp"

namespace gensel {

enum class ClassifierKind { tree_ensemble, logistic };
enum class UtilityMetric { accuracy, f1 };

struct EvalConfig {
    ClassifierKind classifier = ClassifierKind::tree_ensemble;
    int folds = 5;
    std::uint64_t seed = 0;
    UtilityMetric metric = UtilityMetric::accuracy;
    int n_trees = 100;
};

struct DegenerateLabelsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Stratified fold assignment, deterministic given the seed. Returns the fold
// index of every sample; per-fold class counts differ from an exact split by
// at most one sample.
std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, std::uint64_t seed);

// Cross-validated metrics for a feature subset. The input sequence is
// canonicalized first, so token order and duplicates do not matter.
MetricsReport evaluate_subset(const TabularDataset& ds, const TokenSequence& seq, const EvalConfig& cfg);

// The scalar fed back to the collector and the search: mean fold accuracy by
// default, mean fold F1 when cfg.metric says so.
double utility(const TabularDataset& ds, const TokenSequence& seq, const EvalConfig& cfg);

// Both of the above from one CV pass.
struct ScoredMetrics {
    double utility = 0.0;
    MetricsReport report;
};
ScoredMetrics evaluate_scored(const TabularDataset& ds, const TokenSequence& seq, const EvalConfig& cfg);

// One-way two-group F statistic per feature; constant features score 0,
// zero within-group variance with distinct group means scores +inf.
std::vector<double> ftest_scores(const TabularDataset& ds);

// Tokens of the k largest F statistics (ties broken by lower column index).
TokenSequence baseline_ftest(const TabularDataset& ds, int k);

using UtilityFn = std::function<double(const TokenSequence&)>;
using ScorerFn = std::function<ScoredMetrics(const TokenSequence&)>;

} // namespace gensel
