#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gensel/downstream.hpp"
#include "gensel/rng.hpp"
#include "gensel/stats.hpp"

using namespace gensel;

namespace {

// feature 0 equals the label, rest is noise
TabularDataset planted_dataset(int n_samples = 40, int n_noise = 4, std::uint64_t seed = 3) {
    TabularDataset ds;
    Rng rng(seed);
    ds.features = Mat(static_cast<std::size_t>(n_samples), static_cast<std::size_t>(n_noise + 1));
    ds.labels.resize(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        const int y = i % 2;
        ds.labels[static_cast<std::size_t>(i)] = y;
        ds.features.at(static_cast<std::size_t>(i), 0) = static_cast<double>(y);
        for (int j = 1; j <= n_noise; ++j) {
            ds.features.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = rng.normal();
        }
    }
    for (int j = 0; j <= n_noise; ++j) ds.feature_names.push_back("f" + std::to_string(j));
    return ds;
}

TabularDataset noise_dataset(int n_samples, int n_features, std::uint64_t seed) {
    TabularDataset ds;
    Rng rng(seed);
    ds.features = Mat(static_cast<std::size_t>(n_samples), static_cast<std::size_t>(n_features));
    for (auto& v : ds.features.data) v = rng.normal();
    ds.labels.resize(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) ds.labels[static_cast<std::size_t>(i)] = i % 2;
    for (int j = 0; j < n_features; ++j) ds.feature_names.push_back("f" + std::to_string(j));
    return ds;
}

} // namespace

TEST_CASE("stratified folds balance both classes within one sample") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 20 + static_cast<int>(rng.below(60));
        std::vector<int> labels(static_cast<std::size_t>(n));
        int ones = 0;
        for (auto& y : labels) {
            y = rng.bernoulli(0.4) ? 1 : 0;
            ones += y;
        }
        if (ones < 5 || n - ones < 5) continue;
        const int folds = 5;
        const auto fold_of = stratified_folds(labels, folds, trial);

        std::vector<int> count1(folds, 0), count0(folds, 0);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            (labels[i] == 1 ? count1 : count0)[static_cast<std::size_t>(fold_of[i])]++;
        }
        for (int f = 0; f < folds; ++f) {
            REQUIRE(std::abs(count1[f] - ones / folds) <= 1);
            REQUIRE(std::abs(count0[f] - (n - ones) / folds) <= 1);
        }
        REQUIRE(stratified_folds(labels, folds, trial) == fold_of);
    }
}

TEST_CASE("perfectly separable feature gives F1 = 1 and AUC = 1") {
    const TabularDataset ds = planted_dataset();
    EvalConfig cfg;
    const MetricsReport report = evaluate_subset(ds, {3}, cfg);
    REQUIRE(report.f1 == doctest::Approx(1.0));
    REQUIRE(report.auc == doctest::Approx(1.0));
    REQUIRE(report.precision == doctest::Approx(1.0));
    REQUIRE(report.recall == doctest::Approx(1.0));
    REQUIRE(utility(ds, {3}, cfg) == doctest::Approx(1.0));

    EvalConfig f1_cfg = cfg;
    f1_cfg.metric = UtilityMetric::f1;
    REQUIRE(utility(ds, {3}, f1_cfg) == doctest::Approx(1.0));

    EvalConfig log_cfg = cfg;
    log_cfg.classifier = ClassifierKind::logistic;
    REQUIRE(evaluate_subset(ds, {3}, log_cfg).f1 == doctest::Approx(1.0));
}

TEST_CASE("degenerate labels are rejected") {
    TabularDataset ds = planted_dataset();
    std::fill(ds.labels.begin(), ds.labels.end(), 1);
    REQUIRE_THROWS_AS(evaluate_subset(ds, {3}, EvalConfig{}), DegenerateLabelsError);
}

TEST_CASE("folds exceeding the smaller class are a config error") {
    const TabularDataset ds = planted_dataset(12);
    EvalConfig cfg;
    cfg.folds = 7;
    REQUIRE_THROWS_AS(evaluate_subset(ds, {3}, cfg), ConfigError);
}

TEST_CASE("aggregate metrics are the unweighted fold means") {
    const TabularDataset ds = noise_dataset(40, 6, 11);
    const MetricsReport r = evaluate_subset(ds, {3, 5, 7}, EvalConfig{});
    REQUIRE(r.per_fold.size() == 5);
    double p = 0, rc = 0, f1 = 0, auc = 0;
    for (const auto& f : r.per_fold) {
        p += f.precision;
        rc += f.recall;
        f1 += f.f1;
        auc += f.auc;
    }
    REQUIRE(std::fabs(r.precision - p / 5) < 1e-12);
    REQUIRE(std::fabs(r.recall - rc / 5) < 1e-12);
    REQUIRE(std::fabs(r.f1 - f1 / 5) < 1e-12);
    REQUIRE(std::fabs(r.auc - auc / 5) < 1e-12);
}

TEST_CASE("evaluation is deterministic and canonicalization-invariant") {
    const TabularDataset ds = noise_dataset(36, 8, 13);
    EvalConfig cfg;
    cfg.seed = 21;
    const MetricsReport a = evaluate_subset(ds, {4, 6, 9}, cfg);
    const MetricsReport b = evaluate_subset(ds, {4, 6, 9}, cfg);
    REQUIRE(a.f1 == b.f1);
    REQUIRE(a.auc == b.auc);

    // raw input with duplicates, disorder, and a trailing EOS segment
    const MetricsReport c = evaluate_subset(ds, {9, 4, 6, 4, Vocabulary::EOS, 5}, cfg);
    REQUIRE(a.f1 == c.f1);
    REQUIRE(a.precision == c.precision);
    REQUIRE(a.auc == c.auc);
}

TEST_CASE("label-independent features score near chance") {
    const TabularDataset ds = noise_dataset(100, 10, 17);
    const double u = utility(ds, {3, 5, 8}, EvalConfig{});
    REQUIRE(u > 0.3);
    REQUIRE(u < 0.7);
}

TEST_CASE("constant features make AUC degenerate, reported as 0.5") {
    TabularDataset ds = noise_dataset(30, 2, 19);
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        ds.features.at(i, 0) = 1.0;
        ds.features.at(i, 1) = -2.0;
    }
    const MetricsReport r = evaluate_subset(ds, {3, 4}, EvalConfig{});
    REQUIRE(r.auc_degenerate);
    REQUIRE(r.auc == doctest::Approx(0.5));
}

TEST_CASE("F statistics match an independent ANOVA computation") {
    const TabularDataset ds = noise_dataset(50, 12, 23);
    const auto scores = ftest_scores(ds);

    for (std::size_t j = 0; j < ds.n_features(); ++j) {
        // textbook one-way ANOVA with k = 2 groups
        std::vector<double> g0, g1;
        for (std::size_t i = 0; i < ds.n_samples(); ++i) {
            (ds.labels[i] == 1 ? g1 : g0).push_back(ds.features.at(i, j));
        }
        const double m0 = stats::mean(g0.data(), g0.size());
        const double m1 = stats::mean(g1.data(), g1.size());
        const double n = static_cast<double>(ds.n_samples());
        const double grand = (m0 * g0.size() + m1 * g1.size()) / n;
        double ssb = g0.size() * (m0 - grand) * (m0 - grand) + g1.size() * (m1 - grand) * (m1 - grand);
        double ssw = 0;
        for (double x : g0) ssw += (x - m0) * (x - m0);
        for (double x : g1) ssw += (x - m1) * (x - m1);
        const double expected = (ssb / 1.0) / (ssw / (n - 2.0));
        REQUIRE(scores[j] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("F-test selects the label-equal feature and zeroes constants") {
    TabularDataset ds = planted_dataset(30, 3, 29);
    for (std::size_t i = 0; i < ds.n_samples(); ++i) ds.features.at(i, 2) = 7.0;   // constant

    const auto scores = ftest_scores(ds);
    REQUIRE(std::isinf(scores[0]));   // zero within-group variance, distinct means
    REQUIRE(scores[2] == 0.0);

    REQUIRE(baseline_ftest(ds, 1) == TokenSequence{3});
    const TokenSequence top2 = baseline_ftest(ds, 2);
    REQUIRE(top2.size() == 2);
    REQUIRE(is_canonical(top2, ds.vocabulary()));
    REQUIRE_THROWS_AS(baseline_ftest(ds, 0), ConfigError);
}

TEST_CASE("evaluate_scored returns the utility consistent with the report") {
    const TabularDataset ds = planted_dataset();
    EvalConfig cfg;
    cfg.metric = UtilityMetric::f1;
    const ScoredMetrics s = evaluate_scored(ds, {3}, cfg);
    REQUIRE(s.utility == doctest::Approx(s.report.f1));
}
