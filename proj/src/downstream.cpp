#include "gensel/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "gensel/rng.hpp"
#include "gensel/stats.hpp"

namespace gensel {

namespace {

// ---- decision tree (CART, gini) ----

struct TreeNode {
    int feature = -1;          // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    int vote = 0;              // leaf class
};

class DecisionTree {
public:
    void fit(const Mat& x, const std::vector<int>& y, const std::vector<std::size_t>& sample_idx,
             std::size_t mtry, Rng& rng) {
        nodes_.clear();
        build(x, y, sample_idx, mtry, rng);
    }

    int predict(const double* row) const {
        int node = 0;
        while (nodes_[node].feature >= 0) {
            node = row[nodes_[node].feature] <= nodes_[node].threshold ? nodes_[node].left
                                                                       : nodes_[node].right;
        }
        return nodes_[node].vote;
    }

private:
    std::vector<TreeNode> nodes_;

    static double gini(std::size_t c0, std::size_t c1) {
        const double n = static_cast<double>(c0 + c1);
        if (n == 0.0) return 0.0;
        const double p0 = static_cast<double>(c0) / n;
        const double p1 = static_cast<double>(c1) / n;
        return 1.0 - p0 * p0 - p1 * p1;
    }

    int build(const Mat& x, const std::vector<int>& y, const std::vector<std::size_t>& idx,
              std::size_t mtry, Rng& rng) {
        std::size_t c1 = 0;
        for (std::size_t i : idx) c1 += static_cast<std::size_t>(y[i]);
        const std::size_t c0 = idx.size() - c1;

        const int node_id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        if (c0 == 0 || c1 == 0 || idx.size() < 2) {
            nodes_[node_id].vote = c1 > c0 ? 1 : 0;
            return node_id;
        }

        const double parent_impurity = gini(c0, c1) * static_cast<double>(idx.size());
        int best_feature = -1;
        double best_threshold = 0.0;
        double best_impurity = parent_impurity;

        const auto features = rng.sample_without_replacement(x.cols, mtry);
        std::vector<std::pair<double, int>> vals(idx.size());
        for (std::size_t f : features) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                vals[i] = {x.at(idx[i], f), y[idx[i]]};
            }
            std::sort(vals.begin(), vals.end());
            std::size_t left0 = 0, left1 = 0;
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                left1 += static_cast<std::size_t>(vals[i].second);
                left0 += static_cast<std::size_t>(1 - vals[i].second);
                if (vals[i].first == vals[i + 1].first) continue;
                const std::size_t right0 = c0 - left0, right1 = c1 - left1;
                const double impurity = gini(left0, left1) * static_cast<double>(left0 + left1) +
                                        gini(right0, right1) * static_cast<double>(right0 + right1);
                if (impurity < best_impurity - 1e-12) {
                    best_impurity = impurity;
                    best_feature = static_cast<int>(f);
                    best_threshold = 0.5 * (vals[i].first + vals[i + 1].first);
                }
            }
        }

        if (best_feature < 0) {
            nodes_[node_id].vote = c1 > c0 ? 1 : 0;
            return node_id;
        }

        std::vector<std::size_t> left_idx, right_idx;
        for (std::size_t i : idx) {
            (x.at(i, static_cast<std::size_t>(best_feature)) <= best_threshold ? left_idx : right_idx)
                .push_back(i);
        }
        nodes_[node_id].feature = best_feature;
        nodes_[node_id].threshold = best_threshold;
        const int left = build(x, y, left_idx, mtry, rng);
        const int right = build(x, y, right_idx, mtry, rng);
        nodes_[node_id].left = left;
        nodes_[node_id].right = right;
        return node_id;
    }
};

// score = fraction of trees voting the case class
class RandomForest {
public:
    void fit(const Mat& x, const std::vector<int>& y, int n_trees, std::uint64_t seed) {
        trees_.assign(static_cast<std::size_t>(n_trees), {});
        const std::size_t mtry = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::sqrt(static_cast<double>(x.cols))));
        for (std::size_t t = 0; t < trees_.size(); ++t) {
            Rng rng(derive_seed(seed, t));
            std::vector<std::size_t> bootstrap(x.rows);
            for (auto& i : bootstrap) i = static_cast<std::size_t>(rng.below(x.rows));
            trees_[t].fit(x, y, bootstrap, mtry, rng);
        }
    }

    double score(const double* row) const {
        std::size_t votes = 0;
        for (const auto& tree : trees_) votes += static_cast<std::size_t>(tree.predict(row));
        return static_cast<double>(votes) / static_cast<double>(trees_.size());
    }

private:
    std::vector<DecisionTree> trees_;
};

// ---- logistic regression (per-fold standardization, full-batch Adam) ----

class Logistic {
public:
    void fit(const Mat& x, const std::vector<int>& y) {
        const std::size_t n = x.rows, p = x.cols;
        mu_.assign(p, 0.0);
        inv_sd_.assign(p, 1.0);
        for (std::size_t j = 0; j < p; ++j) {
            std::vector<double> col(n);
            for (std::size_t i = 0; i < n; ++i) col[i] = x.at(i, j);
            mu_[j] = stats::mean(col.data(), n);
            const double sd = stats::stddev(col.data(), n);
            inv_sd_[j] = sd > 0.0 ? 1.0 / sd : 0.0;
        }

        w_.assign(p, 0.0);
        b_ = 0.0;
        std::vector<double> mw(p, 0.0), vw(p, 0.0), g(p, 0.0);
        double mb = 0.0, vb = 0.0;
        const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, l2 = 1e-4;
        for (int step = 1; step <= 300; ++step) {
            std::fill(g.begin(), g.end(), 0.0);
            double gb = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double z = b_;
                for (std::size_t j = 0; j < p; ++j) z += w_[j] * (x.at(i, j) - mu_[j]) * inv_sd_[j];
                const double err = 1.0 / (1.0 + std::exp(-z)) - static_cast<double>(y[i]);
                for (std::size_t j = 0; j < p; ++j) g[j] += err * (x.at(i, j) - mu_[j]) * inv_sd_[j];
                gb += err;
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            const double c1 = 1.0 / (1.0 - std::pow(b1, step));
            const double c2 = 1.0 / (1.0 - std::pow(b2, step));
            for (std::size_t j = 0; j < p; ++j) {
                const double gj = g[j] * inv_n + l2 * w_[j];
                mw[j] = b1 * mw[j] + (1.0 - b1) * gj;
                vw[j] = b2 * vw[j] + (1.0 - b2) * gj * gj;
                w_[j] -= lr * (mw[j] * c1) / (std::sqrt(vw[j] * c2) + eps);
            }
            const double gbn = gb * inv_n;
            mb = b1 * mb + (1.0 - b1) * gbn;
            vb = b2 * vb + (1.0 - b2) * gbn * gbn;
            b_ -= lr * (mb * c1) / (std::sqrt(vb * c2) + eps);
        }
    }

    double score(const double* row) const {
        double z = b_;
        for (std::size_t j = 0; j < w_.size(); ++j) z += w_[j] * (row[j] - mu_[j]) * inv_sd_[j];
        return 1.0 / (1.0 + std::exp(-z));
    }

private:
    std::vector<double> mu_, inv_sd_, w_;
    double b_ = 0.0;
};

// AUC by the rank statistic with average ranks for ties; nullopt-style flag
// when all scores coincide.
double rank_auc(const std::vector<double>& scores, const std::vector<int>& labels, bool& degenerate) {
    const std::size_t n = scores.size();
    if (*std::min_element(scores.begin(), scores.end()) ==
        *std::max_element(scores.begin(), scores.end())) {
        degenerate = true;
        return 0.5;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
        i = j + 1;
    }
    double rank_sum = 0.0;
    std::size_t n1 = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (labels[t] == 1) {
            rank_sum += rank[t];
            ++n1;
        }
    }
    const std::size_t n0 = n - n1;
    return (rank_sum - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1)) /
           (static_cast<double>(n1) * static_cast<double>(n0));
}

struct FoldOutcome {
    FoldMetrics metrics;
    double accuracy = 0.0;
    bool auc_degenerate = false;
};

FoldOutcome score_fold(const std::vector<double>& scores, const std::vector<int>& truth) {
    std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int pred = scores[i] >= 0.5 ? 1 : 0;
        if (pred == truth[i]) ++correct;
        if (pred == 1 && truth[i] == 1) ++tp;
        if (pred == 1 && truth[i] == 0) ++fp;
        if (pred == 0 && truth[i] == 1) ++fn;
    }
    FoldOutcome out;
    out.metrics.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    out.metrics.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    out.metrics.f1 = out.metrics.precision + out.metrics.recall > 0.0
                         ? 2.0 * out.metrics.precision * out.metrics.recall /
                               (out.metrics.precision + out.metrics.recall)
                         : 0.0;
    out.metrics.auc = rank_auc(scores, truth, out.auc_degenerate);
    out.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
    return out;
}

struct FullEval {
    MetricsReport report;
    double mean_accuracy = 0.0;
    double mean_f1 = 0.0;
};

FullEval cv_eval(const TabularDataset& ds, const TokenSequence& raw_seq, const EvalConfig& cfg) {
    const TokenSequence seq = canonicalize(raw_seq);
    if (seq.empty()) throw EmptySubsetError("evaluate_subset: empty subset");
    const TabularDataset sub = apply_subset(ds, seq);

    const auto ones = static_cast<std::size_t>(std::count(sub.labels.begin(), sub.labels.end(), 1));
    const std::size_t zeros = sub.labels.size() - ones;
    if (ones == 0 || zeros == 0) throw DegenerateLabelsError("evaluate_subset: single-class labels");
    if (cfg.folds < 2) throw ConfigError("eval: folds must be >= 2");
    if (static_cast<std::size_t>(cfg.folds) > std::min(ones, zeros)) {
        throw ConfigError("eval: folds exceed the smaller class size");
    }

    const std::vector<int> fold_of = stratified_folds(sub.labels, cfg.folds, cfg.seed);

    FullEval out;
    for (int f = 0; f < cfg.folds; ++f) {
        std::vector<std::size_t> train_idx, test_idx;
        for (std::size_t i = 0; i < sub.labels.size(); ++i) {
            (fold_of[i] == f ? test_idx : train_idx).push_back(i);
        }

        Mat train_x(train_idx.size(), sub.n_features());
        std::vector<int> train_y(train_idx.size());
        for (std::size_t i = 0; i < train_idx.size(); ++i) {
            std::copy_n(sub.features.row(train_idx[i]), sub.n_features(), train_x.row(i));
            train_y[i] = sub.labels[train_idx[i]];
        }

        std::vector<double> scores(test_idx.size());
        std::vector<int> truth(test_idx.size());
        if (cfg.classifier == ClassifierKind::tree_ensemble) {
            RandomForest forest;
            forest.fit(train_x, train_y, cfg.n_trees, derive_seed(cfg.seed, 101 + static_cast<std::uint64_t>(f)));
            for (std::size_t i = 0; i < test_idx.size(); ++i) {
                scores[i] = forest.score(sub.features.row(test_idx[i]));
                truth[i] = sub.labels[test_idx[i]];
            }
        } else {
            Logistic model;
            model.fit(train_x, train_y);
            for (std::size_t i = 0; i < test_idx.size(); ++i) {
                scores[i] = model.score(sub.features.row(test_idx[i]));
                truth[i] = sub.labels[test_idx[i]];
            }
        }

        const FoldOutcome fold = score_fold(scores, truth);
        out.report.per_fold.push_back(fold.metrics);
        out.report.auc_degenerate = out.report.auc_degenerate || fold.auc_degenerate;
        out.mean_accuracy += fold.accuracy;
        out.mean_f1 += fold.metrics.f1;
    }

    const double inv = 1.0 / static_cast<double>(cfg.folds);
    out.mean_accuracy *= inv;
    out.mean_f1 *= inv;
    for (const auto& fm : out.report.per_fold) {
        out.report.precision += fm.precision;
        out.report.recall += fm.recall;
        out.report.f1 += fm.f1;
        out.report.auc += fm.auc;
    }
    out.report.precision *= inv;
    out.report.recall *= inv;
    out.report.f1 *= inv;
    out.report.auc *= inv;
    return out;
}

} // namespace

std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, std::uint64_t seed) {
    std::vector<int> fold_of(labels.size(), -1);
    Rng rng(derive_seed(seed, 7));
    for (int cls = 0; cls <= 1; ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == cls) idx.push_back(i);
        }
        rng.shuffle(idx);
        const std::size_t base = idx.size() / static_cast<std::size_t>(folds);
        const std::size_t extra = idx.size() % static_cast<std::size_t>(folds);
        std::size_t pos = 0;
        for (int f = 0; f < folds; ++f) {
            const std::size_t take = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
            for (std::size_t t = 0; t < take; ++t) fold_of[idx[pos++]] = f;
        }
    }
    return fold_of;
}

MetricsReport evaluate_subset(const TabularDataset& ds, const TokenSequence& seq, const EvalConfig& cfg) {
    return cv_eval(ds, seq, cfg).report;
}

double utility(const TabularDataset& ds, const TokenSequence& seq, const EvalConfig& cfg) {
    const FullEval ev = cv_eval(ds, seq, cfg);
    return cfg.metric == UtilityMetric::accuracy ? ev.mean_accuracy : ev.mean_f1;
}

ScoredMetrics evaluate_scored(const TabularDataset& ds, const TokenSequence& seq, const EvalConfig& cfg) {
    const FullEval ev = cv_eval(ds, seq, cfg);
    return {cfg.metric == UtilityMetric::accuracy ? ev.mean_accuracy : ev.mean_f1, ev.report};
}

std::vector<double> ftest_scores(const TabularDataset& ds) {
    const std::size_t n = ds.n_samples();
    std::vector<double> scores(ds.n_features(), 0.0);
    std::vector<std::size_t> g0, g1;
    for (std::size_t i = 0; i < n; ++i) (ds.labels[i] == 1 ? g1 : g0).push_back(i);
    if (g0.empty() || g1.empty()) throw DegenerateLabelsError("ftest: single-class labels");

    for (std::size_t j = 0; j < ds.n_features(); ++j) {
        double m0 = 0.0, m1 = 0.0;
        for (std::size_t i : g0) m0 += ds.features.at(i, j);
        for (std::size_t i : g1) m1 += ds.features.at(i, j);
        m0 /= static_cast<double>(g0.size());
        m1 /= static_cast<double>(g1.size());
        const double m = (m0 * static_cast<double>(g0.size()) + m1 * static_cast<double>(g1.size())) /
                         static_cast<double>(n);
        double ssw = 0.0;
        for (std::size_t i : g0) ssw += (ds.features.at(i, j) - m0) * (ds.features.at(i, j) - m0);
        for (std::size_t i : g1) ssw += (ds.features.at(i, j) - m1) * (ds.features.at(i, j) - m1);
        const double ssb = static_cast<double>(g0.size()) * (m0 - m) * (m0 - m) +
                           static_cast<double>(g1.size()) * (m1 - m) * (m1 - m);
        if (ssw == 0.0) {
            scores[j] = ssb == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        } else {
            scores[j] = ssb / (ssw / static_cast<double>(n - 2));
        }
    }
    return scores;
}

TokenSequence baseline_ftest(const TabularDataset& ds, int k) {
    if (k < 1 || static_cast<std::size_t>(k) > ds.n_features()) {
        throw ConfigError("baseline_ftest: k must be in [1, n_features]");
    }
    const std::vector<double> scores = ftest_scores(ds);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const Vocabulary vocab = ds.vocabulary();
    TokenSequence seq;
    for (int i = 0; i < k; ++i) seq.push_back(vocab.token_for_column(static_cast<int>(order[i])));
    std::sort(seq.begin(), seq.end());
    return seq;
}

} // namespace gensel
