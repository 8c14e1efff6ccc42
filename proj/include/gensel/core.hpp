#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gensel/tensor.hpp"

namespace gensel {

using TokenId = std::int32_t;

// Feature subsets as token sequences. Canonical form: strictly increasing
// feature tokens, no specials, no duplicates.
using TokenSequence = std::vector<TokenId>;

struct Vocabulary {
    int n_features = 0;

    static constexpr TokenId PAD = 0;
    static constexpr TokenId SOS = 1;
    static constexpr TokenId EOS = 2;
    static constexpr TokenId FIRST_FEATURE = 3;

    int size() const { return n_features + 3; }
    bool is_special(TokenId t) const { return t >= 0 && t < FIRST_FEATURE; }
    bool is_feature(TokenId t) const { return t >= FIRST_FEATURE && t < size(); }
    TokenId token_for_column(int col) const { return static_cast<TokenId>(col + FIRST_FEATURE); }
    int column_for_token(TokenId t) const { return static_cast<int>(t - FIRST_FEATURE); }
};

struct TabularDataset {
    Mat features;                            // n_samples x n_features
    std::vector<int> labels;                 // values in {0, 1}
    std::vector<std::string> feature_names;

    std::size_t n_samples() const { return features.rows; }
    std::size_t n_features() const { return features.cols; }
    Vocabulary vocabulary() const { return Vocabulary{static_cast<int>(n_features())}; }
};

struct SubsetRecord {
    TokenSequence sequence;   // feature tokens; permutations allowed, non-empty
    double utility = 0.0;     // in [0, 1]
};

struct FoldMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
};

struct MetricsReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
    std::vector<FoldMetrics> per_fold;
    bool auc_degenerate = false;   // constant scores in some fold, AUC reported as 0.5
};

// ---- errors ----

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptySubsetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TokenOutOfRangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- operations ----

// Truncate at the first EOS, drop specials, dedupe, sort ascending.
TokenSequence canonicalize(const TokenSequence& raw);

bool is_canonical(const TokenSequence& seq, const Vocabulary& vocab);

// Keep only the columns named by a canonical, non-empty sequence.
TabularDataset apply_subset(const TabularDataset& ds, const TokenSequence& seq);

// CSV with a header row; the column named "label" carries 0/1, all others are
// numeric features.
TabularDataset load_dataset(const std::string& path);
void save_dataset(const TabularDataset& ds, const std::string& path);

// JSONL, one {"tokens": [...], "utility": x} object per line. Utilities are
// written with 6 decimal places.
void save_records(const std::vector<SubsetRecord>& records, const std::string& path);
std::vector<SubsetRecord> load_records(const std::string& path);

std::string format_utility(double utility);   // the on-disk 6-decimal form

} // namespace gensel
