#pragma once

#include <cstdint>
#include <vector>

#include "gensel/core.hpp"
#include "gensel/downstream.hpp"

namespace gensel {

// One DQN agent per feature; each epoch every agent picks select/deselect,
// the joint selection is scored downstream, and the shared reward trains all
// agents off a replay buffer.
struct CollectorConfig {
    int epochs = 500;
    double epsilon_start = 1.0;
    double epsilon_end = 0.1;
    int epsilon_decay_epochs = -1;   // -1: half of epochs
    std::size_t buffer_capacity = 4096;
    std::size_t minibatch = 32;
    double gamma = 0.9;              // discount
    int target_sync_interval = 10;   // epochs between online -> target copies
    double lambda_relevance = 0.1;
    double lambda_redundancy = 0.1;
    double agent_lr = 1e-3;
    int agent_hidden = 64;
    std::uint64_t seed = 0;
};

inline constexpr int kStateDim = 49;             // 7 descriptives of 7 descriptives
inline constexpr double kEmptySubsetReward = -1.0;

// Fixed-length state: the 7-number summary of each selected column's
// 7-number summary, flattened. Empty selection maps to the zero vector.
std::vector<double> state_repr(const TabularDataset& ds, const TokenSequence& selected);

// mean |corr(feature, label)| over the selected columns
double subset_relevance(const TabularDataset& ds, const TokenSequence& selected);
// mean |corr(f_i, f_j)| over selected pairs; 0 with fewer than 2 columns
double subset_redundancy(const TabularDataset& ds, const TokenSequence& selected);

double reward(double u, double relevance, double redundancy, const CollectorConfig& cfg);

struct EpisodeLogRow {
    int epoch = 0;
    std::size_t subset_size = 0;
    double utility = 0.0;   // NaN on empty-subset epochs
    double reward = 0.0;
    double epsilon = 0.0;
};

struct CollectResult {
    std::vector<SubsetRecord> records;
    std::vector<EpisodeLogRow> episode_log;
};

CollectResult collect(const TabularDataset& ds, const CollectorConfig& cfg, const UtilityFn& utility_fn);

// Control collector: subset size uniform in [1, n_features], then that many
// distinct features uniformly.
std::vector<SubsetRecord> random_collect(const TabularDataset& ds, int epochs, std::uint64_t seed,
                                         const UtilityFn& utility_fn);

} // namespace gensel
