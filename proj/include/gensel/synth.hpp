#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "gensel/core.hpp"

namespace gensel {

// Synthetic high-dimensional low-sample-size generator with planted
// informative features and collinear near-copies.
struct SynthConfig {
    int n_features = 200;
    int n_samples = 100;
    int n_informative = 10;
    int collinear_copies = 3;      // noisy copies added per informative feature
    double noise_sigma = 0.1;      // corruption applied to each copy
    double flip_rate = 0.05;       // label noise
    std::uint64_t seed = 0;
};

struct SynthResult {
    TabularDataset dataset;
    std::set<int> informative;                       // planted column indices
    std::vector<std::pair<int, std::vector<int>>> copies;  // informative column -> its copy columns
};

SynthResult synth_generate(const SynthConfig& cfg);

// Dataset CSV plus a sidecar JSON listing the planted indices.
void synth_write(const SynthResult& result, const std::string& csv_path, const std::string& sidecar_path);

} // namespace gensel
