#pragma once

#include <cstdint>
#include <vector>

#include "gensel/core.hpp"

namespace gensel {

struct AugmentConfig {
    int shuffles = 25;         // shuffle draw attempts per record
    std::uint64_t seed = 0;
};

// Order-permuted, utility-preserving copies. Each record keeps its original
// and gains up to S distinct non-identity permutations; duplicate draws are
// dropped, not retried.
std::vector<SubsetRecord> shuffle_augment(const std::vector<SubsetRecord>& records,
                                          const AugmentConfig& cfg);

} // namespace gensel
