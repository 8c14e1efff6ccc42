#include "gensel/augment.hpp"

#include <set>

#include "gensel/rng.hpp"

namespace gensel {

std::vector<SubsetRecord> shuffle_augment(const std::vector<SubsetRecord>& records,
                                          const AugmentConfig& cfg) {
    if (cfg.shuffles < 0) throw ConfigError("augment: shuffles must be >= 0");

    std::vector<SubsetRecord> out;
    out.reserve(records.size() * static_cast<std::size_t>(cfg.shuffles + 1));
    for (std::size_t r = 0; r < records.size(); ++r) {
        const SubsetRecord& rec = records[r];
        out.push_back(rec);
        if (rec.sequence.size() < 2) continue;

        Rng rng(derive_seed(cfg.seed, r));
        std::set<TokenSequence> seen{rec.sequence};
        for (int s = 0; s < cfg.shuffles; ++s) {
            TokenSequence perm = rec.sequence;
            rng.shuffle(perm);
            if (seen.insert(perm).second) out.push_back({std::move(perm), rec.utility});
        }
    }
    return out;
}

} // namespace gensel
