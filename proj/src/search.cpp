#include "gensel/search.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace gensel {

std::vector<TokenSequence> select_seeds(const std::vector<SubsetRecord>& records, int k) {
    if (records.empty()) throw EmptyRecordsError("select_seeds: no records");
    if (k < 1) throw ConfigError("select_seeds: k must be >= 1");

    std::map<TokenSequence, double> best;   // canonical form -> utility
    for (const auto& rec : records) {
        TokenSequence canon = canonicalize(rec.sequence);
        if (canon.empty()) continue;
        auto [it, inserted] = best.emplace(std::move(canon), rec.utility);
        if (!inserted && rec.utility > it->second) it->second = rec.utility;
    }
    if (best.empty()) throw EmptyRecordsError("select_seeds: no non-empty canonical sequences");

    std::vector<std::pair<TokenSequence, double>> ranked(best.begin(), best.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        if (a.first.size() != b.first.size()) return a.first.size() < b.first.size();
        return a.first < b.first;
    });
    std::vector<TokenSequence> seeds;
    for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i) {
        seeds.push_back(std::move(ranked[i].first));
    }
    return seeds;
}

std::vector<std::vector<double>> ascend(const std::vector<double>& e, const GradientFn& grad,
                                        double eta, int steps) {
    if (eta <= 0.0 || steps < 1) throw ConfigError("ascend: eta > 0 and steps >= 1 required");
    std::vector<std::vector<double>> trajectory;
    trajectory.reserve(static_cast<std::size_t>(steps));
    std::vector<double> cur = e;
    for (int t = 0; t < steps; ++t) {
        const std::vector<double> g = grad(cur);
        for (std::size_t i = 0; i < cur.size(); ++i) {
            cur[i] += eta * g[i];
            if (!(std::fabs(cur[i]) <= 1e6)) {
                throw DivergenceAbortError("ascend: coordinate " + std::to_string(i) +
                                           " diverged at step " + std::to_string(t + 1));
            }
        }
        trajectory.push_back(cur);
    }
    return trajectory;
}

TokenSequence generate(const std::vector<double>& e, const ModelParams& params, int max_len) {
    const int limit = std::min(max_len, params.cfg.max_len);
    TokenSequence prefix{Vocabulary::SOS};
    TokenSequence raw;
    for (int step = 0; step < limit; ++step) {
        const std::vector<double> logits = decode_logits(e, prefix, params);
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.size(); ++j) {
            if (logits[j] > logits[best]) best = j;
        }
        const TokenId tok = static_cast<TokenId>(best);
        if (tok == Vocabulary::EOS) break;
        raw.push_back(tok);
        prefix.push_back(tok);
    }
    return canonicalize(raw);
}

SearchOutcome search_and_generate(const std::vector<SubsetRecord>& records, const ModelParams& params,
                                  const SearchConfig& cfg, const ScorerFn& scorer) {
    const std::vector<TokenSequence> seeds = select_seeds(records, cfg.top_k);
    const GradientFn grad = [&](const std::vector<double>& e) {
        return evaluator_input_grad(params, e);
    };

    SearchOutcome outcome;
    std::vector<MetricsReport> reports;
    std::map<TokenSequence, bool> seen;

    for (std::size_t rank = 0; rank < seeds.size(); ++rank) {
        const LatentPoint lp = encode(seeds[rank], params);
        const std::vector<double> e0 = reparameterize(lp, {});
        const auto trajectory = ascend(e0, grad, cfg.eta, cfg.steps);

        std::vector<std::pair<int, const std::vector<double>*>> points;
        points.emplace_back(0, &e0);
        if (cfg.decode_every > 0) {
            for (int t = cfg.decode_every; t < cfg.steps; t += cfg.decode_every) {
                points.emplace_back(t, &trajectory[static_cast<std::size_t>(t) - 1]);
            }
        }
        points.emplace_back(cfg.steps, &trajectory.back());

        for (const auto& [step, e] : points) {
            TokenSequence tokens = generate(*e, params, params.cfg.max_len);
            if (tokens.empty()) continue;
            if (!seen.emplace(tokens, true).second) continue;
            const ScoredMetrics scored = scorer(tokens);
            outcome.candidates.push_back({static_cast<int>(rank), step, std::move(tokens),
                                          evaluator_value(params, *e), scored.utility});
            reports.push_back(scored.report);
        }
    }
    if (outcome.candidates.empty()) {
        throw NoValidCandidateError("search: every decoded candidate was empty");
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < outcome.candidates.size(); ++i) {
        const Candidate& a = outcome.candidates[i];
        const Candidate& b = outcome.candidates[best];
        const bool better = a.measured_utility != b.measured_utility
                                ? a.measured_utility > b.measured_utility
                            : reports[i].f1 != reports[best].f1 ? reports[i].f1 > reports[best].f1
                            : a.tokens.size() != b.tokens.size() ? a.tokens.size() < b.tokens.size()
                                                                 : a.tokens < b.tokens;
        if (better) best = i;
    }
    outcome.best = outcome.candidates[best].tokens;
    outcome.report = reports[best];
    outcome.best_utility = outcome.candidates[best].measured_utility;
    return outcome;
}

} // namespace gensel
