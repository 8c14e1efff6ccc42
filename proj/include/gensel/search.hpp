#pragma once

#include <functional>
#include <vector>

#include "gensel/core.hpp"
#include "gensel/downstream.hpp"
#include "gensel/seqmodel.hpp"

namespace gensel {

struct SearchConfig {
    int top_k = 25;        // seeds taken from the record pool
    double eta = 0.5;      // ascent step size
    int steps = 20;        // ascent iterations
    int decode_every = 5;  // decode cadence; step 0 and the endpoint always decode
};

struct EmptyRecordsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceAbortError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoValidCandidateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Top-K distinct canonical sequences by utility; ties broken by shorter
// length, then lexicographic token order.
std::vector<TokenSequence> select_seeds(const std::vector<SubsetRecord>& records, int k);

using GradientFn = std::function<std::vector<double>(const std::vector<double>&)>;

// e_{t+1} = e_t + eta * grad(e_t); returns [e_1 .. e_steps]. Aborts when any
// coordinate leaves [-1e6, 1e6].
std::vector<std::vector<double>> ascend(const std::vector<double>& e, const GradientFn& grad,
                                        double eta, int steps);

// Greedy argmax decode from SOS until EOS or max_len, then canonicalize.
// Argmax ties break toward the lowest token id.
TokenSequence generate(const std::vector<double>& e, const ModelParams& params, int max_len);

struct Candidate {
    int seed_rank = 0;
    int step = 0;
    TokenSequence tokens;
    double predicted_utility = 0.0;
    double measured_utility = 0.0;
};

struct SearchOutcome {
    TokenSequence best;
    MetricsReport report;     // of the best candidate
    double best_utility = 0.0;
    std::vector<Candidate> candidates;
};

// Encode K seeds on the deterministic path, ascend each, decode along the
// trajectories, measure every distinct non-empty candidate, return the best
// (ties: higher F1, then smaller subset).
SearchOutcome search_and_generate(const std::vector<SubsetRecord>& records, const ModelParams& params,
                                  const SearchConfig& cfg, const ScorerFn& scorer);

} // namespace gensel
