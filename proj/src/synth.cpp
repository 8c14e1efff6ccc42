#include "gensel/synth.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "gensel/rng.hpp"

namespace gensel {

SynthResult synth_generate(const SynthConfig& cfg) {
    if (cfg.n_samples < 10) throw ConfigError("synth: n_samples must be >= 10");
    if (cfg.n_informative < 1 || cfg.n_informative > cfg.n_features) {
        throw ConfigError("synth: n_informative must be in [1, n_features]");
    }
    if (cfg.collinear_copies < 0 || cfg.noise_sigma < 0.0) {
        throw ConfigError("synth: collinear_copies and noise_sigma must be non-negative");
    }
    const int signal_cols = cfg.n_informative * (1 + cfg.collinear_copies);
    if (signal_cols > cfg.n_features) {
        throw ConfigError("synth: informative features plus copies exceed n_features");
    }
    if (cfg.flip_rate < 0.0 || cfg.flip_rate >= 0.5) {
        throw ConfigError("synth: flip_rate must be in [0, 0.5)");
    }

    Rng rng(cfg.seed);
    const std::size_t n = static_cast<std::size_t>(cfg.n_samples);
    const std::size_t q = static_cast<std::size_t>(cfg.n_informative);

    // informative signals and a sparse linear logit with weights in +-[1, 2]
    Mat z(n, q);
    for (auto& v : z.data) v = rng.normal();
    std::vector<double> w(q);
    for (auto& v : w) v = rng.uniform(1.0, 2.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);

    std::vector<double> logit(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < q; ++j) logit[i] += w[j] * z.at(i, j);
    }

    // threshold at the median logit: balanced classes by construction
    std::vector<double> sorted_logit = logit;
    std::nth_element(sorted_logit.begin(), sorted_logit.begin() + n / 2, sorted_logit.end());
    const double threshold = sorted_logit[n / 2];
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = logit[i] >= threshold ? 1 : 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (rng.bernoulli(cfg.flip_rate)) labels[i] = 1 - labels[i];
    }

    // column placement: one shuffled pool of indices, signal first, noise rest
    std::vector<std::size_t> columns(static_cast<std::size_t>(cfg.n_features));
    std::iota(columns.begin(), columns.end(), 0);
    rng.shuffle(columns);

    SynthResult result;
    Mat features(n, static_cast<std::size_t>(cfg.n_features));
    std::size_t next = 0;
    for (std::size_t j = 0; j < q; ++j) {
        const std::size_t col = columns[next++];
        result.informative.insert(static_cast<int>(col));
        for (std::size_t i = 0; i < n; ++i) features.at(i, col) = z.at(i, j);
        std::vector<int> copy_cols;
        for (int c = 0; c < cfg.collinear_copies; ++c) {
            const std::size_t copy = columns[next++];
            copy_cols.push_back(static_cast<int>(copy));
            for (std::size_t i = 0; i < n; ++i) {
                features.at(i, copy) = z.at(i, j) + cfg.noise_sigma * rng.normal();
            }
        }
        result.copies.emplace_back(static_cast<int>(col), std::move(copy_cols));
    }
    for (std::size_t jj = next; jj < columns.size(); ++jj) {
        const std::size_t col = columns[jj];
        for (std::size_t i = 0; i < n; ++i) features.at(i, col) = rng.normal();
    }

    result.dataset.features = std::move(features);
    result.dataset.labels = std::move(labels);
    result.dataset.feature_names.reserve(static_cast<std::size_t>(cfg.n_features));
    for (int j = 0; j < cfg.n_features; ++j) result.dataset.feature_names.push_back("f" + std::to_string(j));
    return result;
}

void synth_write(const SynthResult& result, const std::string& csv_path, const std::string& sidecar_path) {
    save_dataset(result.dataset, csv_path);

    nlohmann::json j;
    j["informative"] = std::vector<int>(result.informative.begin(), result.informative.end());
    nlohmann::json copies = nlohmann::json::object();
    for (const auto& [col, copy_cols] : result.copies) copies[std::to_string(col)] = copy_cols;
    j["collinear_copies"] = copies;

    std::ofstream out(sidecar_path);
    if (!out) throw ParseError("cannot write sidecar file: " + sidecar_path);
    out << j.dump(2) << '\n';
}

} // namespace gensel
