#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gensel/augment.hpp"
#include "gensel/collector.hpp"
#include "gensel/core.hpp"
#include "gensel/downstream.hpp"
#include "gensel/search.hpp"
#include "gensel/seqmodel.hpp"
#include "gensel/synth.hpp"

namespace gensel {

enum class CollectorKind { rl, random };

// Everything one run needs. Nested seeds are derived from the global seed so
// a single integer reproduces a whole pipeline.
struct RunConfig {
    std::uint64_t seed = 0;
    CollectorKind collector_kind = CollectorKind::rl;
    SynthConfig synth;
    CollectorConfig collector;
    AugmentConfig augment;
    ModelConfig model;
    TrainConfig train;
    SearchConfig search;
    EvalConfig eval;

    void derive_nested_seeds();   // seeds every stage from the global seed
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Accepts a plain config file or a manifest (uses its "config" object).
RunConfig load_run_config(const std::string& path);

nlohmann::json metrics_to_json(const MetricsReport& report);

// throws SchemaError when the results object is malformed
void validate_results_schema(const nlohmann::json& results);

struct StageTimings {
    std::map<std::string, double> seconds;
};

void write_manifest(const std::string& path, const std::string& command, const RunConfig& cfg,
                    const StageTimings& timings, const std::map<std::string, std::string>& outputs);

// ---- stages over files ----

std::string stage_synth(const RunConfig& cfg, const std::string& out_dir, StageTimings& timings);
std::string stage_collect(const TabularDataset& ds, const RunConfig& cfg, const std::string& out_dir,
                          StageTimings& timings);
std::string stage_augment(const std::string& records_path, const RunConfig& cfg,
                          const std::string& out_dir, StageTimings& timings);
std::string stage_train(const std::string& records_path, int vocab_size, const RunConfig& cfg,
                        const std::string& out_dir, StageTimings& timings);
struct SearchFiles {
    std::string candidates_path;
    std::string summary_path;
    SearchOutcome outcome;
};
SearchFiles stage_search(const std::string& checkpoint_path, const std::string& records_path,
                         const TabularDataset& ds, const RunConfig& cfg, const std::string& out_dir,
                         StageTimings& timings);

// ---- composite runs ----

struct RunAllResult {
    TokenSequence chosen;
    MetricsReport chosen_report;
    TokenSequence ftest_subset;
    MetricsReport ftest_report;
    MetricsReport original_report;
    std::string results_path;
};

RunAllResult run_all(const TabularDataset& ds, const RunConfig& cfg, const std::string& out_dir);

struct AblateArm {
    std::string name;
    double x = 0.0;             // sweep position (shuffle count) where applicable
    MetricsReport report;
    TokenSequence subset;
};

std::vector<AblateArm> ablate(const std::string& kind, const TabularDataset& ds, const RunConfig& cfg,
                              const std::string& out_dir);

} // namespace gensel
