#include "gensel/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "gensel/rng.hpp"

namespace gensel {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

class StageTimer {
public:
    StageTimer(StageTimings& t, std::string name) : timings_(t), name_(std::move(name)), t0_(Clock::now()) {}
    ~StageTimer() {
        timings_.seconds[name_] = std::chrono::duration<double>(Clock::now() - t0_).count();
    }

private:
    StageTimings& timings_;
    std::string name_;
    Clock::time_point t0_;
};

template <typename T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory: " + dir);
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write file: " + path);
    out << content;
}

// ---- minimal SVG charts (static figures plus the CSV of plotted points) ----

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string svg_header(int w, int h, const std::string& title) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                    "\" height=\"" + std::to_string(h) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         title + "</text>\n";
    return s;
}

void svg_line_chart(const std::string& path, const std::string& title, const std::string& xlabel,
                    const std::vector<Series>& series) {
    const int w = 560, h = 360, ml = 60, mr = 130, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
        }
    }
    if (xmax <= xmin) xmax = xmin + 1.0;
    const double ymin = 0.0, ymax = 1.0;   // metrics live in [0, 1]
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::string s = svg_header(w, h, title);
    s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(h - mb) + "\" x2=\"" +
         std::to_string(w - mr) + "\" y2=\"" + std::to_string(h - mb) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt) + "\" x2=\"" +
         std::to_string(ml) + "\" y2=\"" + std::to_string(h - mb) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double y = ymin + (ymax - ymin) * i / 5.0;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", y);
        s += "<text x=\"" + std::to_string(ml - 8) + "\" y=\"" + std::to_string(py(y) + 4) +
             "\" text-anchor=\"end\" font-size=\"10\">" + buf + "</text>\n";
    }
    s += "<text x=\"" + std::to_string((ml + w - mr) / 2) + "\" y=\"" + std::to_string(h - 12) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + xlabel + "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = kPalette[k % 5];
        std::string poly = "<polyline fill=\"none\" stroke=\"" + std::string(color) +
                           "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : series[k].points) {
            poly += std::to_string(px(x)) + "," + std::to_string(py(y)) + " ";
        }
        poly += "\"/>\n";
        s += poly;
        for (const auto& [x, y] : series[k].points) {
            s += "<circle cx=\"" + std::to_string(px(x)) + "\" cy=\"" + std::to_string(py(y)) +
                 "\" r=\"3\" fill=\"" + color + "\"/>\n";
        }
        const int ly = mt + 16 * static_cast<int>(k);
        s += "<rect x=\"" + std::to_string(w - mr + 10) + "\" y=\"" + std::to_string(ly) +
             "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
        s += "<text x=\"" + std::to_string(w - mr + 25) + "\" y=\"" + std::to_string(ly + 9) +
             "\" font-size=\"11\">" + series[k].name + "</text>\n";
    }
    s += "</svg>\n";
    write_text(path, s);
}

void svg_bar_chart(const std::string& path, const std::string& title,
                   const std::vector<std::pair<std::string, double>>& bars) {
    const int w = 560, h = 360, ml = 60, mr = 30, mt = 40, mb = 60;
    const double ymax = 1.0;
    auto py = [&](double y) { return h - mb - y / ymax * (h - mt - mb); };
    const double slot = static_cast<double>(w - ml - mr) / static_cast<double>(bars.size());

    std::string s = svg_header(w, h, title);
    s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(h - mb) + "\" x2=\"" +
         std::to_string(w - mr) + "\" y2=\"" + std::to_string(h - mb) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double y = ymax * i / 5.0;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", y);
        s += "<text x=\"" + std::to_string(ml - 8) + "\" y=\"" + std::to_string(py(y) + 4) +
             "\" text-anchor=\"end\" font-size=\"10\">" + buf + "</text>\n";
    }
    for (std::size_t k = 0; k < bars.size(); ++k) {
        const double x0 = ml + slot * static_cast<double>(k) + slot * 0.2;
        const double bw = slot * 0.6;
        s += "<rect x=\"" + std::to_string(x0) + "\" y=\"" + std::to_string(py(bars[k].second)) +
             "\" width=\"" + std::to_string(bw) + "\" height=\"" +
             std::to_string(h - mb - py(bars[k].second)) + "\" fill=\"" + kPalette[k % 5] + "\"/>\n";
        s += "<text x=\"" + std::to_string(x0 + bw / 2) + "\" y=\"" + std::to_string(h - mb + 16) +
             "\" text-anchor=\"middle\" font-size=\"11\">" + bars[k].first + "</text>\n";
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.3f", bars[k].second);
        s += "<text x=\"" + std::to_string(x0 + bw / 2) + "\" y=\"" +
             std::to_string(py(bars[k].second) - 5) + "\" text-anchor=\"middle\" font-size=\"10\">" +
             buf + "</text>\n";
    }
    s += "</svg>\n";
    write_text(path, s);
}

TokenSequence full_feature_subset(const TabularDataset& ds) {
    const Vocabulary vocab = ds.vocabulary();
    TokenSequence all;
    for (std::size_t j = 0; j < ds.n_features(); ++j) {
        all.push_back(vocab.token_for_column(static_cast<int>(j)));
    }
    return all;
}

void write_candidates(const std::string& path, const std::vector<Candidate>& candidates) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write candidates file: " + path);
    for (const auto& c : candidates) {
        nlohmann::json j;
        j["seed_rank"] = c.seed_rank;
        j["step"] = c.step;
        j["tokens"] = c.tokens;
        j["predicted_utility"] = c.predicted_utility;
        j["measured_utility"] = c.measured_utility;
        out << j.dump() << '\n';
    }
}

void write_episode_log(const std::string& path, const std::vector<EpisodeLogRow>& log) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write episode log: " + path);
    out << "epoch,subset_size,utility,reward,epsilon\n";
    for (const auto& row : log) {
        out << row.epoch << ',' << row.subset_size << ',';
        if (std::isnan(row.utility)) {
            out << "";
        } else {
            out << format_utility(row.utility);
        }
        out << ',' << row.reward << ',' << row.epsilon << '\n';
    }
}

void write_curve(const std::string& path, const std::vector<EpochStats>& curve) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write training curve: " + path);
    out << "epoch,rec,evt,kl,joint\n";
    for (const auto& row : curve) {
        out << row.epoch << ',' << row.rec << ',' << row.evt << ',' << row.kl << ',' << row.joint
            << '\n';
    }
}

} // namespace

void RunConfig::derive_nested_seeds() {
    synth.seed = derive_seed(seed, 11);
    collector.seed = derive_seed(seed, 12);
    augment.seed = derive_seed(seed, 13);
    train.seed = derive_seed(seed, 14);
    eval.seed = derive_seed(seed, 15);
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    get_if_present(j, "seed", cfg.seed);
    if (j.contains("collector_kind")) {
        const std::string kind = j.at("collector_kind").get<std::string>();
        if (kind == "rl") {
            cfg.collector_kind = CollectorKind::rl;
        } else if (kind == "random") {
            cfg.collector_kind = CollectorKind::random;
        } else {
            throw ConfigError("config: collector_kind must be rl or random");
        }
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        get_if_present(s, "n_features", cfg.synth.n_features);
        get_if_present(s, "n_samples", cfg.synth.n_samples);
        get_if_present(s, "n_informative", cfg.synth.n_informative);
        get_if_present(s, "collinear_copies", cfg.synth.collinear_copies);
        get_if_present(s, "noise_sigma", cfg.synth.noise_sigma);
        get_if_present(s, "flip_rate", cfg.synth.flip_rate);
    }
    if (j.contains("collector")) {
        const auto& c = j.at("collector");
        get_if_present(c, "epochs", cfg.collector.epochs);
        get_if_present(c, "epsilon_start", cfg.collector.epsilon_start);
        get_if_present(c, "epsilon_end", cfg.collector.epsilon_end);
        get_if_present(c, "epsilon_decay_epochs", cfg.collector.epsilon_decay_epochs);
        get_if_present(c, "buffer_capacity", cfg.collector.buffer_capacity);
        get_if_present(c, "minibatch", cfg.collector.minibatch);
        get_if_present(c, "gamma", cfg.collector.gamma);
        get_if_present(c, "target_sync_interval", cfg.collector.target_sync_interval);
        get_if_present(c, "lambda_relevance", cfg.collector.lambda_relevance);
        get_if_present(c, "lambda_redundancy", cfg.collector.lambda_redundancy);
        get_if_present(c, "agent_lr", cfg.collector.agent_lr);
        get_if_present(c, "agent_hidden", cfg.collector.agent_hidden);
    }
    if (j.contains("augment")) {
        get_if_present(j.at("augment"), "shuffles", cfg.augment.shuffles);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        get_if_present(m, "embed_dim", cfg.model.embed_dim);
        get_if_present(m, "layers", cfg.model.layers);
        get_if_present(m, "heads", cfg.model.heads);
        get_if_present(m, "ff_dim", cfg.model.ff_dim);
        get_if_present(m, "latent_dim", cfg.model.latent_dim);
        get_if_present(m, "eval_hidden", cfg.model.eval_hidden);
        get_if_present(m, "max_len", cfg.model.max_len);
        get_if_present(m, "variational", cfg.model.variational);
        if (m.contains("kl_form")) {
            const std::string form = m.at("kl_form").get<std::string>();
            if (form == "paper") {
                cfg.model.kl_form = KlForm::paper;
            } else if (form == "standard") {
                cfg.model.kl_form = KlForm::standard;
            } else {
                throw ConfigError("config: kl_form must be paper or standard");
            }
        }
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        get_if_present(t, "alpha", cfg.train.alpha);
        get_if_present(t, "beta", cfg.train.beta);
        get_if_present(t, "gamma", cfg.train.gamma);
        get_if_present(t, "batch_size", cfg.train.batch_size);
        get_if_present(t, "epochs", cfg.train.epochs);
        get_if_present(t, "lr", cfg.train.lr);
        get_if_present(t, "threads", cfg.train.threads);
    }
    if (j.contains("search")) {
        const auto& s = j.at("search");
        get_if_present(s, "top_k", cfg.search.top_k);
        get_if_present(s, "eta", cfg.search.eta);
        get_if_present(s, "steps", cfg.search.steps);
        get_if_present(s, "decode_every", cfg.search.decode_every);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        if (e.contains("classifier")) {
            const std::string c = e.at("classifier").get<std::string>();
            if (c == "tree_ensemble") {
                cfg.eval.classifier = ClassifierKind::tree_ensemble;
            } else if (c == "logistic") {
                cfg.eval.classifier = ClassifierKind::logistic;
            } else {
                throw ConfigError("config: classifier must be tree_ensemble or logistic");
            }
        }
        get_if_present(e, "folds", cfg.eval.folds);
        if (e.contains("metric")) {
            const std::string m = e.at("metric").get<std::string>();
            if (m == "accuracy") {
                cfg.eval.metric = UtilityMetric::accuracy;
            } else if (m == "f1") {
                cfg.eval.metric = UtilityMetric::f1;
            } else {
                throw ConfigError("config: metric must be accuracy or f1");
            }
        }
        get_if_present(e, "n_trees", cfg.eval.n_trees);
    }
    cfg.derive_nested_seeds();
    return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["collector_kind"] = cfg.collector_kind == CollectorKind::rl ? "rl" : "random";
    j["synth"] = {{"n_features", cfg.synth.n_features},
                  {"n_samples", cfg.synth.n_samples},
                  {"n_informative", cfg.synth.n_informative},
                  {"collinear_copies", cfg.synth.collinear_copies},
                  {"noise_sigma", cfg.synth.noise_sigma},
                  {"flip_rate", cfg.synth.flip_rate}};
    j["collector"] = {{"epochs", cfg.collector.epochs},
                      {"epsilon_start", cfg.collector.epsilon_start},
                      {"epsilon_end", cfg.collector.epsilon_end},
                      {"epsilon_decay_epochs", cfg.collector.epsilon_decay_epochs},
                      {"buffer_capacity", cfg.collector.buffer_capacity},
                      {"minibatch", cfg.collector.minibatch},
                      {"gamma", cfg.collector.gamma},
                      {"target_sync_interval", cfg.collector.target_sync_interval},
                      {"lambda_relevance", cfg.collector.lambda_relevance},
                      {"lambda_redundancy", cfg.collector.lambda_redundancy},
                      {"agent_lr", cfg.collector.agent_lr},
                      {"agent_hidden", cfg.collector.agent_hidden}};
    j["augment"] = {{"shuffles", cfg.augment.shuffles}};
    j["model"] = {{"embed_dim", cfg.model.embed_dim},
                  {"layers", cfg.model.layers},
                  {"heads", cfg.model.heads},
                  {"ff_dim", cfg.model.ff_dim},
                  {"latent_dim", cfg.model.latent_dim},
                  {"eval_hidden", cfg.model.eval_hidden},
                  {"max_len", cfg.model.max_len},
                  {"variational", cfg.model.variational},
                  {"kl_form", cfg.model.kl_form == KlForm::paper ? "paper" : "standard"}};
    j["train"] = {{"alpha", cfg.train.alpha},     {"beta", cfg.train.beta},
                  {"gamma", cfg.train.gamma},     {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},   {"lr", cfg.train.lr},
                  {"threads", cfg.train.threads}};
    j["search"] = {{"top_k", cfg.search.top_k},
                   {"eta", cfg.search.eta},
                   {"steps", cfg.search.steps},
                   {"decode_every", cfg.search.decode_every}};
    j["eval"] = {{"classifier",
                  cfg.eval.classifier == ClassifierKind::tree_ensemble ? "tree_ensemble" : "logistic"},
                 {"folds", cfg.eval.folds},
                 {"metric", cfg.eval.metric == UtilityMetric::accuracy ? "accuracy" : "f1"},
                 {"n_trees", cfg.eval.n_trees}};
    return j;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("unparsable config file: " + path);
    if (j.contains("config") && j.contains("command")) j = j.at("config");   // manifest reuse
    return run_config_from_json(j);
}

nlohmann::json metrics_to_json(const MetricsReport& report) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : report.per_fold) {
        folds.push_back({{"precision", f.precision},
                         {"recall", f.recall},
                         {"f1", f.f1},
                         {"auc", f.auc}});
    }
    return {{"precision", report.precision}, {"recall", report.recall},
            {"f1", report.f1},               {"auc", report.auc},
            {"per_fold", folds},             {"auc_degenerate", report.auc_degenerate}};
}

void validate_results_schema(const nlohmann::json& r) {
    auto need_metrics = [](const nlohmann::json& m, const std::string& where) {
        for (const char* key : {"precision", "recall", "f1", "auc"}) {
            if (!m.contains(key) || !m.at(key).is_number()) {
                throw SchemaError("results: " + where + " missing numeric '" + key + "'");
            }
        }
        if (!m.contains("per_fold") || !m.at("per_fold").is_array() || m.at("per_fold").empty()) {
            throw SchemaError("results: " + where + " missing per_fold array");
        }
    };
    if (!r.contains("schema_version") || r.at("schema_version").get<int>() != 1) {
        throw SchemaError("results: bad schema_version");
    }
    if (!r.contains("subset") || !r.at("subset").contains("tokens") ||
        !r.at("subset").at("tokens").is_array() || r.at("subset").at("tokens").empty()) {
        throw SchemaError("results: missing subset.tokens");
    }
    if (!r.contains("metrics")) throw SchemaError("results: missing metrics");
    need_metrics(r.at("metrics").at("chosen"), "chosen");
    need_metrics(r.at("metrics").at("ftest_baseline"), "ftest_baseline");
    need_metrics(r.at("metrics").at("original"), "original");
}

void write_manifest(const std::string& path, const std::string& command, const RunConfig& cfg,
                    const StageTimings& timings, const std::map<std::string, std::string>& outputs) {
    nlohmann::json j;
    j["command"] = command;
    j["schema_version"] = 1;
    j["seed"] = cfg.seed;
    j["config"] = run_config_to_json(cfg);
    j["timings_s"] = timings.seconds;
    j["outputs"] = outputs;
    write_text(path, j.dump(2) + "\n");
}

std::string stage_synth(const RunConfig& cfg, const std::string& out_dir, StageTimings& timings) {
    ensure_dir(out_dir);
    StageTimer timer(timings, "synth");
    const SynthResult result = synth_generate(cfg.synth);
    const std::string csv = join_path(out_dir, "dataset.csv");
    synth_write(result, csv, join_path(out_dir, "ground_truth.json"));
    return csv;
}

std::string stage_collect(const TabularDataset& ds, const RunConfig& cfg, const std::string& out_dir,
                          StageTimings& timings) {
    ensure_dir(out_dir);
    StageTimer timer(timings, "collect");
    const UtilityFn utility_fn = [&](const TokenSequence& seq) { return utility(ds, seq, cfg.eval); };
    const std::string records_path = join_path(out_dir, "records.jsonl");
    if (cfg.collector_kind == CollectorKind::rl) {
        const CollectResult result = collect(ds, cfg.collector, utility_fn);
        save_records(result.records, records_path);
        write_episode_log(join_path(out_dir, "episodes.csv"), result.episode_log);
    } else {
        const auto records = random_collect(ds, cfg.collector.epochs, cfg.collector.seed, utility_fn);
        save_records(records, records_path);
    }
    return records_path;
}

std::string stage_augment(const std::string& records_path, const RunConfig& cfg,
                          const std::string& out_dir, StageTimings& timings) {
    ensure_dir(out_dir);
    StageTimer timer(timings, "augment");
    const auto records = load_records(records_path);
    const auto augmented = shuffle_augment(records, cfg.augment);
    const std::string out_path = join_path(out_dir, "augmented.jsonl");
    save_records(augmented, out_path);
    return out_path;
}

std::string stage_train(const std::string& records_path, int vocab_size, const RunConfig& cfg,
                        const std::string& out_dir, StageTimings& timings) {
    ensure_dir(out_dir);
    StageTimer timer(timings, "train");
    const auto records = load_records(records_path);
    std::vector<EpochStats> curve;
    const ModelParams params = train(records, cfg.model, cfg.train, vocab_size, &curve);
    const std::string ckpt = join_path(out_dir, "checkpoint.bin");
    save_checkpoint(params, cfg.train, ckpt);
    write_curve(join_path(out_dir, "train_curve.csv"), curve);
    return ckpt;
}

SearchFiles stage_search(const std::string& checkpoint_path, const std::string& records_path,
                         const TabularDataset& ds, const RunConfig& cfg, const std::string& out_dir,
                         StageTimings& timings) {
    ensure_dir(out_dir);
    StageTimer timer(timings, "search");
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const auto records = load_records(records_path);
    const ScorerFn scorer = [&](const TokenSequence& seq) {
        return evaluate_scored(ds, seq, cfg.eval);
    };
    SearchFiles files;
    files.outcome = search_and_generate(records, ckpt.params, cfg.search, scorer);
    files.candidates_path = join_path(out_dir, "candidates.jsonl");
    write_candidates(files.candidates_path, files.outcome.candidates);

    nlohmann::json summary;
    summary["subset"] = {{"tokens", files.outcome.best},
                         {"size", files.outcome.best.size()}};
    summary["measured_utility"] = files.outcome.best_utility;
    summary["metrics"] = metrics_to_json(files.outcome.report);
    files.summary_path = join_path(out_dir, "search.json");
    write_text(files.summary_path, summary.dump(2) + "\n");
    return files;
}

RunAllResult run_all(const TabularDataset& ds, const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    StageTimings timings;

    const std::string records_path = stage_collect(ds, cfg, out_dir, timings);
    const std::string augmented_path = stage_augment(records_path, cfg, out_dir, timings);
    const int vocab_size = static_cast<int>(ds.n_features()) + 3;
    const std::string ckpt_path = stage_train(augmented_path, vocab_size, cfg, out_dir, timings);
    const SearchFiles search_files = stage_search(ckpt_path, records_path, ds, cfg, out_dir, timings);

    RunAllResult result;
    result.chosen = search_files.outcome.best;
    result.chosen_report = search_files.outcome.report;
    {
        StageTimer timer(timings, "evaluate");
        result.ftest_subset = baseline_ftest(ds, static_cast<int>(result.chosen.size()));
        result.ftest_report = evaluate_subset(ds, result.ftest_subset, cfg.eval);
        result.original_report = evaluate_subset(ds, full_feature_subset(ds), cfg.eval);
    }

    const Vocabulary vocab = ds.vocabulary();
    std::vector<int> columns;
    for (TokenId t : result.chosen) columns.push_back(vocab.column_for_token(t));

    nlohmann::json results;
    results["schema_version"] = 1;
    results["seed"] = cfg.seed;
    results["subset"] = {{"tokens", result.chosen}, {"columns", columns}, {"size", result.chosen.size()}};
    results["metrics"] = {{"chosen", metrics_to_json(result.chosen_report)},
                          {"ftest_baseline", metrics_to_json(result.ftest_report)},
                          {"original", metrics_to_json(result.original_report)}};
    results["metrics"]["ftest_baseline"]["subset"] = result.ftest_subset;
    validate_results_schema(results);

    result.results_path = join_path(out_dir, "results.json");
    write_text(result.results_path, results.dump(2) + "\n");
    write_manifest(join_path(out_dir, "manifest.json"), "run-all", cfg, timings,
                   {{"results", "results.json"},
                    {"records", "records.jsonl"},
                    {"augmented", "augmented.jsonl"},
                    {"checkpoint", "checkpoint.bin"},
                    {"candidates", "candidates.jsonl"}});
    return result;
}

namespace {

// collect -> augment -> train -> search -> evaluate with the given config;
// used by the ablation arms
AblateArm pipeline_arm(const std::string& name, const TabularDataset& ds, const RunConfig& cfg,
                       const std::string& arm_dir, StageTimings& timings) {
    ensure_dir(arm_dir);
    const std::string records_path = stage_collect(ds, cfg, arm_dir, timings);
    const std::string augmented_path = stage_augment(records_path, cfg, arm_dir, timings);
    const int vocab_size = static_cast<int>(ds.n_features()) + 3;
    const std::string ckpt_path = stage_train(augmented_path, vocab_size, cfg, arm_dir, timings);
    const SearchFiles search_files = stage_search(ckpt_path, records_path, ds, cfg, arm_dir, timings);
    return {name, 0.0, search_files.outcome.report, search_files.outcome.best};
}

AblateArm pipeline_arm_from_records(const std::string& name, const TabularDataset& ds,
                                    const RunConfig& cfg, const std::string& records_path,
                                    const std::string& arm_dir, StageTimings& timings) {
    ensure_dir(arm_dir);
    const std::string augmented_path = stage_augment(records_path, cfg, arm_dir, timings);
    const int vocab_size = static_cast<int>(ds.n_features()) + 3;
    const std::string ckpt_path = stage_train(augmented_path, vocab_size, cfg, arm_dir, timings);
    const SearchFiles search_files = stage_search(ckpt_path, records_path, ds, cfg, arm_dir, timings);
    return {name, 0.0, search_files.outcome.report, search_files.outcome.best};
}

void write_ablate_csv(const std::string& path, const std::string& x_name,
                      const std::vector<AblateArm>& arms) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write ablation csv: " + path);
    out << x_name << ",precision,recall,f1,auc,subset_size\n";
    for (const auto& arm : arms) {
        out << arm.name << ',' << arm.report.precision << ',' << arm.report.recall << ','
            << arm.report.f1 << ',' << arm.report.auc << ',' << arm.subset.size() << '\n';
    }
}

} // namespace

std::vector<AblateArm> ablate(const std::string& kind, const TabularDataset& ds, const RunConfig& cfg,
                              const std::string& out_dir) {
    ensure_dir(out_dir);
    StageTimings timings;
    std::vector<AblateArm> arms;

    if (kind == "shuffle") {
        // one shared collection; sweep the augmentation count
        const std::string records_path = stage_collect(ds, cfg, out_dir, timings);
        for (int s : {0, 5, 10, 25}) {
            RunConfig arm_cfg = cfg;
            arm_cfg.augment.shuffles = s;
            AblateArm arm = pipeline_arm_from_records("S" + std::to_string(s), ds, arm_cfg,
                                                      records_path,
                                                      join_path(out_dir, "S" + std::to_string(s)),
                                                      timings);
            arm.x = s;
            arms.push_back(std::move(arm));
        }
        std::vector<Series> series(4);
        series[0].name = "precision";
        series[1].name = "recall";
        series[2].name = "f1";
        series[3].name = "auc";
        for (const auto& arm : arms) {
            series[0].points.emplace_back(arm.x, arm.report.precision);
            series[1].points.emplace_back(arm.x, arm.report.recall);
            series[2].points.emplace_back(arm.x, arm.report.f1);
            series[3].points.emplace_back(arm.x, arm.report.auc);
        }
        svg_line_chart(join_path(out_dir, "ablate_shuffle.svg"), "metrics vs shuffle count",
                       "shuffles per record", series);
        write_ablate_csv(join_path(out_dir, "ablate_shuffle.csv"), "shuffles", arms);
    } else if (kind == "collector") {
        RunConfig rl_cfg = cfg;
        rl_cfg.collector_kind = CollectorKind::rl;
        arms.push_back(pipeline_arm("rl", ds, rl_cfg, join_path(out_dir, "rl"), timings));
        RunConfig rnd_cfg = cfg;
        rnd_cfg.collector_kind = CollectorKind::random;
        arms.push_back(pipeline_arm("random", ds, rnd_cfg, join_path(out_dir, "random"), timings));
        AblateArm original;
        original.name = "original";
        original.subset = full_feature_subset(ds);
        original.report = evaluate_subset(ds, original.subset, cfg.eval);
        arms.push_back(std::move(original));

        std::vector<std::pair<std::string, double>> bars;
        for (const auto& arm : arms) bars.emplace_back(arm.name, arm.report.f1);
        svg_bar_chart(join_path(out_dir, "ablate_collector.svg"), "F1 by collector", bars);
        write_ablate_csv(join_path(out_dir, "ablate_collector.csv"), "collector", arms);
    } else if (kind == "variational") {
        const std::string records_path = stage_collect(ds, cfg, out_dir, timings);
        for (const bool variational : {true, false}) {
            RunConfig arm_cfg = cfg;
            arm_cfg.model.variational = variational;
            arms.push_back(pipeline_arm_from_records(variational ? "variational" : "plain", ds,
                                                     arm_cfg, records_path,
                                                     join_path(out_dir, variational ? "variational"
                                                                                    : "plain"),
                                                     timings));
        }
        std::vector<std::pair<std::string, double>> bars;
        for (const auto& arm : arms) bars.emplace_back(arm.name, arm.report.f1);
        svg_bar_chart(join_path(out_dir, "ablate_variational.svg"), "F1 with and without the variational head",
                      bars);
        write_ablate_csv(join_path(out_dir, "ablate_variational.csv"), "model", arms);
    } else {
        throw ConfigError("ablate: kind must be shuffle, collector, or variational");
    }

    write_manifest(join_path(out_dir, "manifest.json"), "ablate " + kind, cfg, timings, {});
    return arms;
}

} // namespace gensel
