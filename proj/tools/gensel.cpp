// gensel: learn a continuous embedding of feature subsets from collected
// (subset, utility) pairs, search it by gradient ascent, and decode the best
// point back into a discrete subset.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gensel/pipeline.hpp"

namespace {

using namespace gensel;

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    return out;
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "gensel_out";
    std::uint64_t seed = 0;
    bool seed_set = false;
};

RunConfig resolve_config(const CommonOpts& common) {
    RunConfig cfg;
    if (!common.config_path.empty()) cfg = load_run_config(common.config_path);
    if (common.seed_set) {
        cfg.seed = common.seed;
        cfg.derive_nested_seeds();
    } else if (common.config_path.empty()) {
        cfg.derive_nested_seeds();
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& common) {
    cmd->add_option("--config", common.config_path, "config JSON (or a manifest.json to reproduce)");
    cmd->add_option("--out", common.out_dir, "output directory");
    cmd->add_option("--seed", common.seed, "global seed; stage seeds derive from it")
        ->each([&common](const std::string&) { common.seed_set = true; });
}

int run_cli(int argc, char** argv) {
    CLI::App app{"feature-subset selection via latent-space gradient search"};
    app.require_subcommand(1);

    CommonOpts common;

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic HDLSS dataset");
    add_common(synth_cmd, common);
    int synth_features = -1, synth_samples = -1, synth_informative = -1;
    synth_cmd->add_option("--features", synth_features, "feature count");
    synth_cmd->add_option("--samples", synth_samples, "sample count");
    synth_cmd->add_option("--informative", synth_informative, "planted informative feature count");

    // collect
    auto* collect_cmd = app.add_subcommand("collect", "run the RL data collector");
    add_common(collect_cmd, common);
    std::string dataset_path;
    collect_cmd->add_option("--dataset", dataset_path, "dataset CSV")->required();
    int collect_epochs = -1;
    collect_cmd->add_option("--epochs", collect_epochs, "collector epochs");
    std::string collector_kind;
    collect_cmd->add_option("--collector", collector_kind, "rl or random")
        ->check(CLI::IsMember({"rl", "random"}));

    // augment
    auto* augment_cmd = app.add_subcommand("augment", "expand records with shuffled copies");
    add_common(augment_cmd, common);
    std::string records_path;
    augment_cmd->add_option("--records", records_path, "records JSONL")->required();
    int shuffles = -1;
    augment_cmd->add_option("--shuffles", shuffles, "shuffle draws per record");

    // train
    auto* train_cmd = app.add_subcommand("train", "train the sequence model");
    add_common(train_cmd, common);
    train_cmd->add_option("--records", records_path, "augmented records JSONL")->required();
    train_cmd->add_option("--dataset", dataset_path, "dataset CSV (fixes the vocabulary)")->required();
    int train_epochs = -1, batch_size = -1;
    bool no_variational = false;
    train_cmd->add_option("--epochs", train_epochs, "training epochs");
    train_cmd->add_option("--batch-size", batch_size, "minibatch size");
    train_cmd->add_flag("--no-variational", no_variational, "plain autoencoder ablation");

    // search
    auto* search_cmd = app.add_subcommand("search", "gradient-ascent search and decoding");
    add_common(search_cmd, common);
    std::string checkpoint_path;
    search_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    search_cmd->add_option("--records", records_path, "records JSONL (seed pool)")->required();
    search_cmd->add_option("--dataset", dataset_path, "dataset CSV")->required();
    int topk = -1, steps = -1;
    double eta = -1.0;
    search_cmd->add_option("--topk", topk, "seed count");
    search_cmd->add_option("--eta", eta, "ascent step size");
    search_cmd->add_option("--steps", steps, "ascent iterations");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "cross-validated metrics for a subset");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--dataset", dataset_path, "dataset CSV")->required();
    std::string features_arg, tokens_arg;
    eval_cmd->add_option("--features", features_arg, "comma-separated column indices");
    eval_cmd->add_option("--tokens", tokens_arg, "comma-separated vocabulary tokens");
    int folds = -1;
    std::string classifier;
    eval_cmd->add_option("--folds", folds, "cross-validation folds");
    eval_cmd->add_option("--classifier", classifier, "tree_ensemble or logistic")
        ->check(CLI::IsMember({"tree_ensemble", "logistic"}));

    // run-all
    auto* runall_cmd = app.add_subcommand("run-all", "collect, augment, train, search, evaluate");
    add_common(runall_cmd, common);
    runall_cmd->add_option("--dataset", dataset_path, "dataset CSV")->required();
    runall_cmd->add_option("--epochs", collect_epochs, "collector epochs");
    runall_cmd->add_option("--train-epochs", train_epochs, "training epochs");
    runall_cmd->add_option("--shuffles", shuffles, "shuffle draws per record");
    runall_cmd->add_option("--topk", topk, "seed count");
    runall_cmd->add_option("--eta", eta, "ascent step size");
    runall_cmd->add_option("--steps", steps, "ascent iterations");
    runall_cmd->add_option("--folds", folds, "cross-validation folds");
    runall_cmd->add_option("--classifier", classifier, "tree_ensemble or logistic")
        ->check(CLI::IsMember({"tree_ensemble", "logistic"}));

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "shuffle, collector, or variational ablation");
    add_common(ablate_cmd, common);
    std::string ablate_kind;
    ablate_cmd->add_option("kind", ablate_kind, "shuffle | collector | variational")
        ->required()
        ->check(CLI::IsMember({"shuffle", "collector", "variational"}));
    ablate_cmd->add_option("--dataset", dataset_path, "dataset CSV")->required();
    ablate_cmd->add_option("--epochs", collect_epochs, "collector epochs");
    ablate_cmd->add_option("--train-epochs", train_epochs, "training epochs");
    ablate_cmd->add_option("--shuffles", shuffles, "shuffle draws per record");
    ablate_cmd->add_option("--topk", topk, "seed count");
    ablate_cmd->add_option("--eta", eta, "ascent step size");
    ablate_cmd->add_option("--steps", steps, "ascent iterations");
    ablate_cmd->add_option("--folds", folds, "cross-validation folds");
    ablate_cmd->add_option("--classifier", classifier, "tree_ensemble or logistic")
        ->check(CLI::IsMember({"tree_ensemble", "logistic"}));

    CLI11_PARSE(app, argc, argv);

    RunConfig cfg = resolve_config(common);
    // flag > file > default
    if (synth_features > 0) cfg.synth.n_features = synth_features;
    if (synth_samples > 0) cfg.synth.n_samples = synth_samples;
    if (synth_informative > 0) cfg.synth.n_informative = synth_informative;
    if (collect_epochs >= 0) cfg.collector.epochs = collect_epochs;
    if (!collector_kind.empty()) {
        cfg.collector_kind = collector_kind == "rl" ? CollectorKind::rl : CollectorKind::random;
    }
    if (shuffles >= 0) cfg.augment.shuffles = shuffles;
    if (train_epochs > 0) cfg.train.epochs = train_epochs;
    if (batch_size > 0) cfg.train.batch_size = static_cast<std::size_t>(batch_size);
    if (no_variational) cfg.model.variational = false;
    if (topk > 0) cfg.search.top_k = topk;
    if (eta > 0.0) cfg.search.eta = eta;
    if (steps > 0) cfg.search.steps = steps;
    if (folds > 0) cfg.eval.folds = folds;
    if (!classifier.empty()) {
        cfg.eval.classifier =
            classifier == "logistic" ? ClassifierKind::logistic : ClassifierKind::tree_ensemble;
    }

    StageTimings timings;
    const std::string out = common.out_dir;

    if (synth_cmd->parsed()) {
        const std::string csv = stage_synth(cfg, out, timings);
        write_manifest((std::filesystem::path(out) / "manifest.json").string(), "synth", cfg, timings,
                       {{"dataset", "dataset.csv"}, {"ground_truth", "ground_truth.json"}});
        std::cout << "wrote " << csv << "\n";
        return 0;
    }
    if (collect_cmd->parsed()) {
        const TabularDataset ds = load_dataset(dataset_path);
        const std::string records = stage_collect(ds, cfg, out, timings);
        write_manifest((std::filesystem::path(out) / "manifest.json").string(), "collect", cfg,
                       timings, {{"records", "records.jsonl"}});
        std::cout << "wrote " << records << "\n";
        return 0;
    }
    if (augment_cmd->parsed()) {
        const std::string augmented = stage_augment(records_path, cfg, out, timings);
        write_manifest((std::filesystem::path(out) / "manifest.json").string(), "augment", cfg,
                       timings, {{"augmented", "augmented.jsonl"}});
        std::cout << "wrote " << augmented << "\n";
        return 0;
    }
    if (train_cmd->parsed()) {
        const TabularDataset ds = load_dataset(dataset_path);
        const std::string ckpt =
            stage_train(records_path, static_cast<int>(ds.n_features()) + 3, cfg, out, timings);
        write_manifest((std::filesystem::path(out) / "manifest.json").string(), "train", cfg, timings,
                       {{"checkpoint", "checkpoint.bin"}, {"curve", "train_curve.csv"}});
        std::cout << "wrote " << ckpt << "\n";
        return 0;
    }
    if (search_cmd->parsed()) {
        const TabularDataset ds = load_dataset(dataset_path);
        const SearchFiles files = stage_search(checkpoint_path, records_path, ds, cfg, out, timings);
        write_manifest((std::filesystem::path(out) / "manifest.json").string(), "search", cfg, timings,
                       {{"candidates", "candidates.jsonl"}, {"summary", "search.json"}});
        std::cout << "best subset size " << files.outcome.best.size() << ", measured utility "
                  << files.outcome.best_utility << "\n";
        return 0;
    }
    if (eval_cmd->parsed()) {
        const TabularDataset ds = load_dataset(dataset_path);
        if (features_arg.empty() == tokens_arg.empty()) {
            throw ConfigError("evaluate: pass exactly one of --features or --tokens");
        }
        const Vocabulary vocab = ds.vocabulary();
        TokenSequence seq;
        if (!features_arg.empty()) {
            for (int col : parse_int_list(features_arg)) seq.push_back(vocab.token_for_column(col));
        } else {
            for (int tok : parse_int_list(tokens_arg)) seq.push_back(static_cast<TokenId>(tok));
        }
        seq = canonicalize(seq);
        const MetricsReport report = evaluate_subset(ds, seq, cfg.eval);
        nlohmann::json j = metrics_to_json(report);
        j["subset"] = seq;
        j["subset_size"] = seq.size();
        std::filesystem::create_directories(out);
        std::ofstream f((std::filesystem::path(out) / "metrics.json"));
        f << j.dump(2) << "\n";
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    if (runall_cmd->parsed()) {
        const TabularDataset ds = load_dataset(dataset_path);
        const RunAllResult result = run_all(ds, cfg, out);
        std::cout << "chosen subset size " << result.chosen.size() << ", F1 "
                  << result.chosen_report.f1 << " (original F1 " << result.original_report.f1
                  << ")\nwrote " << result.results_path << "\n";
        return 0;
    }
    if (ablate_cmd->parsed()) {
        const TabularDataset ds = load_dataset(dataset_path);
        const auto arms = ablate(ablate_kind, ds, cfg, out);
        for (const auto& arm : arms) {
            std::cout << arm.name << ": f1 " << arm.report.f1 << ", auc " << arm.report.auc << "\n";
        }
        return 0;
    }
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const TokenOutOfRangeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const EmptySubsetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
