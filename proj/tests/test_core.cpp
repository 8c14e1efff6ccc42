#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "gensel/core.hpp"
#include "gensel/rng.hpp"

using namespace gensel;

namespace {

TabularDataset small_dataset(int n_features = 5, int n_samples = 8) {
    TabularDataset ds;
    ds.features = Mat(static_cast<std::size_t>(n_samples), static_cast<std::size_t>(n_features));
    Rng rng(1);
    for (auto& v : ds.features.data) v = rng.normal();
    ds.labels.resize(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) ds.labels[static_cast<std::size_t>(i)] = i % 2;
    for (int j = 0; j < n_features; ++j) ds.feature_names.push_back("f" + std::to_string(j));
    return ds;
}

TokenSequence random_raw(Rng& rng, int vocab_size) {
    TokenSequence seq(rng.below(12));
    for (auto& t : seq) t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab_size)));
    return seq;
}

} // namespace

TEST_CASE("canonicalize cuts at EOS, drops specials, dedupes, sorts") {
    // token for column j is j+3; the decoded example [b2,b6,b5,EOS,b8] keeps [b2,b5,b6]
    const TokenSequence raw{5, 9, 8, Vocabulary::EOS, 11};
    REQUIRE(canonicalize(raw) == TokenSequence{5, 8, 9});

    REQUIRE(canonicalize({Vocabulary::EOS}) == TokenSequence{});
    REQUIRE(canonicalize({6, 6, 4}) == TokenSequence{4, 6});
    REQUIRE(canonicalize({Vocabulary::PAD, Vocabulary::SOS, 7}) == TokenSequence{7});
}

TEST_CASE("canonicalize is idempotent and permutation-invariant") {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const TokenSequence raw = random_raw(rng, 16);
        const TokenSequence once = canonicalize(raw);
        REQUIRE(canonicalize(once) == once);

        // same pre-EOS multiset in another order canonicalizes identically
        TokenSequence pre;
        for (TokenId t : raw) {
            if (t == Vocabulary::EOS) break;
            pre.push_back(t);
        }
        rng.shuffle(pre);
        REQUIRE(canonicalize(pre) == once);
    }
}

TEST_CASE("is_canonical recognizes canonical sequences only") {
    const Vocabulary vocab{5};
    REQUIRE(is_canonical({3, 5, 7}, vocab));
    REQUIRE(!is_canonical({}, vocab));
    REQUIRE(!is_canonical({5, 3}, vocab));
    REQUIRE(!is_canonical({3, 3}, vocab));
    REQUIRE(!is_canonical({2, 3}, vocab));
    REQUIRE(!is_canonical({3, 9}, vocab));
}

TEST_CASE("apply_subset selects columns and keeps labels") {
    const TabularDataset ds = small_dataset();
    const TokenSequence seq{4, 6};   // columns 1 and 3
    const TabularDataset sub = apply_subset(ds, seq);
    REQUIRE(sub.n_features() == 2);
    REQUIRE(sub.labels == ds.labels);
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        REQUIRE(sub.features.at(i, 0) == ds.features.at(i, 1));
        REQUIRE(sub.features.at(i, 1) == ds.features.at(i, 3));
    }
    REQUIRE(sub.feature_names == std::vector<std::string>{"f1", "f3"});

    TokenSequence all{3, 4, 5, 6, 7};
    const TabularDataset same = apply_subset(ds, all);
    REQUIRE(same.features.data == ds.features.data);

    REQUIRE_THROWS_AS(apply_subset(ds, {10}), TokenOutOfRangeError);
    REQUIRE_THROWS_AS(apply_subset(ds, {}), EmptySubsetError);
}

TEST_CASE("dataset CSV round-trips and rejects malformed input") {
    const TabularDataset ds = small_dataset(3, 6);
    const std::string path = "test_core_ds.csv";
    save_dataset(ds, path);
    const TabularDataset loaded = load_dataset(path);
    REQUIRE(loaded.n_samples() == ds.n_samples());
    REQUIRE(loaded.n_features() == ds.n_features());
    REQUIRE(loaded.labels == ds.labels);
    REQUIRE(loaded.features.data == ds.features.data);
    REQUIRE(loaded.feature_names == ds.feature_names);
    std::remove(path.c_str());

    {
        std::ofstream f(path);
        f << "a,b,label\n1.0,oops,0\n";
    }
    REQUIRE_THROWS_WITH_AS(load_dataset(path), doctest::Contains("column 'b'"), ParseError);
    {
        std::ofstream f(path);
        f << "a,b\n1.0,2.0\n";
    }
    REQUIRE_THROWS_AS(load_dataset(path), SchemaError);
    {
        std::ofstream f(path);
        f << "a,label\nnan,0\n1.0,1\n";
    }
    REQUIRE_THROWS_AS(load_dataset(path), ParseError);
    {
        std::ofstream f(path);
        f << "a,label\n0.5,2\n1.0,1\n";
    }
    REQUIRE_THROWS_AS(load_dataset(path), ParseError);
    std::remove(path.c_str());
}

TEST_CASE("records JSONL round-trips with 6-decimal utilities") {
    const std::string path = "test_core_records.jsonl";
    const std::vector<SubsetRecord> records{{{3, 5}, 0.867}, {{9, 4, 7}, 1.0}, {{3}, 0.0}};
    save_records(records, path);

    {
        std::ifstream f(path);
        std::string line;
        std::getline(f, line);
        REQUIRE(line == "{\"tokens\":[3,5],\"utility\":0.867000}");
    }

    const auto loaded = load_records(path);
    REQUIRE(loaded.size() == 3);
    REQUIRE(loaded[0].sequence == records[0].sequence);
    REQUIRE(loaded[0].utility == 0.867);
    REQUIRE(loaded[1].utility == 1.0);

    // save(load(x)) is stable
    save_records(loaded, path);
    const auto loaded2 = load_records(path);
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        REQUIRE(loaded2[i].sequence == loaded[i].sequence);
        REQUIRE(loaded2[i].utility == loaded[i].utility);
    }
    std::remove(path.c_str());

    {
        std::ofstream f(path);
        f << "{\"tokens\":[3],\"utility\":0.5}\nnot json\n";
    }
    REQUIRE_THROWS_WITH_AS(load_records(path), doctest::Contains("line 2"), ParseError);
    {
        std::ofstream f(path);
        f << "{\"tokens\":[3],\"utility\":1.5}\n";
    }
    REQUIRE_THROWS_AS(load_records(path), ParseError);
    std::remove(path.c_str());
}

TEST_CASE("format_utility is fixed 6-decimal") {
    REQUIRE(format_utility(0.867) == "0.867000");
    REQUIRE(format_utility(1.0) == "1.000000");
    REQUIRE(format_utility(0.1234567) == "0.123457");
}
