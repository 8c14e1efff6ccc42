#include "gensel/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace gensel {

TokenSequence canonicalize(const TokenSequence& raw) {
    TokenSequence out;
    out.reserve(raw.size());
    for (TokenId t : raw) {
        if (t == Vocabulary::EOS) break;
        if (t >= Vocabulary::FIRST_FEATURE) out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

bool is_canonical(const TokenSequence& seq, const Vocabulary& vocab) {
    if (seq.empty() || seq.size() > static_cast<std::size_t>(vocab.n_features)) return false;
    TokenId prev = -1;
    for (TokenId t : seq) {
        if (!vocab.is_feature(t) || t <= prev) return false;
        prev = t;
    }
    return true;
}

TabularDataset apply_subset(const TabularDataset& ds, const TokenSequence& seq) {
    if (seq.empty()) throw EmptySubsetError("apply_subset: empty subset");
    const Vocabulary vocab = ds.vocabulary();
    std::vector<int> cols;
    cols.reserve(seq.size());
    for (TokenId t : seq) {
        if (!vocab.is_feature(t)) {
            throw TokenOutOfRangeError("apply_subset: token " + std::to_string(t) +
                                       " outside feature range [3, " + std::to_string(vocab.size()) + ")");
        }
        cols.push_back(vocab.column_for_token(t));
    }
    TabularDataset out;
    out.features = Mat(ds.n_samples(), cols.size());
    out.labels = ds.labels;
    out.feature_names.reserve(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
        out.feature_names.push_back(ds.feature_names[cols[j]]);
        for (std::size_t i = 0; i < ds.n_samples(); ++i) {
            out.features.at(i, j) = ds.features.at(i, cols[j]);
        }
    }
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no, const std::string& col_name) {
    double value = 0.0;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end || cell.empty()) {
        throw ParseError("line " + std::to_string(line_no) + ", column '" + col_name +
                         "': non-numeric cell '" + cell + "'");
    }
    if (!std::isfinite(value)) {
        throw ParseError("line " + std::to_string(line_no) + ", column '" + col_name +
                         "': non-finite value rejected");
    }
    return value;
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

} // namespace

std::string format_utility(double utility) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", utility);
    return buf;
}

TabularDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty dataset file: " + path);
    const std::vector<std::string> header = split_csv_line(line);

    int label_col = -1;
    std::vector<std::string> names;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == "label") {
            if (label_col >= 0) throw SchemaError("duplicate 'label' column");
            label_col = static_cast<int>(j);
        } else {
            names.push_back(header[j]);
        }
    }
    if (label_col < 0) throw SchemaError("dataset is missing a 'label' column: " + path);
    if (names.empty()) throw SchemaError("dataset has no feature columns: " + path);

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
        }
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const double v = parse_cell(cells[j], line_no, header[j]);
            if (static_cast<int>(j) == label_col) {
                if (v != 0.0 && v != 1.0) {
                    throw ParseError("line " + std::to_string(line_no) + ": label must be 0 or 1, got '" +
                                     cells[j] + "'");
                }
                labels.push_back(static_cast<int>(v));
            } else {
                values.push_back(v);
            }
        }
    }
    if (labels.size() < 2) throw SchemaError("dataset needs at least 2 samples: " + path);

    TabularDataset ds;
    ds.feature_names = std::move(names);
    ds.labels = std::move(labels);
    ds.features = Mat(ds.labels.size(), ds.feature_names.size());
    ds.features.data = std::move(values);
    return ds;
}

void save_dataset(const TabularDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write dataset file: " + path);
    for (const auto& name : ds.feature_names) out << name << ',';
    out << "label\n";
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        for (std::size_t j = 0; j < ds.n_features(); ++j) {
            out << format_double(ds.features.at(i, j)) << ',';
        }
        out << ds.labels[i] << '\n';
    }
}

void save_records(const std::vector<SubsetRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write records file: " + path);
    for (const auto& rec : records) {
        out << "{\"tokens\":[";
        for (std::size_t i = 0; i < rec.sequence.size(); ++i) {
            if (i) out << ',';
            out << rec.sequence[i];
        }
        out << "],\"utility\":" << format_utility(rec.utility) << "}\n";
    }
}

std::vector<SubsetRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open records file: " + path);
    std::vector<SubsetRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("tokens") || !j.contains("utility") ||
            !j["tokens"].is_array() || !j["utility"].is_number()) {
            throw ParseError("records line " + std::to_string(line_no) + ": malformed record");
        }
        SubsetRecord rec;
        for (const auto& t : j["tokens"]) {
            if (!t.is_number_integer()) {
                throw ParseError("records line " + std::to_string(line_no) + ": non-integer token");
            }
            rec.sequence.push_back(t.get<TokenId>());
        }
        rec.utility = j["utility"].get<double>();
        if (rec.sequence.empty()) {
            throw ParseError("records line " + std::to_string(line_no) + ": empty token sequence");
        }
        if (rec.utility < 0.0 || rec.utility > 1.0) {
            throw ParseError("records line " + std::to_string(line_no) + ": utility outside [0, 1]");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

} // namespace gensel
