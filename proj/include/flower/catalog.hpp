#pragma once

// Interaction-log ingestion, k-core preprocessing, chronological splitting,
// title tokenization, item frequency counting, and popularity grouping.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "flower/common.hpp"

namespace flower {

struct InteractionRecord {
    std::string user_id;
    std::string item_id;
    std::string title;
    int64_t timestamp = 0;
};

enum class LogFormat { Csv, Jsonl };
enum class TokenizerId { Word, Char };

inline std::string tokenizer_name(TokenizerId t) {
    return t == TokenizerId::Word ? "word" : "char";
}

inline TokenizerId tokenizer_from_name(const std::string& name) {
    if (name == "word") return TokenizerId::Word;
    if (name == "char") return TokenizerId::Char;
    fail(ErrorCode::Config, "unknown tokenizer: " + name);
}

// One next-item prediction example: predict `target` given `history`.
struct Example {
    std::string user_id;
    std::vector<std::string> history;  // most recent last, truncated to max_history_len
    std::string target;
};

struct Dataset {
    std::vector<Example> train, valid, test;
    int max_history_len = 10;
    // Per-user train-split item sequences in chronological order. This is the
    // source for item frequencies and co-occurrence preference fitting.
    std::map<std::string, std::vector<std::string>> train_user_items;
    std::map<std::string, std::string> titles;  // item_id -> title (first seen)
};

struct CatalogItem {
    std::string title;
    std::vector<std::string> tokens;
    int64_t frequency = 0;  // occurrences in train-split interactions
};

struct Catalog {
    std::map<std::string, CatalogItem> items;  // ordered by item_id
    TokenizerId tokenizer_id = TokenizerId::Word;
};

struct GroupAssignment {
    std::map<std::string, int> group_of;
    int num_groups = 0;
    std::vector<double> history_share;  // h_g over train interaction mass
};

struct IngestStats {
    size_t rows_total = 0;
    size_t rows_malformed = 0;  // parsed but violating record invariants; skipped
};

// ---------------------------------------------------------------------------
// tokenize
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_space_byte(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && is_space_byte(s[b])) ++b;
    while (e > b && is_space_byte(s[e - 1])) --e;
    return s.substr(b, e - b);
}

// Decodes the next UTF-8 scalar starting at s[i]; on malformed input the
// single byte is taken as-is.
inline std::string utf8_next(const std::string& s, size_t& i) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if ((c & 0x80u) == 0x00u) len = 1;
    else if ((c & 0xE0u) == 0xC0u) len = 2;
    else if ((c & 0xF0u) == 0xE0u) len = 3;
    else if ((c & 0xF8u) == 0xF0u) len = 4;
    if (i + len > s.size()) len = 1;
    for (size_t k = 1; k < len; ++k) {
        if ((static_cast<unsigned char>(s[i + k]) & 0xC0u) != 0x80u) {
            len = 1;
            break;
        }
    }
    std::string out = s.substr(i, len);
    i += len;
    return out;
}

}  // namespace detail

// Word mode splits on runs of whitespace (case preserved); char mode emits one
// token per unicode scalar, including spaces.
inline std::vector<std::string> tokenize(const std::string& title, TokenizerId tokenizer_id) {
    if (title.empty()) fail(ErrorCode::Domain, "tokenize: empty title");
    std::vector<std::string> tokens;
    if (tokenizer_id == TokenizerId::Word) {
        size_t i = 0;
        while (i < title.size()) {
            while (i < title.size() && detail::is_space_byte(title[i])) ++i;
            size_t b = i;
            while (i < title.size() && !detail::is_space_byte(title[i])) ++i;
            if (i > b) tokens.push_back(title.substr(b, i - b));
        }
    } else {
        size_t i = 0;
        while (i < title.size()) tokens.push_back(detail::utf8_next(title, i));
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// ingest_interactions
// ---------------------------------------------------------------------------

namespace detail {

// Minimal RFC-4180 CSV row splitter (quotes, doubled-quote escapes).
inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace detail

// Reads a CSV (header `user,item,title,timestamp`) or JSONL (keys
// user/item/title/ts) interaction log. Rows missing a required field are a
// hard parse error naming the row; rows that parse but violate record
// invariants (blank title, negative timestamp) are skipped and counted.
inline std::vector<InteractionRecord> ingest_interactions(const std::string& path,
                                                          LogFormat format,
                                                          IngestStats* stats = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open input file: " + path);

    std::vector<InteractionRecord> records;
    IngestStats local;
    std::string line;
    size_t row = 0;

    if (format == LogFormat::Csv) {
        if (!std::getline(in, line)) {
            if (stats) *stats = local;
            return records;  // empty file -> empty list
        }
        line = detail::strip_cr(line);
        auto header = detail::split_csv_row(line);
        std::map<std::string, size_t> col;
        for (size_t i = 0; i < header.size(); ++i) col[detail::trim(header[i])] = i;
        for (const char* need : {"user", "item", "title", "timestamp"}) {
            if (!col.count(need))
                fail(ErrorCode::Parse, std::string("csv header missing column '") + need + "'");
        }
        while (std::getline(in, line)) {
            ++row;
            line = detail::strip_cr(line);
            if (line.empty()) continue;
            auto fields = detail::split_csv_row(line);
            size_t needed = std::max({col["user"], col["item"], col["title"], col["timestamp"]});
            if (fields.size() <= needed)
                fail(ErrorCode::Parse, "csv row " + std::to_string(row) + ": missing fields");
            InteractionRecord r;
            r.user_id = fields[col["user"]];
            r.item_id = fields[col["item"]];
            r.title = fields[col["title"]];
            try {
                r.timestamp = std::stoll(fields[col["timestamp"]]);
            } catch (const std::exception&) {
                fail(ErrorCode::Parse, "csv row " + std::to_string(row) + ": bad timestamp");
            }
            ++local.rows_total;
            if (detail::trim(r.title).empty() || r.timestamp < 0) {
                ++local.rows_malformed;
                continue;
            }
            records.push_back(std::move(r));
        }
    } else {
        while (std::getline(in, line)) {
            ++row;
            line = detail::strip_cr(line);
            if (detail::trim(line).empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                fail(ErrorCode::Parse, "jsonl row " + std::to_string(row) + ": invalid json");
            for (const char* need : {"user", "item", "title", "ts"}) {
                if (!j.contains(need))
                    fail(ErrorCode::Parse,
                         "jsonl row " + std::to_string(row) + ": missing field '" + need + "'");
            }
            if (!j["user"].is_string() || !j["item"].is_string() || !j["title"].is_string() ||
                !j["ts"].is_number())
                fail(ErrorCode::Parse, "jsonl row " + std::to_string(row) + ": wrong field type");
            InteractionRecord r;
            r.user_id = j["user"].get<std::string>();
            r.item_id = j["item"].get<std::string>();
            r.title = j["title"].get<std::string>();
            r.timestamp = j["ts"].get<int64_t>();
            ++local.rows_total;
            if (detail::trim(r.title).empty() || r.timestamp < 0) {
                ++local.rows_malformed;
                continue;
            }
            records.push_back(std::move(r));
        }
    }
    if (stats) *stats = local;
    return records;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

// Iterative k-core filter, then a chronological 8:1:1 split over interactions
// sorted by (timestamp, user_id, item_id). Each surviving interaction becomes
// one example whose history is the user's preceding items, truncated to the
// most recent max_len.
inline Dataset preprocess(const std::vector<InteractionRecord>& records, int k_core, int max_len,
                          std::optional<std::pair<int64_t, int64_t>> time_window = std::nullopt) {
    if (k_core < 1) fail(ErrorCode::Config, "k_core must be >= 1");
    if (max_len < 1) fail(ErrorCode::Config, "max_len must be >= 1");

    std::vector<InteractionRecord> kept;
    kept.reserve(records.size());
    for (const auto& r : records) {
        if (time_window && (r.timestamp < time_window->first || r.timestamp > time_window->second))
            continue;
        kept.push_back(r);
    }

    // k-core to fixpoint: drop interactions of users/items below k_core,
    // recount, repeat.
    for (;;) {
        std::unordered_map<std::string, int> ucount, icount;
        for (const auto& r : kept) {
            ++ucount[r.user_id];
            ++icount[r.item_id];
        }
        std::vector<InteractionRecord> next;
        next.reserve(kept.size());
        for (auto& r : kept) {
            if (ucount[r.user_id] >= k_core && icount[r.item_id] >= k_core)
                next.push_back(std::move(r));
        }
        bool stable = next.size() == kept.size();
        kept = std::move(next);
        if (stable) break;
    }
    if (kept.empty()) fail(ErrorCode::Domain, "empty dataset after preprocessing");

    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return std::tie(a.timestamp, a.user_id, a.item_id) <
               std::tie(b.timestamp, b.user_id, b.item_id);
    });

    const size_t n = kept.size();
    const size_t train_end = n * 8 / 10;
    const size_t valid_end = n * 9 / 10;

    Dataset ds;
    ds.max_history_len = max_len;

    std::map<std::string, std::vector<std::string>> full_seq;  // per-user, chrono order
    for (size_t idx = 0; idx < n; ++idx) {
        const auto& r = kept[idx];
        if (!ds.titles.count(r.item_id)) ds.titles[r.item_id] = r.title;

        auto& seq = full_seq[r.user_id];
        Example ex;
        ex.user_id = r.user_id;
        ex.target = r.item_id;
        size_t start = seq.size() > static_cast<size_t>(max_len) ? seq.size() - max_len : 0;
        ex.history.assign(seq.begin() + start, seq.end());

        if (idx < train_end) {
            ds.train.push_back(std::move(ex));
            ds.train_user_items[r.user_id].push_back(r.item_id);
        } else if (idx < valid_end) {
            ds.valid.push_back(std::move(ex));
        } else {
            ds.test.push_back(std::move(ex));
        }
        seq.push_back(r.item_id);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// build_catalog
// ---------------------------------------------------------------------------

// Frequencies count train-split interactions only; items seen only in
// valid/test enter with frequency 0. Two distinct items with identical token
// sequences are a hard error: flow mass must be attributable to one item.
inline Catalog build_catalog(const Dataset& dataset, TokenizerId tokenizer_id) {
    if (dataset.train.empty()) fail(ErrorCode::Domain, "build_catalog: train split is empty");

    Catalog cat;
    cat.tokenizer_id = tokenizer_id;
    for (const auto& [item, title] : dataset.titles) {
        CatalogItem ci;
        ci.title = title;
        ci.tokens = tokenize(title, tokenizer_id);
        cat.items.emplace(item, std::move(ci));
    }
    for (const auto& [user, seq] : dataset.train_user_items) {
        for (const auto& item : seq) ++cat.items.at(item).frequency;
    }

    std::map<std::vector<std::string>, std::string> seen;
    for (const auto& [item, ci] : cat.items) {
        auto [it, inserted] = seen.emplace(ci.tokens, item);
        if (!inserted)
            fail(ErrorCode::Domain, "duplicate token sequence for items '" + it->second +
                                        "' and '" + item + "'");
    }
    return cat;
}

// ---------------------------------------------------------------------------
// assign_popularity_groups
// ---------------------------------------------------------------------------

// Equal-sized bins over items sorted by descending frequency (ties by
// item_id); the remainder goes to the most popular bins. h_g is each group's
// share of train interaction mass.
inline GroupAssignment assign_popularity_groups(const Catalog& catalog, int num_groups) {
    if (num_groups < 1) fail(ErrorCode::Config, "num_groups must be >= 1");
    const size_t n = catalog.items.size();
    if (n == 0) fail(ErrorCode::Domain, "assign_popularity_groups: empty catalog");
    if (static_cast<size_t>(num_groups) > n)
        fail(ErrorCode::Config, "num_groups exceeds catalog size");

    std::vector<std::pair<std::string, int64_t>> order;
    order.reserve(n);
    for (const auto& [item, ci] : catalog.items) order.emplace_back(item, ci.frequency);
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    GroupAssignment ga;
    ga.num_groups = num_groups;
    ga.history_share.assign(num_groups, 0.0);

    const size_t base = n / num_groups;
    const size_t rem = n % num_groups;
    size_t idx = 0;
    int64_t total_mass = 0;
    std::vector<int64_t> group_mass(num_groups, 0);
    for (int g = 0; g < num_groups; ++g) {
        size_t size_g = base + (static_cast<size_t>(g) < rem ? 1 : 0);
        for (size_t k = 0; k < size_g; ++k, ++idx) {
            ga.group_of[order[idx].first] = g;
            group_mass[g] += order[idx].second;
            total_mass += order[idx].second;
        }
    }
    for (int g = 0; g < num_groups; ++g) {
        if (total_mass > 0) {
            ga.history_share[g] = static_cast<double>(group_mass[g]) / total_mass;
        } else {
            // degenerate all-zero catalog: fall back to item-count shares
            size_t size_g = base + (static_cast<size_t>(g) < rem ? 1 : 0);
            ga.history_share[g] = static_cast<double>(size_g) / n;
        }
    }
    return ga;
}

}  // namespace flower
