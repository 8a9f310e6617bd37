#pragma once

// Disk formats: dataset/catalog JSONL manifests, recommendation JSONL, train
// log and metrics CSV, and the flat key=value config echo. Doubles are printed
// with shortest round-trip formatting via nlohmann, or 17 significant digits
// in CSV, so replays are byte-identical.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flower/catalog.hpp"
#include "flower/common.hpp"
#include "flower/decode.hpp"
#include "flower/eval.hpp"
#include "flower/training.hpp"

namespace flower {

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    if (!std::isfinite(v)) return v != v ? "nan" : (v > 0 ? "inf" : "-inf");
    return nlohmann::json(v).dump();
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot write file: " + path);
    return out;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open file: " + path);
    return in;
}

inline nlohmann::json parse_line(const std::string& line, const std::string& path, size_t row) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
        fail(ErrorCode::Parse, path + " row " + std::to_string(row) + ": invalid json");
    return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// catalog manifest: one item per line (id, title, tokens, frequency, group)
// ---------------------------------------------------------------------------

inline void save_catalog_manifest(const Catalog& catalog, const GroupAssignment& groups,
                                  const std::string& path) {
    auto out = detail::open_out(path);
    for (const auto& [item, ci] : catalog.items) {
        nlohmann::json j;
        j["id"] = item;
        j["title"] = ci.title;
        j["tokens"] = ci.tokens;
        j["frequency"] = ci.frequency;
        j["group"] = groups.group_of.at(item);
        out << j.dump() << "\n";
    }
}

inline Catalog load_catalog_manifest(const std::string& path, TokenizerId tokenizer_id) {
    auto in = detail::open_in(path);
    Catalog cat;
    cat.tokenizer_id = tokenizer_id;
    std::string line;
    size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, path, row);
        CatalogItem ci;
        ci.title = j.at("title").get<std::string>();
        ci.tokens = j.at("tokens").get<std::vector<std::string>>();
        ci.frequency = j.at("frequency").get<int64_t>();
        cat.items.emplace(j.at("id").get<std::string>(), std::move(ci));
    }
    return cat;
}

// ---------------------------------------------------------------------------
// dataset manifest
// ---------------------------------------------------------------------------

struct DataMeta {
    TokenizerId tokenizer_id = TokenizerId::Word;
    int max_history_len = 10;
    int k_core = 1;
    int num_groups = 8;
};

inline void save_data_dir(const Dataset& ds, const Catalog& cat, const GroupAssignment& groups,
                          const DataMeta& meta, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_catalog_manifest(cat, groups, dir + "/catalog.jsonl");

    auto exout = detail::open_out(dir + "/dataset.jsonl");
    auto dump_split = [&](const std::vector<Example>& split, const char* name) {
        for (const auto& ex : split) {
            nlohmann::json j;
            j["split"] = name;
            j["user"] = ex.user_id;
            j["history"] = ex.history;
            j["target"] = ex.target;
            exout << j.dump() << "\n";
        }
    };
    dump_split(ds.train, "train");
    dump_split(ds.valid, "valid");
    dump_split(ds.test, "test");

    auto sqout = detail::open_out(dir + "/user_train_seqs.jsonl");
    for (const auto& [user, items] : ds.train_user_items) {
        nlohmann::json j;
        j["user"] = user;
        j["items"] = items;
        sqout << j.dump() << "\n";
    }

    nlohmann::json m;
    m["tokenizer"] = tokenizer_name(meta.tokenizer_id);
    m["max_history_len"] = meta.max_history_len;
    m["k_core"] = meta.k_core;
    m["num_groups"] = meta.num_groups;
    m["counts"] = {{"train", ds.train.size()}, {"valid", ds.valid.size()}, {"test", ds.test.size()}};
    detail::open_out(dir + "/meta.json") << m.dump(2) << "\n";
}

struct LoadedData {
    Dataset dataset;
    Catalog catalog;
    GroupAssignment groups;
    DataMeta meta;
};

inline LoadedData load_data_dir(const std::string& dir) {
    LoadedData d;

    auto min = detail::open_in(dir + "/meta.json");
    nlohmann::json m = nlohmann::json::parse(min, nullptr, false);
    if (m.is_discarded()) fail(ErrorCode::Parse, dir + "/meta.json: invalid json");
    d.meta.tokenizer_id = tokenizer_from_name(m.at("tokenizer").get<std::string>());
    d.meta.max_history_len = m.at("max_history_len").get<int>();
    d.meta.k_core = m.at("k_core").get<int>();
    d.meta.num_groups = m.at("num_groups").get<int>();

    d.catalog = load_catalog_manifest(dir + "/catalog.jsonl", d.meta.tokenizer_id);
    d.dataset.max_history_len = d.meta.max_history_len;
    for (const auto& [item, ci] : d.catalog.items) d.dataset.titles[item] = ci.title;

    {
        auto in = detail::open_in(dir + "/dataset.jsonl");
        std::string line;
        size_t row = 0;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            auto j = detail::parse_line(line, dir + "/dataset.jsonl", row);
            Example ex;
            ex.user_id = j.at("user").get<std::string>();
            ex.history = j.at("history").get<std::vector<std::string>>();
            ex.target = j.at("target").get<std::string>();
            const std::string split = j.at("split").get<std::string>();
            if (split == "train") d.dataset.train.push_back(std::move(ex));
            else if (split == "valid") d.dataset.valid.push_back(std::move(ex));
            else if (split == "test") d.dataset.test.push_back(std::move(ex));
            else fail(ErrorCode::Parse, dir + "/dataset.jsonl row " + std::to_string(row) +
                                            ": unknown split '" + split + "'");
        }
    }
    {
        auto in = detail::open_in(dir + "/user_train_seqs.jsonl");
        std::string line;
        size_t row = 0;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            auto j = detail::parse_line(line, dir + "/user_train_seqs.jsonl", row);
            d.dataset.train_user_items[j.at("user").get<std::string>()] =
                j.at("items").get<std::vector<std::string>>();
        }
    }

    // Rebuild group assignment from the manifest so downstream commands agree
    // with ingest exactly.
    d.groups.num_groups = d.meta.num_groups;
    d.groups.history_share.assign(d.meta.num_groups, 0.0);
    {
        auto in = detail::open_in(dir + "/catalog.jsonl");
        std::string line;
        size_t row = 0;
        std::vector<int64_t> mass(d.meta.num_groups, 0);
        int64_t total = 0;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            auto j = detail::parse_line(line, dir + "/catalog.jsonl", row);
            int g = j.at("group").get<int>();
            d.groups.group_of[j.at("id").get<std::string>()] = g;
            mass[g] += j.at("frequency").get<int64_t>();
            total += j.at("frequency").get<int64_t>();
        }
        for (int g = 0; g < d.meta.num_groups; ++g) {
            d.groups.history_share[g] =
                total > 0 ? static_cast<double>(mass[g]) / static_cast<double>(total)
                          : 1.0 / static_cast<double>(d.meta.num_groups);
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// recommendations: one line per evaluated example
// ---------------------------------------------------------------------------

struct RecLine {
    std::string user;
    size_t example_index = 0;  // position within the evaluated split
    std::vector<std::string> items;
    std::vector<double> scores;
};

inline void save_recs(const std::vector<RecLine>& recs, const nlohmann::json& settings,
                      const std::string& path) {
    auto out = detail::open_out(path);
    for (const auto& r : recs) {
        nlohmann::json j;
        j["user"] = r.user;
        j["idx"] = r.example_index;
        j["items"] = r.items;
        j["scores"] = r.scores;
        j["settings"] = settings;
        out << j.dump() << "\n";
    }
}

inline std::vector<RecLine> load_recs(const std::string& path, nlohmann::json* settings = nullptr) {
    auto in = detail::open_in(path);
    std::vector<RecLine> recs;
    std::string line;
    size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, path, row);
        RecLine r;
        r.user = j.at("user").get<std::string>();
        r.example_index = j.at("idx").get<size_t>();
        r.items = j.at("items").get<std::vector<std::string>>();
        r.scores = j.at("scores").get<std::vector<double>>();
        if (settings && row == 1) *settings = j.at("settings");
        recs.push_back(std::move(r));
    }
    return recs;
}

// ---------------------------------------------------------------------------
// csv + reports
// ---------------------------------------------------------------------------

inline void save_train_log(const std::vector<EpochLogRow>& log, const std::string& path) {
    auto out = detail::open_out(path);
    out << "epoch,step,sft_loss,subtb_loss,total,valid_ndcg5\n";
    for (const auto& r : log) {
        out << r.epoch << "," << r.step << "," << format_double(r.sft) << ","
            << format_double(r.subtb) << "," << format_double(r.total) << ","
            << format_double(r.valid_ndcg5) << "\n";
    }
}

inline std::string metrics_csv_header() {
    return "k,hr,ndcg,dgu,mgu,entropy_h,ttr,"
           "title_kl_t_r,title_kl_r_t,title_js,token_kl_t_r,token_kl_r_t,token_js";
}

inline std::string metrics_csv_row(const MetricsReport& r) {
    std::ostringstream os;
    os << r.k << "," << format_double(r.hr) << "," << format_double(r.ndcg) << ","
       << format_double(r.dgu) << "," << format_double(r.mgu) << ","
       << format_double(r.entropy_h) << "," << format_double(r.ttr) << ","
       << format_double(r.title_mismatch.kl_t_r) << "," << format_double(r.title_mismatch.kl_r_t)
       << "," << format_double(r.title_mismatch.js) << ","
       << format_double(r.token_mismatch.kl_t_r) << "," << format_double(r.token_mismatch.kl_r_t)
       << "," << format_double(r.token_mismatch.js);
    return os.str();
}

inline void save_metrics(const MetricsReport& r, const std::string& csv_path,
                         const std::string& table_path, const std::string& groups_path) {
    detail::open_out(csv_path) << metrics_csv_header() << "\n" << metrics_csv_row(r) << "\n";

    auto tbl = detail::open_out(table_path);
    tbl << std::setprecision(6) << std::fixed;
    tbl << "metric          value\n";
    tbl << "HR@" << r.k << "            " << r.hr << "\n";
    tbl << "NDCG@" << r.k << "          " << r.ndcg << "\n";
    tbl << "DGU@" << r.k << "           " << r.dgu << "\n";
    tbl << "MGU@" << r.k << "           " << r.mgu << "\n";
    tbl << "H (bits)        " << r.entropy_h << "\n";
    tbl << "TTR             " << r.ttr << "\n";
    tbl << "Title KL(T||R)  " << r.title_mismatch.kl_t_r << "\n";
    tbl << "Title KL(R||T)  " << r.title_mismatch.kl_r_t << "\n";
    tbl << "Title JS        " << r.title_mismatch.js << "\n";
    tbl << "Token KL(T||R)  " << r.token_mismatch.kl_t_r << "\n";
    tbl << "Token KL(R||T)  " << r.token_mismatch.kl_r_t << "\n";
    tbl << "Token JS        " << r.token_mismatch.js << "\n";

    auto gout = detail::open_out(groups_path);
    gout << "group,h_g,r_g\n";
    for (size_t g = 0; g < r.groups.historical.size(); ++g) {
        gout << g << "," << format_double(r.groups.historical[g]) << ","
             << format_double(r.groups.recommended[g]) << "\n";
    }
}

inline void save_config_echo(const std::vector<std::pair<std::string, std::string>>& kv,
                             const std::string& path) {
    auto out = detail::open_out(path);
    out << "# archived run configuration\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
}

}  // namespace flower
