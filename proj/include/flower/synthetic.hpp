#pragma once

// Seeded synthetic interaction logs with Zipf-distributed item popularity.
// Item index equals popularity rank (item 0 is drawn most often).

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "flower/catalog.hpp"
#include "flower/common.hpp"

namespace flower {

struct ZipfSpec {
    int items = 100;
    int users = 50;
    long interactions = 6000;
    double exponent = 1.0;
    uint64_t seed = 7;
    int min_words = 1;
    int max_words = 6;
};

namespace detail {

inline std::string pseudo_word(Rng& rng) {
    static const char* consonants = "bdfgklmnprstvz";
    static const char* vowels = "aeiou";
    int syllables = 2 + static_cast<int>(rng.next_below(2));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
        w += consonants[rng.next_below(14)];
        w += vowels[rng.next_below(5)];
    }
    w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    return w;
}

inline std::string pseudo_title(Rng& rng, int min_words, int max_words) {
    int n = min_words + static_cast<int>(rng.next_below(
                            static_cast<size_t>(max_words - min_words + 1)));
    std::string t;
    for (int i = 0; i < n; ++i) {
        if (i) t += ' ';
        t += pseudo_word(rng);
    }
    return t;
}

}  // namespace detail

// Distinct pseudo-titles; word length varies so titles differ in token count.
inline std::vector<std::string> make_titles(int count, Rng& rng, int min_words = 1,
                                            int max_words = 6) {
    std::set<std::string> seen;
    std::vector<std::string> titles;
    while (static_cast<int>(titles.size()) < count) {
        std::string t = detail::pseudo_title(rng, min_words, max_words);
        if (seen.insert(t).second) titles.push_back(std::move(t));
    }
    return titles;
}

inline std::vector<InteractionRecord> make_zipf_log(const ZipfSpec& spec) {
    if (spec.items < 1 || spec.users < 1 || spec.interactions < 1)
        fail(ErrorCode::Config, "make_zipf: items, users, interactions must be >= 1");
    if (!(spec.exponent >= 0.0)) fail(ErrorCode::Config, "make_zipf: exponent must be >= 0");

    Rng rng(spec.seed);
    auto titles = make_titles(spec.items, rng, spec.min_words, spec.max_words);

    std::vector<double> cum(spec.items);
    double total = 0.0;
    for (int r = 0; r < spec.items; ++r) {
        total += 1.0 / std::pow(static_cast<double>(r + 1), spec.exponent);
        cum[r] = total;
    }

    auto item_id = [](int rank) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "it_%04d", rank);
        return std::string(buf);
    };
    auto user_id = [](int u) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "u_%04d", u);
        return std::string(buf);
    };

    std::vector<InteractionRecord> log;
    log.reserve(spec.interactions);
    for (long i = 0; i < spec.interactions; ++i) {
        double u = rng.next_double() * total;
        int rank = static_cast<int>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        if (rank >= spec.items) rank = spec.items - 1;
        InteractionRecord rec;
        rec.user_id = user_id(static_cast<int>(rng.next_below(spec.users)));
        rec.item_id = item_id(rank);
        rec.title = titles[rank];
        rec.timestamp = 1000 + i;
        log.push_back(std::move(rec));
    }
    return log;
}

inline void save_log_jsonl(const std::vector<InteractionRecord>& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot write file: " + path);
    for (const auto& r : log) {
        nlohmann::json j;
        j["user"] = r.user_id;
        j["item"] = r.item_id;
        j["title"] = r.title;
        j["ts"] = r.timestamp;
        out << j.dump() << "\n";
    }
}

}  // namespace flower
