#include "camf/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "camf/error.hpp"
#include "camf/io.hpp"
#include "camf/rng.hpp"

namespace camf {

namespace {

std::string describe(const nlohmann::json& j, std::size_t index) {
    if (j.is_object() && j.contains("id") && j["id"].is_string()) {
        return "entry \"" + j["id"].get<std::string>() + "\"";
    }
    return "entry #" + std::to_string(index);
}

std::vector<double> parse_vector(const nlohmann::json& j, const std::string& key,
                                 const std::string& who, std::size_t width) {
    const auto& v = j.at(key);
    if (!v.is_array()) throw DataError(who + ": \"" + key + "\" is not an array");
    if (v.size() != width) {
        throw DataError(who + ": \"" + key + "\" has " + std::to_string(v.size()) +
                        " values, expected " + std::to_string(width));
    }
    std::vector<double> out;
    out.reserve(width);
    for (const auto& x : v) {
        if (!x.is_number()) throw DataError(who + ": \"" + key + "\" holds a non-numeric value");
        const double d = x.get<double>();
        if (!std::isfinite(d)) throw DataError(who + ": \"" + key + "\" holds a non-finite value");
        out.push_back(d);
    }
    return out;
}

bool blank(const std::string& s) {
    return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

std::size_t word_count(const std::string& s) {
    std::istringstream in(s);
    std::size_t n = 0;
    std::string w;
    while (in >> w) ++n;
    return n;
}

}  // namespace

EmbeddingSet GlossEntry::embeddings() const {
    const std::size_t width = sgns.size();
    if (width == 0 || char_emb.size() != width || (electra && electra->size() != width)) {
        throw DataError("entry \"" + id + "\": embedding vectors differ in width");
    }
    const std::size_t m = electra ? 3 : 2;
    std::vector<double> rows;
    rows.reserve(m * width);
    rows.insert(rows.end(), sgns.begin(), sgns.end());
    rows.insert(rows.end(), char_emb.begin(), char_emb.end());
    std::vector<std::string> names{"sgns", "char"};
    if (electra) {
        rows.insert(rows.end(), electra->begin(), electra->end());
        names.push_back("electra");
    }
    return EmbeddingSet(std::move(names), Tensor({m, width}, std::move(rows)));
}

DatasetSplit parse_dataset(const nlohmann::json& j, const LoadOptions& opts) {
    if (!j.is_array()) throw DataError("dataset must be a JSON array of entries");
    if (opts.width == 0) throw InvalidConfig("embedding width must be positive");
    DatasetSplit split;
    split.entries.reserve(j.size());
    std::set<std::string> seen;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        const std::string who = describe(e, i);
        if (!e.is_object()) throw DataError(who + " is not an object");
        for (const char* key : {"id", "sgns", "char"}) {
            if (!e.contains(key)) throw DataError(who + ": missing required key \"" + key + "\"");
        }
        if (!e["id"].is_string()) throw DataError(who + ": \"id\" is not a string");
        GlossEntry entry;
        entry.id = e["id"].get<std::string>();
        if (!seen.insert(entry.id).second) throw DataError(who + ": duplicate id");
        if (e.contains("gloss")) {
            if (!e["gloss"].is_string()) throw DataError(who + ": \"gloss\" is not a string");
            entry.gloss = e["gloss"].get<std::string>();
            if (opts.require_gloss && blank(entry.gloss)) throw DataError(who + ": empty gloss");
        } else if (opts.require_gloss) {
            throw DataError(who + ": missing required key \"gloss\"");
        }
        entry.sgns = parse_vector(e, "sgns", who, opts.width);
        entry.char_emb = parse_vector(e, "char", who, opts.width);
        const bool has_electra = e.contains("electra");
        if (opts.expect_electra && *opts.expect_electra != has_electra) {
            throw DataError(who + (has_electra ? ": unexpected \"electra\" vector"
                                               : ": missing required key \"electra\""));
        }
        if (has_electra) entry.electra = parse_vector(e, "electra", who, opts.width);
        split.entries.push_back(std::move(entry));
    }
    return split;
}

DatasetSplit load_dataset(const std::string& path, const LoadOptions& opts) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": invalid JSON: " + e.what());
    }
    DatasetSplit split;
    try {
        split = parse_dataset(j, opts);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
    std::tie(split.language, split.role) = infer_language_role(path);
    return split;
}

nlohmann::json to_json(const DatasetSplit& split) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : split.entries) {
        nlohmann::json j = {{"id", e.id}, {"gloss", e.gloss}, {"sgns", e.sgns}, {"char", e.char_emb}};
        if (e.electra) j["electra"] = *e.electra;
        out.push_back(std::move(j));
    }
    return out;
}

void save_dataset(const std::string& path, const DatasetSplit& split) {
    // doubles are printed in shortest round-trip form
    write_file_atomic(path, to_json(split).dump() + "\n");
}

nlohmann::json SplitStats::to_json() const {
    return {{"entries", entries}, {"mean_gloss_length", mean_gloss_length}, {"has_electra", has_electra}};
}

SplitStats stats(const DatasetSplit& split) {
    if (split.empty()) throw InvalidInput("stats of an empty split");
    SplitStats s;
    s.entries = split.size();
    s.has_electra = true;
    std::size_t words = 0;
    for (const auto& e : split.entries) {
        words += word_count(e.gloss);
        s.has_electra = s.has_electra && e.electra.has_value();
    }
    s.mean_gloss_length = static_cast<double>(words) / static_cast<double>(s.entries);
    return s;
}

std::pair<std::string, std::string> infer_language_role(const std::string& path) {
    std::string name = std::filesystem::path(path).filename().string();
    for (const char* ext : {".gz", ".json"}) {
        if (ends_with(name, ext)) name.resize(name.size() - std::string_view(ext).size());
    }
    std::vector<std::string> parts;
    std::stringstream ss(name);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    std::string language, role;
    for (const auto& p : parts) {
        if (p == "train" || p == "dev" || p == "test" || p == "trial") {
            role = p;
        } else if (language.empty() && p.size() == 2) {
            language = p;
        }
    }
    return {language, role};
}

DatasetSplit synthetic_split(std::size_t entries, std::size_t width, std::uint64_t seed,
                             bool with_electra) {
    static const std::vector<std::string> words{
        "a",     "small", "animal", "that",  "lives", "in",    "water", "of",     "the",
        "act",   "or",    "process", "being", "made", "to",   "move",  "quickly", "person",
        "who",   "sells", "food",   "large", "tree",  "with", "red",   "fruit",  "any",
        "place", "where", "people", "meet",  "tool",  "used", "for",   "cutting", "wood"};
    Rng rng(derive_seed({seed, 0x5e7}));
    DatasetSplit split;
    split.language = "xx";
    split.role = "train";
    std::set<std::string> glosses;
    while (split.entries.size() < entries) {
        const std::size_t len = 3 + rng.below(5);
        std::string gloss;
        for (std::size_t w = 0; w < len; ++w) {
            if (w) gloss += ' ';
            gloss += words[rng.below(words.size())];
        }
        if (!glosses.insert(gloss).second) continue;
        GlossEntry e;
        e.id = "xx.train." + std::to_string(split.entries.size() + 1);
        e.gloss = gloss;
        auto draw = [&] {
            std::vector<double> v(width);
            for (double& x : v) x = rng.normal(0.0, 1.0);
            return v;
        };
        e.sgns = draw();
        e.char_emb = draw();
        if (with_electra) e.electra = draw();
        split.entries.push_back(std::move(e));
    }
    return split;
}

}  // namespace camf
