#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "camf/model.hpp"

namespace camf {

inline constexpr std::size_t kEmbeddingWidth = 256;

struct GlossEntry {
    std::string id;
    std::string gloss;
    std::vector<double> sgns;
    std::vector<double> char_emb;
    std::optional<std::vector<double>> electra;

    // Rows sgns, char[, electra].
    EmbeddingSet embeddings() const;
    bool operator==(const GlossEntry&) const = default;
};

struct DatasetSplit {
    std::vector<GlossEntry> entries;
    std::string language;  // e.g. "en", inferred from "en.train.json"
    std::string role;      // train, dev, test, or empty when unknown

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }
    bool operator==(const DatasetSplit&) const = default;
};

struct LoadOptions {
    // When set, every entry must (true) or must not (false) carry "electra".
    std::optional<bool> expect_electra;
    std::size_t width = kEmbeddingWidth;
    // Test splits of the shared task ship without glosses.
    bool require_gloss = true;
};

// Parses a JSON array (optionally gzip-compressed by extension). Every
// malformed entry yields a DataError naming its id.
DatasetSplit load_dataset(const std::string& path, const LoadOptions& opts = {});
DatasetSplit parse_dataset(const nlohmann::json& j, const LoadOptions& opts = {});

nlohmann::json to_json(const DatasetSplit& split);
void save_dataset(const std::string& path, const DatasetSplit& split);

struct SplitStats {
    std::size_t entries = 0;
    double mean_gloss_length = 0.0;  // whitespace tokens
    bool has_electra = false;        // every entry carries electra
    nlohmann::json to_json() const;
};

// Throws InvalidInput for an empty split.
SplitStats stats(const DatasetSplit& split);

// Language and role from names like "en.train.json" or "ru.dev.json.gz".
std::pair<std::string, std::string> infer_language_role(const std::string& path);

// Deterministic toy data: distinct random glosses over a small word list
// with normally distributed vectors of the given width.
DatasetSplit synthetic_split(std::size_t entries, std::size_t width, std::uint64_t seed,
                             bool with_electra = false);

}  // namespace camf
