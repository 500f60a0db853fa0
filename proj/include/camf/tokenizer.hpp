#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace camf {

enum SpecialToken : int { kPad = 0, kBos = 1, kEos = 2, kUnk = 3, kMask = 4 };
inline constexpr int kNumSpecials = 5;

// Appended to the last symbol of every word; decoding turns it into a space.
inline constexpr std::string_view kEndOfWord = "</w>";
// Rendering of UNK in decoded text.
inline constexpr std::string_view kUnkPlaceholder = "⟨unk⟩";

// Byte-pair-encoding subword inventory. Immutable once learned.
//
// Text is split on single spaces into words (consecutive spaces produce empty
// words, encoded as a bare end-of-word symbol), each word into UTF-8 code
// points, and the end-of-word marker is attached to the final code point.
// Learning starts from the symbols observed this way and repeatedly merges
// the most frequent adjacent pair; ties go to the lexicographically smallest
// merged string.
class Vocabulary {
public:
    using Merge = std::pair<std::string, std::string>;

    Vocabulary() = default;

    // Throws InvalidConfig when target_size cannot hold the specials plus the
    // initial symbol inventory, and InvalidInput for an empty corpus.
    static Vocabulary learn(std::span<const std::string> corpus, std::size_t target_size);

    // [BOS, subword ids..., EOS]; unknown symbols map to UNK.
    std::vector<int> encode(std::string_view text) const;
    // Strips specials (UNK becomes kUnkPlaceholder). Throws IndexError for
    // ids outside the vocabulary.
    std::string decode(std::span<const int> ids) const;

    std::size_t size() const noexcept { return tokens_.size(); }
    std::size_t target_size() const noexcept { return target_size_; }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    const std::vector<Merge>& merges() const noexcept { return merges_; }
    const std::string& token(int id) const;
    std::optional<int> find(std::string_view token) const;
    // Number of symbols in the learned inventory before any merge.
    std::size_t base_symbols() const noexcept { return base_symbols_; }

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    // Stable hash of the serialized vocabulary; equal vocabularies agree.
    std::string fingerprint() const;

    bool operator==(const Vocabulary& other) const {
        return tokens_ == other.tokens_ && merges_ == other.merges_;
    }

    static const std::vector<std::string>& special_strings();

private:
    void index();
    std::vector<std::string> segment_word(std::string_view word) const;

    std::vector<std::string> tokens_;
    std::vector<Merge> merges_;
    std::size_t target_size_ = 0;
    std::size_t base_symbols_ = 0;
    std::unordered_map<std::string, int> ids_;
    std::map<Merge, std::size_t> merge_rank_;
};

// Splits UTF-8 text into code points. Invalid bytes are kept as single-byte
// units so that nothing is dropped.
std::vector<std::string> utf8_code_points(std::string_view text);

}  // namespace camf
