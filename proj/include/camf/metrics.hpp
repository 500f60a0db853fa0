#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace camf {

// Add-epsilon smoothing applied to precisions with no matching n-gram.
inline constexpr double kBleuSmoothing = 0.1;

std::vector<std::string> split_words(std::string_view text);

// Geometric mean of clipped n-gram precisions for n = 1..max_n. A precision
// with zero matches over c hypothesis n-grams becomes 0.1 / (c + 0.1), so an
// order the hypothesis is too short for contributes 1. Brevity penalty
// exp(1 - r/h) for h < r. An empty hypothesis scores 0; an empty reference
// throws InvalidInput.
double sentence_bleu(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                     int max_n = 4);
double sentence_bleu(std::string_view hypothesis, std::string_view reference, int max_n = 4);

// Throws InvalidInput for an empty list.
double corpus_average(std::span<const double> scores);

// Surface form -> lemma. Unknown forms fall back to their lowercase spelling;
// the identity map leaves every form untouched.
class LemmaMap {
public:
    static LemmaMap identity();
    // Two-column UTF-8 TSV (surface TAB lemma). Throws DataError on bad rows.
    static LemmaMap load_tsv(const std::string& path);
    static LemmaMap from_pairs(std::unordered_map<std::string, std::string> pairs);

    std::string lookup(const std::string& word) const;
    std::size_t size() const noexcept { return map_.size(); }

private:
    std::unordered_map<std::string, std::string> map_;
    bool lowercase_fallback_ = true;
};

// ASCII case folding plus the Latin-1, Greek and Cyrillic ranges.
std::string lowercase_utf8(std::string_view s);

double lemma_bleu(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                  const LemmaMap& lemmas, int max_n = 4);
double lemma_bleu(std::string_view hypothesis, std::string_view reference, const LemmaMap& lemmas,
                  int max_n = 4);

}  // namespace camf
