#include "camf/metrics.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "camf/error.hpp"
#include "camf/io.hpp"

namespace camf {

namespace {

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts count_ngrams(std::span<const std::string> words, std::size_t n) {
    NgramCounts counts;
    for (std::size_t i = 0; i + n <= words.size(); ++i) {
        std::vector<std::string_view> key(words.begin() + i, words.begin() + i + n);
        ++counts[key];
    }
    return counts;
}

char32_t decode_one(std::string_view s, std::size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    auto cont = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3f); };
    if (b0 < 0x80) {
        i += 1;
        return b0;
    }
    if ((b0 >> 5) == 0x6 && i + 1 < s.size()) {
        const char32_t c = ((b0 & 0x1f) << 6) | cont(1);
        i += 2;
        return c;
    }
    if ((b0 >> 4) == 0xe && i + 2 < s.size()) {
        const char32_t c = ((b0 & 0x0f) << 12) | (cont(1) << 6) | cont(2);
        i += 3;
        return c;
    }
    if ((b0 >> 3) == 0x1e && i + 3 < s.size()) {
        const char32_t c = ((b0 & 0x07) << 18) | (cont(1) << 12) | (cont(2) << 6) | cont(3);
        i += 4;
        return c;
    }
    i += 1;
    return 0xfffd;
}

void encode_one(char32_t c, std::string& out) {
    if (c < 0x80) {
        out.push_back(static_cast<char>(c));
    } else if (c < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (c >> 6)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3f)));
    } else if (c < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (c >> 12)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3f)));
    } else {
        out.push_back(static_cast<char>(0xf0 | (c >> 18)));
        out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3f)));
    }
}

char32_t to_lower(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 32;
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;       // Latin-1
    // Latin Extended-A: upper/lower pairs, even-first then odd-first runs
    if (((c >= 0x100 && c <= 0x136) || (c >= 0x14A && c <= 0x176)) && c % 2 == 0 && c != 0x130) {
        return c + 1;
    }
    if (((c >= 0x139 && c <= 0x147) || (c >= 0x179 && c <= 0x17D)) && c % 2 == 1) return c + 1;
    if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return c + 32;     // Greek
    if (c >= 0x410 && c <= 0x42F) return c + 32;                   // Cyrillic
    if (c >= 0x400 && c <= 0x40F) return c + 80;                   // Ѐ..Џ
    return c;
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::istringstream in{std::string(text)};
    for (std::string w; in >> w;) words.push_back(std::move(w));
    return words;
}

double sentence_bleu(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                     int max_n) {
    if (reference.empty()) throw InvalidInput("BLEU is undefined for an empty reference");
    if (max_n < 1) throw InvalidConfig("max_n must be at least 1");
    if (hypothesis.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const auto hyp = count_ngrams(hypothesis, static_cast<std::size_t>(n));
        const auto ref = count_ngrams(reference, static_cast<std::size_t>(n));
        std::size_t matched = 0, total = 0;
        for (const auto& [gram, c] : hyp) {
            total += c;
            const auto it = ref.find(gram);
            if (it != ref.end()) matched += std::min(c, it->second);
        }
        const double p = matched == 0
                             ? kBleuSmoothing / (static_cast<double>(total) + kBleuSmoothing)
                             : static_cast<double>(matched) / static_cast<double>(total);
        log_sum += std::log(p);
    }
    const double h = static_cast<double>(hypothesis.size());
    const double r = static_cast<double>(reference.size());
    const double bp = h < r ? std::exp(1.0 - r / h) : 1.0;
    return std::min(1.0, bp * std::exp(log_sum / max_n));
}

double sentence_bleu(std::string_view hypothesis, std::string_view reference, int max_n) {
    const auto h = split_words(hypothesis);
    const auto r = split_words(reference);
    return sentence_bleu(h, r, max_n);
}

double corpus_average(std::span<const double> scores) {
    if (scores.empty()) throw InvalidInput("average of an empty score list");
    double sum = 0.0;
    for (double s : scores) sum += s;
    return sum / static_cast<double>(scores.size());
}

std::string lowercase_utf8(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) encode_one(to_lower(decode_one(s, i)), out);
    return out;
}

LemmaMap LemmaMap::identity() {
    LemmaMap m;
    m.lowercase_fallback_ = false;
    return m;
}

LemmaMap LemmaMap::from_pairs(std::unordered_map<std::string, std::string> pairs) {
    LemmaMap m;
    m.map_ = std::move(pairs);
    return m;
}

LemmaMap LemmaMap::load_tsv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::unordered_map<std::string, std::string> pairs;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() ||
            line.find('\t', tab + 1) != std::string::npos) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 'surface<TAB>lemma'");
        }
        pairs.emplace(line.substr(0, tab), line.substr(tab + 1));
    }
    return from_pairs(std::move(pairs));
}

std::string LemmaMap::lookup(const std::string& word) const {
    const auto it = map_.find(word);
    if (it != map_.end()) return it->second;
    return lowercase_fallback_ ? lowercase_utf8(word) : word;
}

double lemma_bleu(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                  const LemmaMap& lemmas, int max_n) {
    std::vector<std::string> h, r;
    h.reserve(hypothesis.size());
    r.reserve(reference.size());
    for (const auto& w : hypothesis) h.push_back(lemmas.lookup(w));
    for (const auto& w : reference) r.push_back(lemmas.lookup(w));
    return sentence_bleu(h, r, max_n);
}

double lemma_bleu(std::string_view hypothesis, std::string_view reference, const LemmaMap& lemmas,
                  int max_n) {
    const auto h = split_words(hypothesis);
    const auto r = split_words(reference);
    return lemma_bleu(h, r, lemmas, max_n);
}

}  // namespace camf
