#include "camf/tokenizer.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "camf/error.hpp"

namespace camf {

std::vector<std::string> utf8_code_points(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto lead = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (lead >= 0xF0 && lead < 0xF8) {
            len = 4;
        } else if (lead >= 0xE0) {
            len = lead < 0xF0 ? 3 : 1;
        } else if (lead >= 0xC0) {
            len = 2;
        }
        if (i + len > text.size()) {
            len = 1;
        }
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        out.emplace_back(text.substr(i, len));
        i += len;
    }
    return out;
}

namespace {

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    if (text.empty()) {
        return words;
    }
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(' ', start);
        if (pos == std::string_view::npos) {
            words.push_back(text.substr(start));
            break;
        }
        words.push_back(text.substr(start, pos - start));
        start = pos + 1;
    }
    return words;
}

std::vector<std::string> initial_symbols(std::string_view word) {
    if (word.empty()) {
        return {std::string(kEndOfWord)};
    }
    auto cps = utf8_code_points(word);
    cps.back() += kEndOfWord;
    return cps;
}

using PairKey = std::uint64_t;

PairKey pair_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

struct Candidate {
    long count;
    std::string merged;
    std::string left;
    std::string right;
    int a;
    int b;

    bool operator<(const Candidate& o) const {
        if (count != o.count) return count > o.count;
        if (merged != o.merged) return merged < o.merged;
        if (left != o.left) return left < o.left;
        return right < o.right;
    }
};

// Incremental pair statistics over the distinct words of the corpus.
class MergeLearner {
public:
    explicit MergeLearner(const std::map<std::string, long>& word_freq) {
        for (const auto& [word, freq] : word_freq) {
            Word w;
            w.freq = freq;
            for (auto& s : initial_symbols(word)) {
                w.syms.push_back(intern(s));
            }
            words_.push_back(std::move(w));
        }
        for (std::size_t i = 0; i < words_.size(); ++i) {
            add_pairs(i, +1);
        }
    }

    std::vector<std::string> base_inventory() const {
        std::set<std::string> seen;
        for (const auto& w : words_) {
            for (int s : w.syms) seen.insert(symbols_[static_cast<std::size_t>(s)]);
        }
        return {seen.begin(), seen.end()};
    }

    // Best remaining pair, or nullopt when no pair occurs at least twice.
    std::optional<Candidate> best() const {
        if (ranking_.empty() || ranking_.begin()->count < 2) {
            return std::nullopt;
        }
        return *ranking_.begin();
    }

    void ban(const Candidate& c) {
        banned_.insert(pair_key(c.a, c.b));
        ranking_.erase(c);
    }

    void apply(const Candidate& c) {
        const PairKey key = pair_key(c.a, c.b);
        const int merged = intern(c.merged);
        const auto affected = occurrences_[key];
        std::vector<std::size_t> order(affected.begin(), affected.end());
        std::sort(order.begin(), order.end());
        for (std::size_t wi : order) {
            Word& w = words_[wi];
            add_pairs(wi, -1);
            std::vector<int> out;
            out.reserve(w.syms.size());
            for (std::size_t i = 0; i < w.syms.size(); ++i) {
                if (i + 1 < w.syms.size() && w.syms[i] == c.a && w.syms[i + 1] == c.b) {
                    out.push_back(merged);
                    ++i;
                } else {
                    out.push_back(w.syms[i]);
                }
            }
            w.syms = std::move(out);
            add_pairs(wi, +1);
        }
    }

private:
    struct Word {
        std::vector<int> syms;
        long freq = 0;
    };

    int intern(const std::string& s) {
        auto [it, inserted] = ids_.emplace(s, static_cast<int>(symbols_.size()));
        if (inserted) symbols_.push_back(s);
        return it->second;
    }

    void add_pairs(std::size_t wi, int sign) {
        const Word& w = words_[wi];
        for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
            const int a = w.syms[i], b = w.syms[i + 1];
            const PairKey key = pair_key(a, b);
            bump(key, a, b, sign * w.freq);
            if (sign > 0) {
                occurrences_[key].insert(wi);
            }
        }
        if (sign < 0) {
            for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
                occurrences_[pair_key(w.syms[i], w.syms[i + 1])].erase(wi);
            }
        }
    }

    void bump(PairKey key, int a, int b, long delta) {
        long& count = counts_[key];
        const bool banned = banned_.count(key) != 0;
        Candidate c{count, symbols_[a] + symbols_[b], symbols_[a], symbols_[b], a, b};
        if (count > 0 && !banned) {
            ranking_.erase(c);
        }
        count += delta;
        c.count = count;
        if (count > 0 && !banned) {
            ranking_.insert(std::move(c));
        }
    }

    std::vector<Word> words_;
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> ids_;
    std::unordered_map<PairKey, long> counts_;
    std::unordered_map<PairKey, std::unordered_set<std::size_t>> occurrences_;
    std::unordered_set<PairKey> banned_;
    std::set<Candidate> ranking_;
};

}  // namespace

const std::vector<std::string>& Vocabulary::special_strings() {
    static const std::vector<std::string> specials{"<pad>", "<s>", "</s>", "<unk>", "<mask>"};
    return specials;
}

Vocabulary Vocabulary::learn(std::span<const std::string> corpus, std::size_t target_size) {
    if (corpus.empty()) {
        throw InvalidInput("learn_vocab: corpus is empty");
    }
    std::map<std::string, long> word_freq;
    for (const auto& gloss : corpus) {
        for (auto w : split_words(gloss)) {
            ++word_freq[std::string(w)];
        }
    }
    MergeLearner learner(word_freq);
    const auto base = learner.base_inventory();
    if (target_size < base.size() + kNumSpecials) {
        throw InvalidConfig("vocabulary size " + std::to_string(target_size) +
                            " is below the initial inventory of " + std::to_string(base.size()) +
                            " symbols plus " + std::to_string(kNumSpecials) + " specials");
    }

    Vocabulary v;
    v.target_size_ = target_size;
    v.base_symbols_ = base.size();
    v.tokens_ = special_strings();
    v.tokens_.insert(v.tokens_.end(), base.begin(), base.end());
    std::unordered_set<std::string> present(v.tokens_.begin(), v.tokens_.end());
    const std::unordered_set<std::string> specials(special_strings().begin(),
                                                   special_strings().end());

    while (v.tokens_.size() < target_size) {
        auto cand = learner.best();
        if (!cand) {
            break;
        }
        if (specials.count(cand->merged)) {
            learner.ban(*cand);
            continue;
        }
        v.merges_.emplace_back(cand->left, cand->right);
        if (present.insert(cand->merged).second) {
            v.tokens_.push_back(cand->merged);
        }
        learner.apply(*cand);
    }
    v.index();
    return v;
}

void Vocabulary::index() {
    ids_.clear();
    merge_rank_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw DataError("vocabulary token '" + tokens_[i] + "' is duplicated");
        }
    }
    for (std::size_t r = 0; r < merges_.size(); ++r) {
        merge_rank_.emplace(merges_[r], r);
    }
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::vector<std::string> Vocabulary::segment_word(std::string_view word) const {
    auto syms = initial_symbols(word);
    // Equivalent to applying every merge in learned order: at each round the
    // lowest-ranked merge later than the previous one is applied everywhere.
    std::size_t last = 0;
    bool any = false;
    while (syms.size() > 1) {
        std::optional<std::size_t> best;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            auto it = merge_rank_.find(Merge{syms[i], syms[i + 1]});
            if (it == merge_rank_.end()) continue;
            const std::size_t r = it->second;
            if (any && r <= last) continue;
            if (!best || r < *best) best = r;
        }
        if (!best) break;
        const auto& [left, right] = merges_[*best];
        std::vector<std::string> out;
        out.reserve(syms.size());
        for (std::size_t i = 0; i < syms.size(); ++i) {
            if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
                out.push_back(left + right);
                ++i;
            } else {
                out.push_back(std::move(syms[i]));
            }
        }
        syms = std::move(out);
        last = *best;
        any = true;
    }
    return syms;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids{kBos};
    for (auto word : split_words(text)) {
        for (const auto& sym : segment_word(word)) {
            auto it = ids_.find(sym);
            ids.push_back(it == ids_.end() ? kUnk : it->second);
        }
    }
    ids.push_back(kEos);
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        const std::string& tok = token(id);
        if (id == kUnk) {
            out += kUnkPlaceholder;
            continue;
        }
        if (id < kNumSpecials) {
            continue;
        }
        if (tok.size() >= kEndOfWord.size() &&
            std::string_view(tok).substr(tok.size() - kEndOfWord.size()) == kEndOfWord) {
            out.append(tok, 0, tok.size() - kEndOfWord.size());
            out += ' ';
        } else {
            out += tok;
        }
    }
    if (!out.empty() && out.back() == ' ') {
        out.pop_back();
    }
    return out;
}

nlohmann::json Vocabulary::to_json() const {
    nlohmann::json specials = nlohmann::json::object();
    for (int i = 0; i < kNumSpecials; ++i) {
        specials[special_strings()[static_cast<std::size_t>(i)]] = i;
    }
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [a, b] : merges_) {
        merges.push_back({a, b});
    }
    return {{"specials", specials},
            {"tokens", tokens_},
            {"merges", merges},
            {"target_size", target_size_},
            {"base_symbols", base_symbols_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    try {
        Vocabulary v;
        v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
        for (const auto& m : j.at("merges")) {
            v.merges_.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
        }
        v.target_size_ = j.value("target_size", v.tokens_.size());
        v.base_symbols_ = j.value("base_symbols", std::size_t{0});
        const auto& specials = j.at("specials");
        for (int i = 0; i < kNumSpecials; ++i) {
            const auto& name = special_strings()[static_cast<std::size_t>(i)];
            if (specials.at(name).get<int>() != i ||
                v.tokens_.size() <= static_cast<std::size_t>(i) ||
                v.tokens_[static_cast<std::size_t>(i)] != name) {
                throw DataError("vocabulary special '" + name + "' is not at id " +
                                std::to_string(i));
            }
        }
        v.index();
        return v;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed vocabulary JSON: ") + e.what());
    }
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write vocabulary to " + path);
    }
    out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read vocabulary " + path);
    }
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed vocabulary file " + path + ": " + e.what());
    }
}

std::string Vocabulary::fingerprint() const {
    const std::string text = nlohmann::json{{"tokens", tokens_}, {"merges", to_json()["merges"]}}.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

}  // namespace camf
