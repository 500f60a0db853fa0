#include "camf/inference.hpp"

#include <algorithm>
#include <cmath>

#include "camf/error.hpp"
#include "camf/io.hpp"
#include "camf/parallel.hpp"

namespace camf {

namespace {

bool is_candidate(int id) { return id == kEos || id >= kNumSpecials; }

}  // namespace

ModelSource::ModelSource(const ParamStore& params, const ModelConfig& cfg,
                         const EmbeddingSet* embeddings)
    : decoder_(params, cfg, embeddings) {}

std::vector<double> ModelSource::feed(int token) {
    const auto logits = decoder_.step(token);
    const Tensor probs = softmax_rows(Tensor({1, logits.size()}, logits));
    return {probs.data().begin(), probs.data().end()};
}

std::size_t ModelSource::vocab_size() const { return decoder_.config().vocab_size; }

std::unique_ptr<TokenDistributionSource> ModelSource::clone() const {
    return std::make_unique<ModelSource>(*this);
}

EnsembleSource::EnsembleSource(std::vector<std::unique_ptr<TokenDistributionSource>> members)
    : members_(std::move(members)) {
    if (members_.empty()) throw InvalidConfig("an ensemble needs at least one model");
    for (const auto& m : members_) {
        if (m->vocab_size() != members_.front()->vocab_size()) {
            throw InvalidConfig("ensemble members disagree on vocabulary size");
        }
    }
}

std::vector<double> average_distributions(std::span<const std::vector<double>> dists) {
    if (dists.empty()) throw InvalidInput("no distributions to average");
    const std::size_t v = dists.front().size();
    const double k = static_cast<double>(dists.size());
    std::vector<double> mean(v), column(dists.size());
    for (std::size_t j = 0; j < v; ++j) {
        for (std::size_t i = 0; i < dists.size(); ++i) column[i] = dists[i].at(j);
        std::sort(column.begin(), column.end());
        double excess = 0.0;
        for (double x : column) excess += x - column.front();
        mean[j] = column.front() + excess / k;
    }
    return mean;
}

std::vector<double> EnsembleSource::feed(int token) {
    std::vector<std::vector<double>> dists;
    dists.reserve(members_.size());
    for (auto& m : members_) dists.push_back(m->feed(token));
    return average_distributions(dists);
}

std::size_t EnsembleSource::vocab_size() const { return members_.front()->vocab_size(); }

std::unique_ptr<TokenDistributionSource> EnsembleSource::clone() const {
    std::vector<std::unique_ptr<TokenDistributionSource>> copies;
    for (const auto& m : members_) copies.push_back(m->clone());
    return std::make_unique<EnsembleSource>(std::move(copies));
}

DecodeResult greedy_decode(TokenDistributionSource& source, std::size_t max_len) {
    DecodeResult out;
    int token = kBos;
    while (out.ids.size() < max_len) {
        const auto probs = source.feed(token);
        int best = -1;
        for (int j = 0; j < static_cast<int>(probs.size()); ++j) {
            if (is_candidate(j) && (best < 0 || probs[j] > probs[best])) best = j;
        }
        if (best < 0) throw InvalidConfig("vocabulary has no decodable tokens");
        out.ids.push_back(best);
        out.step_logprobs.push_back(std::log(probs[best]));
        if (best == kEos) break;
        token = best;
    }
    return out;
}

DecodeResult beam_decode(const TokenDistributionSource& start, std::size_t beam,
                         std::size_t max_len) {
    if (beam == 0) throw InvalidConfig("beam width must be positive");
    struct Hyp {
        std::unique_ptr<TokenDistributionSource> source;
        DecodeResult result;
        double total = 0.0;
        std::vector<double> next;  // distribution after the last fed token
    };
    auto score = [](const DecodeResult& r, double total) {
        return r.ids.empty() ? 0.0 : total / static_cast<double>(r.ids.size());
    };

    std::vector<Hyp> live;
    {
        Hyp h;
        h.source = start.clone();
        h.next = h.source->feed(kBos);
        live.push_back(std::move(h));
    }
    std::vector<std::pair<double, DecodeResult>> finished;
    for (std::size_t len = 0; len < max_len && !live.empty(); ++len) {
        struct Cand {
            double total;
            std::size_t parent;
            int token;
        };
        std::vector<Cand> cands;
        for (std::size_t b = 0; b < live.size(); ++b) {
            const auto& p = live[b].next;
            for (int j = 0; j < static_cast<int>(p.size()); ++j) {
                if (is_candidate(j) && p[j] > 0.0) cands.push_back({live[b].total + std::log(p[j]), b, j});
            }
        }
        // stable order: higher score, then earlier parent, then lower id
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Cand& a, const Cand& b) { return a.total > b.total; });
        std::vector<Hyp> grown;
        for (const auto& c : cands) {
            if (grown.size() == beam) break;
            Hyp h;
            h.result = live[c.parent].result;
            h.result.ids.push_back(c.token);
            h.result.step_logprobs.push_back(std::log(live[c.parent].next[c.token]));
            h.total = c.total;
            if (c.token == kEos || h.result.ids.size() == max_len) {
                finished.emplace_back(score(h.result, h.total), std::move(h.result));
                continue;
            }
            h.source = live[c.parent].source->clone();
            h.next = h.source->feed(c.token);
            grown.push_back(std::move(h));
        }
        live = std::move(grown);
        if (finished.size() >= beam) break;
    }
    if (finished.empty()) return {};
    const auto best = std::max_element(
        finished.begin(), finished.end(),
        [](const auto& a, const auto& b) { return a.first < b.first; });
    return best->second;
}

DecodeResult greedy_decode(const ParamStore& params, const ModelConfig& cfg,
                           const EmbeddingSet* embeddings, std::size_t max_len) {
    ModelSource source(params, cfg, embeddings);
    return greedy_decode(source, max_len);
}

void check_compatible(std::span<const LoadedModel> models) {
    if (models.empty()) throw InvalidConfig("no models given");
    for (const auto& m : models) {
        if (m.vocab_fingerprint != models.front().vocab_fingerprint ||
            m.config.vocab_size != models.front().config.vocab_size) {
            throw InvalidConfig("models were trained with different vocabularies");
        }
        if (!(m.config == models.front().config)) {
            throw InvalidConfig("models have different configurations");
        }
    }
}

DecodeResult ensemble_decode(std::span<const LoadedModel> models, const EmbeddingSet* embeddings,
                             std::size_t max_len, std::size_t beam) {
    check_compatible(models);
    std::unique_ptr<TokenDistributionSource> source;
    if (models.size() == 1) {
        source = std::make_unique<ModelSource>(models[0].params, models[0].config, embeddings);
    } else {
        std::vector<std::unique_ptr<TokenDistributionSource>> members;
        for (const auto& m : models) {
            members.push_back(std::make_unique<ModelSource>(m.params, m.config, embeddings));
        }
        source = std::make_unique<EnsembleSource>(std::move(members));
    }
    return beam > 1 ? beam_decode(*source, beam, max_len) : greedy_decode(*source, max_len);
}

std::vector<DecodeResult> batch_generate(std::span<const LoadedModel> models,
                                         const Vocabulary& vocab, const DatasetSplit& split,
                                         const GenerateOptions& opts) {
    check_compatible(models);
    const ModelConfig& cfg = models.front().config;
    if (cfg.vocab_size != vocab.size()) {
        throw InvalidConfig("vocabulary has " + std::to_string(vocab.size()) +
                            " tokens but the model expects " + std::to_string(cfg.vocab_size));
    }
    const std::size_t max_len = opts.max_len ? std::min(opts.max_len, cfg.max_len) : cfg.max_len;
    std::vector<DecodeResult> results(split.size());
    parallel_for(split.size(), opts.threads ? opts.threads : thread_count(), [&](std::size_t i) {
        const auto& entry = split.entries[i];
        try {
            const EmbeddingSet e = entry.embeddings();
            results[i] = ensemble_decode(models, &e, max_len, opts.beam);
            results[i].text = vocab.decode(results[i].ids);
        } catch (const Error& err) {
            throw DataError("entry \"" + entry.id + "\": " + err.what());
        }
    });
    return results;
}

void write_submission(const std::string& path, const DatasetSplit& split,
                      std::span<const DecodeResult> results) {
    if (results.size() != split.size()) {
        throw InvalidInput("submission needs one result per entry");
    }
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
        out.push_back({{"id", split.entries[i].id}, {"gloss", results[i].text}});
    }
    write_file_atomic(path, out.dump(2) + "\n");
}

std::vector<std::pair<std::string, std::string>> read_submission(const std::string& path) {
    std::vector<std::pair<std::string, std::string>> rows;
    try {
        const auto j = nlohmann::json::parse(read_file(path));
        if (!j.is_array()) throw DataError(path + ": submission must be a JSON array");
        for (const auto& r : j) rows.emplace_back(r.at("id").get<std::string>(), r.at("gloss").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed submission: " + e.what());
    }
    return rows;
}

}  // namespace camf
