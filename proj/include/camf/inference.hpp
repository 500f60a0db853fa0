#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "camf/autograd.hpp"
#include "camf/dataset.hpp"
#include "camf/model.hpp"
#include "camf/tokenizer.hpp"

namespace camf {

struct DecodeResult {
    std::vector<int> ids;  // after BOS, through EOS when one was produced
    std::string text;
    std::vector<double> step_logprobs;
    bool operator==(const DecodeResult&) const = default;
};

// Autoregressive next-token distributions. feed() appends a token and
// returns the full probability vector for the following position.
class TokenDistributionSource {
public:
    virtual ~TokenDistributionSource() = default;
    virtual std::vector<double> feed(int token) = 0;
    virtual std::size_t vocab_size() const = 0;
    virtual std::unique_ptr<TokenDistributionSource> clone() const = 0;
};

class ModelSource : public TokenDistributionSource {
public:
    // params, cfg and embeddings must outlive the source.
    ModelSource(const ParamStore& params, const ModelConfig& cfg, const EmbeddingSet* embeddings);
    std::vector<double> feed(int token) override;
    std::size_t vocab_size() const override;
    std::unique_ptr<TokenDistributionSource> clone() const override;

private:
    IncrementalDecoder decoder_;
};

// Per-step arithmetic mean of member distributions. The mean is computed from
// sorted values, so it does not depend on member order and k identical
// members reproduce the single distribution bit for bit.
class EnsembleSource : public TokenDistributionSource {
public:
    explicit EnsembleSource(std::vector<std::unique_ptr<TokenDistributionSource>> members);
    std::vector<double> feed(int token) override;
    std::size_t vocab_size() const override;
    std::unique_ptr<TokenDistributionSource> clone() const override;

private:
    std::vector<std::unique_ptr<TokenDistributionSource>> members_;
};

std::vector<double> average_distributions(std::span<const std::vector<double>> dists);

// Candidates exclude every special except EOS. Ties go to the lowest id.
// step_logprobs are the log of the unmasked probability of each choice.
DecodeResult greedy_decode(TokenDistributionSource& source, std::size_t max_len);
// Width-k search ranking hypotheses by mean log-probability per token.
DecodeResult beam_decode(const TokenDistributionSource& start, std::size_t beam,
                         std::size_t max_len);

DecodeResult greedy_decode(const ParamStore& params, const ModelConfig& cfg,
                           const EmbeddingSet* embeddings, std::size_t max_len);

struct LoadedModel {
    ModelConfig config;
    ParamStore params;
    std::string vocab_fingerprint;
};

// Throws InvalidConfig unless all models share one config and vocabulary.
void check_compatible(std::span<const LoadedModel> models);

DecodeResult ensemble_decode(std::span<const LoadedModel> models, const EmbeddingSet* embeddings,
                             std::size_t max_len, std::size_t beam = 1);

struct GenerateOptions {
    std::size_t max_len = 0;  // 0: the model's max_len
    std::size_t beam = 1;
    std::size_t threads = 0;  // 0: thread_count()
};

// One result per entry in split order, text detokenized with `vocab`.
// Errors are rethrown as DataError naming the entry id.
std::vector<DecodeResult> batch_generate(std::span<const LoadedModel> models,
                                         const Vocabulary& vocab, const DatasetSplit& split,
                                         const GenerateOptions& opts = {});

// JSON array of {"id", "gloss"} objects in split order.
void write_submission(const std::string& path, const DatasetSplit& split,
                      std::span<const DecodeResult> results);
std::vector<std::pair<std::string, std::string>> read_submission(const std::string& path);

}  // namespace camf
