#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "camf/autograd.hpp"
#include "camf/dataset.hpp"
#include "camf/model.hpp"
#include "camf/tokenizer.hpp"

namespace camf {

class Rng;

enum class CorruptionMode {
    // Selected tokens become MASK or a random non-special id; length kept.
    SubstituteBlank,
    // Selected tokens become MASK or are removed; the gap is right-padded.
    DeleteBlank,
};

std::string to_string(CorruptionMode mode);
CorruptionMode corruption_mode_from_string(const std::string& name);

struct TrainConfig {
    double lambda = 1.0;
    double corruption_p = 0.2;
    CorruptionMode corruption_mode = CorruptionMode::SubstituteBlank;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 500;
    std::size_t patience = 5;
    std::size_t warmup_steps = 4000;
    double lr_init = 1e-7;
    double lr_max = 1e-3;
    double lr_min = 1e-9;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-9;
    double clip_norm = 0.1;
    double smoothing = 0.1;
    std::uint64_t seed = 0;
    std::size_t threads = 0;  // 0: thread_count()

    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
    bool operator==(const TrainConfig&) const = default;
};

// Full-size settings, or a small configuration that trains in seconds.
struct Profile {
    ModelConfig model;
    TrainConfig train;
    std::size_t vocab_size = 10000;
};
Profile paper_profile();
Profile desk_profile();
Profile profile_by_name(const std::string& name);

// Interior positions (tokens other than BOS, EOS and PAD) are selected with
// probability p. A selected token is, with equal chance, blanked to MASK or
// substituted by a uniform id in [kNumSpecials, vocab_size) (deleted in
// DeleteBlank mode). `selected`, when given, receives the selection mask.
std::vector<int> corrupt_gloss(std::span<const int> ids, double p, Rng& rng, std::size_t vocab_size,
                               CorruptionMode mode = CorruptionMode::SubstituteBlank,
                               std::vector<bool>* selected = nullptr);

// A tokenized training example.
struct EncodedEntry {
    std::string id;
    std::vector<int> ids;  // BOS ... EOS, at most max_len + 1 tokens
    EmbeddingSet embeddings;
};

// Sequences longer than max_len + 1 are cut (their EOS is lost); the number
// of such entries is reported through `truncated`.
std::vector<EncodedEntry> encode_split(const DatasetSplit& split, const Vocabulary& vocab,
                                       std::size_t max_len, std::size_t* truncated = nullptr);

// Per-entry summed loss terms recorded on a tape.
struct EntryLoss {
    Var gen;  // sum over target tokens of the smoothed NLL with E
    Var rec;  // the same for the corrupted input with E = zero
    std::size_t tokens = 0;
};

// Both objectives of one entry on the same tape, through the same bound
// parameters. `corrupted` is the corrupted copy of entry.ids.
EntryLoss entry_loss(const ParamBinding& params, const ModelConfig& cfg, const EncodedEntry& entry,
                     std::span<const int> corrupted, double smoothing,
                     const ForwardOptions& gen_opts = {}, const ForwardOptions& rec_opts = {});

// Label-smoothed NLL of each gloss given its embeddings, averaged per token.
double generation_loss(const ParamStore& params, const ModelConfig& cfg,
                       std::span<const EncodedEntry> batch, double smoothing);
// Corrupts each gloss in batch order from `rng`, decodes the corrupted
// sequence with zero conditioning and scores the clean gloss, per token.
double reconstruction_loss(const ParamStore& params, const ModelConfig& cfg,
                           std::span<const EncodedEntry> batch, double smoothing, double corruption_p,
                           Rng& rng, CorruptionMode mode = CorruptionMode::SubstituteBlank);

double joint_loss(double gen, double rec, double lambda);

double noam_lr(std::uint64_t step, const TrainConfig& cfg);

struct OptimizerState {
    TensorMap m;
    TensorMap v;
    std::uint64_t step = 0;
};

// Bias-corrected Adam. Throws InvalidShape when a gradient does not match
// its parameter.
void adam_step(ParamStore& params, const Gradients& grads, OptimizerState& state, double lr,
               const TrainConfig& cfg);

struct StepRecord {
    std::uint64_t step = 0;
    double lr = 0.0;
    double loss_gen = 0.0;
    double loss_rec = 0.0;
    double loss_joint = 0.0;
    double grad_norm = 0.0;
};

struct DevScore {
    double bleu = 0.0;
    double nll = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    double lr = 0.0;
    double loss_gen = 0.0;
    double loss_rec = 0.0;
    double loss_joint = 0.0;
    double dev_bleu = 0.0;
    double dev_nll = 0.0;
    bool improved = false;
    // Deterministic part only; the log line adds a "time" field.
    nlohmann::json to_json() const;
};

// Greedy-decoding sentence BLEU against the reference glosses and the
// unsmoothed per-token NLL.
DevScore evaluate_dev(const ParamStore& params, const ModelConfig& cfg, const Vocabulary& vocab,
                      std::span<const EncodedEntry> dev, const DatasetSplit& dev_split,
                      std::size_t threads = 1);

struct TrainOptions {
    // Written whenever the dev score improves; empty to skip.
    std::string checkpoint_path;
    std::string vocab_path;
    // JSON-lines per-epoch log; empty to skip.
    std::string log_path;
    bool keep_step_records = false;
    // Replaces evaluate_dev.
    std::function<DevScore(const ParamStore&, std::size_t epoch)> evaluator;
    // Called after every epoch.
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    ParamStore best_params;
    ParamStore final_params;
    std::size_t best_epoch = 0;
    DevScore best_score;
    std::vector<EpochRecord> epochs;
    std::vector<StepRecord> steps;
    std::size_t truncated = 0;
};

// Throws InvalidConfig for an empty train or dev set.
TrainResult train(const DatasetSplit& train_split, const DatasetSplit& dev_split,
                  const Vocabulary& vocab, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

// Orders batches by length within shuffled buckets; a pure function of the
// lengths, batch size and rng state.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths,
                                                   std::size_t batch_size, Rng& rng);

}  // namespace camf
