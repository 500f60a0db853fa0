#include "camf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>

#include "camf/checkpoint.hpp"
#include "camf/error.hpp"
#include "camf/inference.hpp"
#include "camf/metrics.hpp"
#include "camf/parallel.hpp"
#include "camf/rng.hpp"

namespace camf {

std::string to_string(CorruptionMode mode) {
    return mode == CorruptionMode::SubstituteBlank ? "substitute" : "delete";
}

CorruptionMode corruption_mode_from_string(const std::string& name) {
    if (name == "substitute") return CorruptionMode::SubstituteBlank;
    if (name == "delete") return CorruptionMode::DeleteBlank;
    throw InvalidConfig("unknown corruption mode '" + name + "' (substitute or delete)");
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw InvalidConfig(what);
    };
    require(corruption_p >= 0.0 && corruption_p <= 1.0, "corruption_p must lie in [0, 1]");
    require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be a finite non-negative number");
    require(batch_size > 0 && max_epochs > 0 && patience > 0 && warmup_steps > 0,
            "batch_size, max_epochs, patience and warmup_steps must be positive");
    require(lr_init > 0.0 && lr_min > 0.0 && lr_init <= lr_max && lr_min <= lr_max,
            "learning rates must satisfy 0 < lr_init <= lr_max and 0 < lr_min <= lr_max");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
            "Adam betas must lie in [0, 1)");
    require(adam_eps > 0.0, "adam_eps must be positive");
    require(clip_norm > 0.0, "clip_norm must be positive");
    require(smoothing >= 0.0 && smoothing < 1.0, "smoothing must lie in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lambda", lambda},
            {"corruption_p", corruption_p},
            {"corruption_mode", to_string(corruption_mode)},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"warmup_steps", warmup_steps},
            {"lr_init", lr_init},
            {"lr_max", lr_max},
            {"lr_min", lr_min},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"clip_norm", clip_norm},
            {"smoothing", smoothing},
            {"seed", seed},
            {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
    if (!j.is_object()) throw InvalidConfig("training config must be a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "lambda") c.lambda = value.get<double>();
            else if (key == "corruption_p") c.corruption_p = value.get<double>();
            else if (key == "corruption_mode") c.corruption_mode = corruption_mode_from_string(value.get<std::string>());
            else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
            else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
            else if (key == "patience") c.patience = value.get<std::size_t>();
            else if (key == "warmup_steps") c.warmup_steps = value.get<std::size_t>();
            else if (key == "lr_init") c.lr_init = value.get<double>();
            else if (key == "lr_max") c.lr_max = value.get<double>();
            else if (key == "lr_min") c.lr_min = value.get<double>();
            else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
            else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
            else if (key == "adam_eps") c.adam_eps = value.get<double>();
            else if (key == "clip_norm") c.clip_norm = value.get<double>();
            else if (key == "smoothing") c.smoothing = value.get<double>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "threads") c.threads = value.get<std::size_t>();
            else throw InvalidConfig("unknown training option '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("bad training config: ") + e.what());
    }
    c.validate();
    return c;
}

Profile paper_profile() { return Profile{}; }

Profile desk_profile() {
    Profile p;
    p.vocab_size = 2000;
    p.model.d_model = 64;
    p.model.layers = 2;
    p.model.heads = 8;
    p.model.d_ff = 128;
    p.model.max_len = 64;
    p.model.dropout = 0.0;
    p.model.cross_mode = CrossAttentionMode::Projected;
    p.train.batch_size = 8;
    p.train.max_epochs = 300;
    p.train.patience = 300;
    p.train.warmup_steps = 100;
    p.train.lr_max = 3e-3;
    p.train.smoothing = 0.01;
    return p;
}

Profile profile_by_name(const std::string& name) {
    if (name == "paper") return paper_profile();
    if (name == "desk") return desk_profile();
    throw InvalidConfig("unknown profile '" + name + "' (paper or desk)");
}

std::vector<int> corrupt_gloss(std::span<const int> ids, double p, Rng& rng, std::size_t vocab_size,
                               CorruptionMode mode, std::vector<bool>* selected) {
    if (selected) selected->assign(ids.size(), false);
    if (p <= 0.0) return {ids.begin(), ids.end()};
    const bool can_substitute = vocab_size > static_cast<std::size_t>(kNumSpecials);
    std::vector<int> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int tok = ids[i];
        if (tok == kBos || tok == kEos || tok == kPad || !rng.bernoulli(p)) {
            out.push_back(tok);
            continue;
        }
        if (selected) (*selected)[i] = true;
        const bool blank = rng.bernoulli(0.5);
        if (blank) {
            out.push_back(kMask);
        } else if (mode == CorruptionMode::DeleteBlank) {
            // dropped
        } else if (can_substitute) {
            out.push_back(kNumSpecials + static_cast<int>(rng.below(vocab_size - kNumSpecials)));
        } else {
            out.push_back(kMask);
        }
    }
    out.resize(ids.size(), kPad);
    return out;
}

std::vector<EncodedEntry> encode_split(const DatasetSplit& split, const Vocabulary& vocab,
                                       std::size_t max_len, std::size_t* truncated) {
    std::vector<EncodedEntry> out;
    out.reserve(split.size());
    std::size_t cut = 0;
    for (const auto& e : split.entries) {
        EncodedEntry enc{e.id, vocab.encode(e.gloss), e.embeddings()};
        if (enc.ids.size() > max_len + 1) {
            enc.ids.resize(max_len + 1);
            ++cut;
        }
        out.push_back(std::move(enc));
    }
    if (truncated) *truncated = cut;
    return out;
}

namespace {

std::span<const int> inputs_of(std::span<const int> ids) { return ids.first(ids.size() - 1); }
std::span<const int> targets_of(std::span<const int> ids) { return ids.subspan(1); }

void check_entry(const EncodedEntry& e, const ModelConfig& cfg) {
    if (e.ids.size() < 2) throw DataError("entry \"" + e.id + "\": gloss encodes to fewer than 2 ids");
    if (e.embeddings.width() != cfg.embed_dim) {
        throw DataError("entry \"" + e.id + "\": embeddings have width " +
                        std::to_string(e.embeddings.width()) + ", model expects " +
                        std::to_string(cfg.embed_dim));
    }
}

std::size_t target_count(std::span<const EncodedEntry> batch) {
    std::size_t n = 0;
    for (const auto& e : batch) n += e.ids.size() - 1;
    return n;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

EntryLoss entry_loss(const ParamBinding& params, const ModelConfig& cfg, const EncodedEntry& entry,
                     std::span<const int> corrupted, double smoothing, const ForwardOptions& gen_opts,
                     const ForwardOptions& rec_opts) {
    check_entry(entry, cfg);
    if (corrupted.size() != entry.ids.size()) {
        throw InvalidShape("corrupted sequence length differs from the clean one");
    }
    const auto targets = targets_of(entry.ids);
    EntryLoss out;
    out.tokens = targets.size();
    out.gen = ag::label_smoothed_cross_entropy(
        decoder_forward(params, cfg, inputs_of(entry.ids), &entry.embeddings, gen_opts), targets,
        smoothing, ag::Reduction::Sum);
    out.rec = ag::label_smoothed_cross_entropy(
        decoder_forward(params, cfg, inputs_of(corrupted), kZeroEmbeddings, rec_opts), targets,
        smoothing, ag::Reduction::Sum);
    return out;
}

double generation_loss(const ParamStore& params, const ModelConfig& cfg,
                       std::span<const EncodedEntry> batch, double smoothing) {
    if (batch.empty()) throw InvalidInput("empty batch");
    double total = 0.0;
    for (const auto& e : batch) {
        check_entry(e, cfg);
        total += label_smoothed_cross_entropy(decoder_forward(params, cfg, inputs_of(e.ids), &e.embeddings),
                                              targets_of(e.ids), smoothing, ag::Reduction::Sum);
    }
    return total / static_cast<double>(target_count(batch));
}

double reconstruction_loss(const ParamStore& params, const ModelConfig& cfg,
                           std::span<const EncodedEntry> batch, double smoothing, double corruption_p,
                           Rng& rng, CorruptionMode mode) {
    if (batch.empty()) throw InvalidInput("empty batch");
    double total = 0.0;
    for (const auto& e : batch) {
        check_entry(e, cfg);
        const auto corrupted = corrupt_gloss(e.ids, corruption_p, rng, cfg.vocab_size, mode);
        total += label_smoothed_cross_entropy(decoder_forward(params, cfg, inputs_of(corrupted), kZeroEmbeddings),
                                              targets_of(e.ids), smoothing, ag::Reduction::Sum);
    }
    return total / static_cast<double>(target_count(batch));
}

double joint_loss(double gen, double rec, double lambda) { return gen + lambda * rec; }

double noam_lr(std::uint64_t step, const TrainConfig& cfg) {
    const auto warmup = static_cast<double>(cfg.warmup_steps);
    const auto s = static_cast<double>(step);
    if (step < cfg.warmup_steps) return cfg.lr_init + (cfg.lr_max - cfg.lr_init) * (s / warmup);
    return std::max(cfg.lr_min, cfg.lr_max * std::sqrt(warmup / s));
}

void adam_step(ParamStore& params, const Gradients& grads, OptimizerState& state, double lr,
               const TrainConfig& cfg) {
    for (const auto& [name, g] : grads) {
        const auto it = params.find(name);
        if (it == params.end()) throw InvalidShape("gradient for unknown parameter " + name);
        if (it->second.shape() != g.shape()) {
            throw InvalidShape("gradient of " + name + " has shape " + shape_string(g.shape()) +
                               ", parameter has " + shape_string(it->second.shape()));
        }
    }
    ++state.step;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        auto [mit, m_new] = state.m.try_emplace(name, g.shape(), 0.0);
        auto [vit, v_new] = state.v.try_emplace(name, g.shape(), 0.0);
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

nlohmann::json EpochRecord::to_json() const {
    return {{"epoch", epoch},       {"step", step},         {"lr", lr},
            {"loss_gen", loss_gen}, {"loss_rec", loss_rec}, {"loss_joint", loss_joint},
            {"dev_bleu", dev_bleu}, {"dev_nll", dev_nll}};
}

DevScore evaluate_dev(const ParamStore& params, const ModelConfig& cfg, const Vocabulary& vocab,
                      std::span<const EncodedEntry> dev, const DatasetSplit& dev_split,
                      std::size_t threads) {
    if (dev.empty() || dev.size() != dev_split.size()) throw InvalidConfig("dev set is empty or inconsistent");
    std::vector<double> bleu(dev.size()), nll(dev.size());
    parallel_for(dev.size(), threads, [&](std::size_t i) {
        const auto& e = dev[i];
        check_entry(e, cfg);
        const auto decoded = greedy_decode(params, cfg, &e.embeddings, cfg.max_len);
        const auto reference = split_words(dev_split.entries[i].gloss);
        bleu[i] = reference.empty() ? 0.0 : sentence_bleu(split_words(vocab.decode(decoded.ids)), reference);
        nll[i] = label_smoothed_cross_entropy(decoder_forward(params, cfg, inputs_of(e.ids), &e.embeddings),
                                              targets_of(e.ids), 0.0, ag::Reduction::Sum);
    });
    double nll_sum = 0.0;
    for (double x : nll) nll_sum += x;
    return {corpus_average(bleu), nll_sum / static_cast<double>(target_count(dev))};
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths,
                                                   std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> order(lengths.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        batches.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch_size));
    }
    rng.shuffle(batches.begin(), batches.end());
    return batches;
}

TrainResult train(const DatasetSplit& train_split, const DatasetSplit& dev_split,
                  const Vocabulary& vocab, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const TrainOptions& opts) {
    cfg.validate();
    model_cfg.validate();
    if (train_split.empty()) throw InvalidConfig("training set is empty");
    if (dev_split.empty()) throw InvalidConfig("dev set is empty");
    if (model_cfg.vocab_size != vocab.size()) {
        throw InvalidConfig("model vocab_size " + std::to_string(model_cfg.vocab_size) +
                            " differs from the vocabulary's " + std::to_string(vocab.size()));
    }
    const std::size_t threads = cfg.threads ? cfg.threads : thread_count();

    TrainResult result;
    const auto train_set = encode_split(train_split, vocab, model_cfg.max_len, &result.truncated);
    const auto dev_set = encode_split(dev_split, vocab, model_cfg.max_len);
    for (const auto& e : train_set) check_entry(e, model_cfg);
    for (const auto& e : dev_set) check_entry(e, model_cfg);
    std::vector<std::size_t> lengths;
    for (const auto& e : train_set) lengths.push_back(e.ids.size());

    ParamStore params = init_params(model_cfg, cfg.seed);
    OptimizerState state;
    std::ofstream log;
    if (!opts.log_path.empty()) {
        log.open(opts.log_path, std::ios::trunc);
        if (!log) throw Error("cannot write log " + opts.log_path);
    }

    // thread count does not affect results, so it stays out of the checkpoint
    nlohmann::json provenance = cfg.to_json();
    provenance.erase("threads");

    bool have_best = false;
    std::size_t stale = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng epoch_rng(derive_seed({cfg.seed, epoch}));
        const auto batches = make_batches(lengths, cfg.batch_size, epoch_rng);
        double epoch_gen = 0.0, epoch_rec = 0.0;
        std::size_t epoch_tokens = 0;
        double lr = 0.0;
        for (const auto& batch : batches) {
            // corruption draws come from the epoch stream in batch order
            std::vector<std::vector<int>> corrupted;
            std::size_t tokens = 0;
            for (std::size_t idx : batch) {
                corrupted.push_back(corrupt_gloss(train_set[idx].ids, cfg.corruption_p, epoch_rng,
                                                  model_cfg.vocab_size, cfg.corruption_mode));
                tokens += train_set[idx].ids.size() - 1;
            }
            const double inv_tokens = 1.0 / static_cast<double>(tokens);
            const std::uint64_t step = state.step + 1;

            Gradients total;
            double gen_sum = 0.0, rec_sum = 0.0;
            for (std::size_t wave = 0; wave < batch.size(); wave += threads) {
                const std::size_t count = std::min(threads, batch.size() - wave);
                std::vector<Gradients> grads(count);
                std::vector<double> gen(count), rec(count);
                parallel_for(count, threads, [&](std::size_t k) {
                    const std::size_t pos = wave + k;
                    const auto& entry = train_set[batch[pos]];
                    Rng gen_rng(derive_seed({cfg.seed, step, pos, 0}));
                    Rng rec_rng(derive_seed({cfg.seed, step, pos, 1}));
                    ForwardOptions gen_opts{true, &gen_rng, false};
                    ForwardOptions rec_opts{true, &rec_rng, false};
                    Tape tape;
                    ParamBinding bound(tape, params);
                    const EntryLoss l = entry_loss(bound, model_cfg, entry, corrupted[pos],
                                                   cfg.smoothing, gen_opts, rec_opts);
                    const Var objective =
                        ag::scale(ag::add(l.gen, ag::scale(l.rec, cfg.lambda)), inv_tokens);
                    tape.backward(objective);
                    grads[k] = bound.gradients();
                    gen[k] = l.gen.value().item();
                    rec[k] = l.rec.value().item();
                });
                for (std::size_t k = 0; k < count; ++k) {
                    gen_sum += gen[k];
                    rec_sum += rec[k];
                    if (total.empty()) {
                        total = std::move(grads[k]);
                    } else {
                        for (auto& [name, g] : total) add_inplace(g, grads[k].at(name));
                    }
                }
            }
            const double norm = clip_grad_norm(total, cfg.clip_norm);
            lr = noam_lr(state.step, cfg);
            adam_step(params, total, state, lr, cfg);

            epoch_gen += gen_sum;
            epoch_rec += rec_sum;
            epoch_tokens += tokens;
            if (opts.keep_step_records) {
                StepRecord s;
                s.step = state.step;
                s.lr = lr;
                s.loss_gen = gen_sum * inv_tokens;
                s.loss_rec = rec_sum * inv_tokens;
                s.loss_joint = joint_loss(s.loss_gen, s.loss_rec, cfg.lambda);
                s.grad_norm = norm;
                result.steps.push_back(s);
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.step = state.step;
        rec.lr = lr;
        rec.loss_gen = epoch_gen / static_cast<double>(epoch_tokens);
        rec.loss_rec = epoch_rec / static_cast<double>(epoch_tokens);
        rec.loss_joint = joint_loss(rec.loss_gen, rec.loss_rec, cfg.lambda);
        const DevScore score = opts.evaluator ? opts.evaluator(params, epoch)
                                              : evaluate_dev(params, model_cfg, vocab, dev_set, dev_split, threads);
        rec.dev_bleu = score.bleu;
        rec.dev_nll = score.nll;
        rec.improved = !have_best || score.bleu > result.best_score.bleu ||
                       (score.bleu == result.best_score.bleu && score.nll < result.best_score.nll);
        if (rec.improved) {
            have_best = true;
            stale = 0;
            result.best_score = score;
            result.best_epoch = epoch;
            result.best_params = params;
            if (!opts.checkpoint_path.empty()) {
                Checkpoint ckpt{model_cfg, params, opts.vocab_path, vocab.fingerprint(),
                                {{"seed", cfg.seed},
                                 {"epoch", epoch},
                                 {"step", state.step},
                                 {"dev_bleu", score.bleu},
                                 {"dev_nll", score.nll},
                                 {"train_config", provenance}}};
                save_checkpoint(opts.checkpoint_path, ckpt);
            }
        } else {
            ++stale;
        }
        result.epochs.push_back(rec);
        if (log.is_open()) {
            auto line = rec.to_json();
            line["time"] = utc_timestamp();
            log << line.dump() << '\n' << std::flush;
        }
        if (opts.on_epoch) opts.on_epoch(rec);
        if (stale >= cfg.patience) break;
    }
    result.final_params = std::move(params);
    return result;
}

}  // namespace camf
