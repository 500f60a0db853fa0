#include "camf/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <set>

#include "camf/checkpoint.hpp"
#include "camf/dataset.hpp"
#include "camf/error.hpp"
#include "camf/inference.hpp"
#include "camf/io.hpp"
#include "camf/metrics.hpp"
#include "camf/tokenizer.hpp"
#include "camf/training.hpp"

namespace camf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Thrown for data problems that the library reports as config errors, such
// as checkpoints built on different vocabularies.
struct DataFailure : Error {
    using Error::Error;
};

void require_file(const std::string& flag, const std::string& path) {
    if (path.empty()) throw InvalidConfig(flag + " is required");
    if (!fs::exists(path)) throw InvalidConfig(flag + ": no such file: " + path);
}

json read_json_file(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw InvalidConfig(path + ": invalid JSON: " + e.what());
    }
}

struct VocabArgs {
    std::string train;
    std::string out;
    std::size_t vocab_size = 10000;
    std::size_t width = kEmbeddingWidth;
};

struct TrainArgs {
    std::string train, dev, vocab, config, out_dir = "camf-run", profile = "paper";
    std::string corruption_mode;
    std::vector<std::uint64_t> seeds{0};
    std::size_t vocab_size = 0, max_epochs = 0, batch_size = 0, width = kEmbeddingWidth;
    double lambda = 0.0, corruption_p = 0.0;
    CLI::Option* vocab_size_opt = nullptr;
    CLI::Option* lambda_opt = nullptr;
    CLI::Option* corruption_opt = nullptr;
    CLI::Option* epochs_opt = nullptr;
    CLI::Option* batch_opt = nullptr;
};

struct GenerateArgs {
    std::vector<std::string> checkpoints;
    std::string test, vocab, submission, out_dir;
    std::size_t beam = 1, max_len = 0, width = kEmbeddingWidth;
};

struct EvaluateArgs {
    std::string submission, reference, lemma_map;
    std::size_t width = kEmbeddingWidth;
};

struct StatsArgs {
    std::vector<std::string> data;
    std::size_t width = kEmbeddingWidth;
};

LoadOptions load_options(std::size_t width, bool require_gloss = true) {
    LoadOptions o;
    o.width = width;
    o.require_gloss = require_gloss;
    return o;
}

int cmd_vocab(const VocabArgs& a, std::ostream& out) {
    require_file("--train", a.train);
    if (a.out.empty()) throw InvalidConfig("--out is required");
    const auto split = load_dataset(a.train, load_options(a.width));
    std::vector<std::string> corpus;
    for (const auto& e : split.entries) corpus.push_back(e.gloss);
    const auto vocab = Vocabulary::learn(corpus, a.vocab_size);
    vocab.save(a.out);
    out << json{{"vocab", a.out}, {"size", vocab.size()}, {"merges", vocab.merges().size()},
                {"fingerprint", vocab.fingerprint()}}.dump()
        << "\n";
    return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    require_file("--train", a.train);
    require_file("--dev", a.dev);
    if (!a.vocab.empty()) require_file("--vocab", a.vocab);
    if (std::set<std::uint64_t>(a.seeds.begin(), a.seeds.end()).size() != a.seeds.size()) {
        throw InvalidConfig("--seeds must be unique");
    }
    if (a.seeds.empty()) throw InvalidConfig("--seeds must name at least one seed");

    // precedence: profile < config file < flags
    Profile p = profile_by_name(a.profile);
    if (!a.config.empty()) {
        require_file("--config", a.config);
        const json j = read_json_file(a.config);
        if (!j.is_object()) throw InvalidConfig(a.config + ": expected a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (key == "model") p.model = ModelConfig::from_json(value, p.model);
            else if (key == "train") p.train = TrainConfig::from_json(value, p.train);
            else if (key == "vocab_size") p.vocab_size = value.get<std::size_t>();
            else throw InvalidConfig(a.config + ": unknown key '" + key + "'");
        }
    }
    if (a.vocab_size_opt->count()) p.vocab_size = a.vocab_size;
    if (a.lambda_opt->count()) p.train.lambda = a.lambda;
    if (a.corruption_opt->count()) p.train.corruption_p = a.corruption_p;
    if (!a.corruption_mode.empty()) p.train.corruption_mode = corruption_mode_from_string(a.corruption_mode);
    if (a.epochs_opt->count()) p.train.max_epochs = a.max_epochs;
    if (a.batch_opt->count()) p.train.batch_size = a.batch_size;
    p.train.validate();

    const auto train_split = load_dataset(a.train, load_options(a.width));
    const auto dev_split = load_dataset(a.dev, load_options(a.width));
    if (train_split.empty()) throw InvalidConfig("training set " + a.train + " is empty");
    if (dev_split.empty()) throw InvalidConfig("dev set " + a.dev + " is empty");

    fs::create_directories(a.out_dir);
    Vocabulary vocab;
    std::string vocab_path = a.vocab;
    if (vocab_path.empty()) {
        std::vector<std::string> corpus;
        for (const auto& e : train_split.entries) corpus.push_back(e.gloss);
        vocab = Vocabulary::learn(corpus, p.vocab_size);
        vocab_path = (fs::path(a.out_dir) / "vocab.json").string();
        vocab.save(vocab_path);
    } else {
        vocab = Vocabulary::load(vocab_path);
    }
    p.model.vocab_size = vocab.size();
    p.model.embed_dim = a.width;
    p.model.validate();

    json manifest = {{"command", "train"},
                     {"profile", a.profile},
                     {"model", p.model.to_json()},
                     {"train", p.train.to_json()},
                     {"vocab_size_target", p.vocab_size},
                     {"train_path", a.train},
                     {"dev_path", a.dev},
                     {"vocab_path", vocab_path},
                     {"seeds", a.seeds},
                     {"out_dir", a.out_dir},
                     {"width", a.width}};
    json checkpoints = json::array();
    for (const auto seed : a.seeds) {
        TrainConfig cfg = p.train;
        cfg.seed = seed;
        const fs::path dir = fs::path(a.out_dir) / ("seed-" + std::to_string(seed));
        fs::create_directories(dir);
        TrainOptions opts;
        opts.checkpoint_path = (dir / "model.json").string();
        opts.log_path = (dir / "train.log.jsonl").string();
        opts.vocab_path = fs::relative(fs::absolute(vocab_path), fs::absolute(dir)).string();
        opts.on_epoch = [&](const EpochRecord& r) {
            err << "seed " << seed << " epoch " << r.epoch << " step " << r.step << " loss "
                << r.loss_joint << " dev_bleu " << r.dev_bleu << " dev_nll " << r.dev_nll
                << (r.improved ? " *" : "") << "\n";
        };
        const auto result = train(train_split, dev_split, vocab, p.model, cfg, opts);
        if (result.truncated) {
            err << "warning: " << result.truncated << " training glosses exceed max_len and were cut\n";
        }
        checkpoints.push_back({{"seed", seed},
                               {"checkpoint", opts.checkpoint_path},
                               {"log", opts.log_path},
                               {"best_epoch", result.best_epoch},
                               {"epochs", result.epochs.size()},
                               {"dev_bleu", result.best_score.bleu},
                               {"dev_nll", result.best_score.nll}});
    }
    manifest["checkpoints"] = checkpoints;
    write_file_atomic((fs::path(a.out_dir) / "run_manifest.json").string(), manifest.dump(2) + "\n");
    out << checkpoints.dump(2) << "\n";
    return kExitOk;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    if (a.checkpoints.empty()) throw InvalidConfig("--checkpoints is required");
    for (const auto& c : a.checkpoints) require_file("--checkpoints", c);
    require_file("--test", a.test);
    if (a.beam == 0) throw InvalidConfig("--beam must be positive");
    std::string submission = a.submission;
    if (submission.empty()) {
        if (a.out_dir.empty()) throw InvalidConfig("--submission or --out-dir is required");
        submission = (fs::path(a.out_dir) / "submission.json").string();
    }

    std::vector<LoadedModel> models;
    std::vector<std::string> vocab_paths;
    for (const auto& path : a.checkpoints) {
        auto ckpt = load_checkpoint(path);
        models.push_back({ckpt.config, std::move(ckpt.params), ckpt.vocab_fingerprint});
        vocab_paths.push_back((fs::path(path).parent_path() / ckpt.vocab_path).string());
    }
    for (const auto& m : models) {
        if (m.vocab_fingerprint != models.front().vocab_fingerprint) {
            throw DataFailure("checkpoints were trained with different vocabularies");
        }
    }
    const std::string vocab_path = a.vocab.empty() ? vocab_paths.front() : a.vocab;
    if (!fs::exists(vocab_path)) throw DataFailure("vocabulary not found: " + vocab_path);
    const auto vocab = Vocabulary::load(vocab_path);
    if (vocab.fingerprint() != models.front().vocab_fingerprint) {
        throw DataFailure("vocabulary " + vocab_path + " does not match the checkpoints");
    }
    try {
        check_compatible(models);
    } catch (const InvalidConfig& e) {
        throw DataFailure(e.what());
    }

    const auto split = load_dataset(a.test, load_options(a.width, false));
    GenerateOptions opts;
    opts.beam = a.beam;
    opts.max_len = a.max_len;
    const auto results = batch_generate(models, vocab, split, opts);
    write_submission(submission, split, results);
    if (!a.out_dir.empty()) {
        const json manifest = {{"command", "generate"},
                               {"checkpoints", a.checkpoints},
                               {"test_path", a.test},
                               {"vocab_path", vocab_path},
                               {"beam", a.beam},
                               {"max_len", a.max_len},
                               {"mode", models.size() > 1 ? "ensemble" : "single"},
                               {"submission", submission}};
        write_file_atomic((fs::path(a.out_dir) / "run_manifest.json").string(), manifest.dump(2) + "\n");
    }
    out << json{{"submission", submission},
                {"entries", results.size()},
                {"models", models.size()},
                {"mode", models.size() > 1 ? "ensemble" : "single"}}.dump()
        << "\n";
    return kExitOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
    require_file("--submission", a.submission);
    require_file("--reference", a.reference);
    if (!a.lemma_map.empty()) require_file("--lemma-map", a.lemma_map);
    const auto rows = read_submission(a.submission);
    const auto refs = load_dataset(a.reference, load_options(a.width));
    if (rows.size() != refs.size()) {
        throw DataError("submission has " + std::to_string(rows.size()) + " entries, reference has " +
                        std::to_string(refs.size()));
    }
    if (refs.empty()) throw DataError("reference split is empty");
    const LemmaMap lemmas = a.lemma_map.empty() ? LemmaMap::identity() : LemmaMap::load_tsv(a.lemma_map);
    std::vector<double> s_bleu, l_bleu;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].first != refs.entries[i].id) {
            throw DataError("id mismatch at position " + std::to_string(i) + ": submission has \"" +
                            rows[i].first + "\", reference has \"" + refs.entries[i].id + "\"");
        }
        const auto h = split_words(rows[i].second);
        const auto r = split_words(refs.entries[i].gloss);
        s_bleu.push_back(sentence_bleu(h, r));
        l_bleu.push_back(lemma_bleu(h, r, lemmas));
    }
    json report = {{"entries", rows.size()},
                   {"sentence_bleu", corpus_average(s_bleu)},
                   {"lemma_bleu", corpus_average(l_bleu)},
                   {"moverscore", "n/a"}};
    out << report.dump(2) << "\n";
    return kExitOk;
}

int cmd_stats(const StatsArgs& a, std::ostream& out) {
    json report = json::array();
    for (const auto& path : a.data) {
        require_file("--data", path);
        const auto split = load_dataset(path, load_options(a.width));
        auto s = stats(split).to_json();
        s["path"] = path;
        s["language"] = split.language;
        s["role"] = split.role;
        report.push_back(s);
    }
    out << report.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Definition modeling with cross-attention over embedding sets", "camf"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "camf 0.1.0");

    VocabArgs va;
    auto* vocab = app.add_subcommand("vocab", "learn a subword vocabulary from training glosses");
    vocab->add_option("--train", va.train, "training split (JSON, optionally .gz)")->required();
    vocab->add_option("--out", va.out, "vocabulary file to write")->required();
    vocab->add_option("--vocab-size", va.vocab_size, "target vocabulary size")->capture_default_str();
    vocab->add_option("--width", va.width, "embedding width")->capture_default_str();

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "train one model per seed");
    tr->add_option("--train", ta.train, "training split")->required();
    tr->add_option("--dev", ta.dev, "dev split used for model selection")->required();
    tr->add_option("--vocab", ta.vocab, "existing vocabulary (learned from --train otherwise)");
    tr->add_option("--config", ta.config, "JSON file with \"model\", \"train\" and \"vocab_size\"");
    tr->add_option("--out-dir", ta.out_dir, "output directory")->capture_default_str();
    tr->add_option("--profile", ta.profile, "paper or desk")
        ->check(CLI::IsMember({"paper", "desk"}))
        ->capture_default_str();
    tr->add_option("--seeds", ta.seeds, "comma-separated seeds, one checkpoint each")->delimiter(',');
    ta.vocab_size_opt = tr->add_option("--vocab-size", ta.vocab_size, "target vocabulary size");
    ta.lambda_opt = tr->add_option("--lambda", ta.lambda, "weight of the reconstruction loss");
    ta.corruption_opt = tr->add_option("--corruption-p", ta.corruption_p, "token corruption probability");
    tr->add_option("--corruption-mode", ta.corruption_mode, "substitute or delete");
    ta.epochs_opt = tr->add_option("--max-epochs", ta.max_epochs, "epoch limit");
    ta.batch_opt = tr->add_option("--batch-size", ta.batch_size, "entries per step");
    tr->add_option("--width", ta.width, "embedding width")->capture_default_str();

    GenerateArgs ga;
    auto* gen = app.add_subcommand("generate", "decode glosses; several checkpoints form an ensemble");
    gen->add_option("--checkpoints", ga.checkpoints, "checkpoint manifests")->delimiter(',')->required();
    gen->add_option("--test", ga.test, "split to decode")->required();
    gen->add_option("--vocab", ga.vocab, "vocabulary (default: the one recorded in the checkpoint)");
    gen->add_option("--submission", ga.submission, "output JSON file");
    gen->add_option("--out-dir", ga.out_dir, "directory for submission.json and the run manifest");
    gen->add_option("--beam", ga.beam, "beam width (1 = greedy)")->capture_default_str();
    gen->add_option("--max-len", ga.max_len, "token limit (default: model max_len)");
    gen->add_option("--width", ga.width, "embedding width")->capture_default_str();

    EvaluateArgs ea;
    auto* ev = app.add_subcommand("evaluate", "score a submission with sentence and lemma BLEU");
    ev->add_option("--submission", ea.submission, "submission JSON")->required();
    ev->add_option("--reference,--test", ea.reference, "reference split with glosses")->required();
    ev->add_option("--lemma-map", ea.lemma_map, "TSV of surface<TAB>lemma");
    ev->add_option("--width", ea.width, "embedding width")->capture_default_str();

    StatsArgs sa;
    auto* st = app.add_subcommand("stats", "entry count and mean gloss length");
    st->add_option("--data,data", sa.data, "dataset files")->required();
    st->add_option("--width", sa.width, "embedding width")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*vocab) return cmd_vocab(va, out);
        if (*tr) return cmd_train(ta, out, err);
        if (*gen) return cmd_generate(ga, out);
        if (*ev) return cmd_evaluate(ea, out);
        if (*st) return cmd_stats(sa, out);
    } catch (const DataFailure& e) {
        err << "camf: error: " << e.what() << "\n";
        return kExitData;
    } catch (const InvalidConfig& e) {
        err << "camf: error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const json::exception& e) {
        err << "camf: error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "camf: error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace camf
