// End-to-end acceptance checks; prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "bleu_oracle.hpp"
#include "camf/checkpoint.hpp"
#include "camf/cli.hpp"
#include "camf/dataset.hpp"
#include "camf/error.hpp"
#include "camf/inference.hpp"
#include "camf/io.hpp"
#include "camf/metrics.hpp"
#include "camf/parallel.hpp"
#include "camf/rng.hpp"
#include "camf/tokenizer.hpp"
#include "camf/training.hpp"
#include "finite_difference.hpp"

using namespace camf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Collects failed conditions for one criterion.
struct Check {
    std::vector<std::string> failures;
    std::string note;
    void operator()(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
};

std::string sci(double v) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "camf_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "camf");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != 0) std::cerr << err.str();
    return code;
}

std::vector<std::string> glosses(const DatasetSplit& s) {
    std::vector<std::string> out;
    for (const auto& e : s.entries) out.push_back(e.gloss);
    return out;
}

void gradient_correctness(Check& check) {
    const auto t0 = std::chrono::steady_clock::now();
    for (auto mode : {CrossAttentionMode::Literal, CrossAttentionMode::Projected}) {
        ModelConfig cfg;
        cfg.vocab_size = 32;
        cfg.d_model = 8;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.d_ff = 32;
        cfg.max_len = 8;
        cfg.embed_dim = 8;
        cfg.dropout = 0.0;
        cfg.cross_mode = mode;
        ParamStore params = init_params(cfg, 11);
        Rng rng(3);
        Tensor rows({3, 8});
        for (double& v : rows.data()) v = rng.normal(0.0, 1.0);
        EncodedEntry entry{"grad", {kBos, 9, 17, 23, kEos}, EmbeddingSet({"sgns", "char", "electra"}, rows)};
        const auto corrupted = corrupt_gloss(entry.ids, 0.5, rng, cfg.vocab_size);
        const double lambda = 1.0, smoothing = 0.1;

        const std::vector<EncodedEntry> batch{entry};
        auto joint = [&](const ParamStore& p) {
            const std::vector<int> in(corrupted.begin(), corrupted.end() - 1);
            const std::vector<int> tgt(entry.ids.begin() + 1, entry.ids.end());
            const double rec = label_smoothed_cross_entropy(decoder_forward(p, cfg, in, kZeroEmbeddings), tgt,
                                                            smoothing);
            return joint_loss(generation_loss(p, cfg, batch, smoothing), rec, lambda);
        };
        Tape tape;
        ParamBinding bound(tape, params);
        const auto l = entry_loss(bound, cfg, entry, corrupted, smoothing);
        const double n = static_cast<double>(l.tokens);
        tape.backward(ag::scale(ag::add(l.gen, ag::scale(l.rec, lambda)), 1.0 / n));
        const auto report = testing::check_gradients(params, bound.gradients(), joint, 1e-5);
        check(report.max_rel_error < 1e-4,
              to_string(mode) + " max relative error " + sci(report.max_rel_error) + " at " +
                  report.worst);
        check.note += to_string(mode) + ": " + std::to_string(report.checked) + " entries, max rel err " +
                      sci(report.max_rel_error) + "; ";
    }
    const double secs = seconds_since(t0);
    check(secs < 60.0, "took " + std::to_string(secs) + " s");
    check.note += std::to_string(secs) + " s";
}

void zero_mask_law(Check& check) {
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor h({1 + rng.below(8), 16});
        for (double& v : h.data()) v = rng.uniform(-5, 5);
        check(cross_attention(h, kZeroEmbeddings) == Tensor(h.shape(), 0.0), "non-zero context");
    }
    for (auto mode : {CrossAttentionMode::Literal, CrossAttentionMode::Projected}) {
        ModelConfig cfg;
        cfg.vocab_size = 40;
        cfg.d_model = 16;
        cfg.layers = 2;
        cfg.heads = 4;
        cfg.d_ff = 32;
        cfg.max_len = 10;
        cfg.embed_dim = 16;
        cfg.cross_mode = mode;
        const auto params = init_params(cfg, 5);
        const std::vector<int> ids{kBos, 7, 30, 12, 9};
        ForwardOptions ablate;
        ablate.skip_cross_attention = true;
        check(decoder_forward(params, cfg, ids, kZeroEmbeddings) ==
                  decoder_forward(params, cfg, ids, kZeroEmbeddings, ablate),
              to_string(mode) + " zero mask differs from the ablation");
    }
    check.note = "100 random H, both cross-attention modes";
}

void attention_fidelity(Check& check) {
    const EmbeddingSet e({"sgns", "char"}, Tensor::matrix(2, 2, {1, 0, 0, 1}));
    const Tensor out = cross_attention(Tensor::matrix(1, 2, {1, 0}), &e);
    check(std::abs(out[0] - 0.6697615493266569) < 1e-4 && std::abs(out[1] - 0.3302384506733431) < 1e-4,
          "weights " + std::to_string(out[0]) + ", " + std::to_string(out[1]));
    const EmbeddingSet one({"sgns"}, Tensor::matrix(1, 3, {0.25, -1.5, 2.0}));
    const Tensor single = cross_attention(Tensor::matrix(2, 3, {1, 2, 3, -4, 0.5, 9}), &one);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t j = 0; j < 3; ++j) check(single.at(r, j) == one.matrix().at(0, j), "|E| = 1 output differs");
    }
    check.note = "weights [" + std::to_string(out[0]) + ", " + std::to_string(out[1]) + "]";
}

void loss_bookkeeping(Check& check) {
    const auto split = synthetic_split(12, 8, 31);
    const auto vocab = Vocabulary::learn(glosses(split), 200);
    Profile p = desk_profile();
    p.model.vocab_size = vocab.size();
    p.model.embed_dim = 8;
    p.model.dropout = 0.1;
    p.train.max_epochs = 3;
    p.train.batch_size = 4;
    TrainOptions opts;
    opts.keep_step_records = true;
    std::size_t steps = 0;
    for (double lambda : {1.0, 0.5, 0.0}) {
        p.train.lambda = lambda;
        const auto r = train(split, split, vocab, p.model, p.train, opts);
        for (const auto& s : r.steps) {
            check(s.loss_joint == s.loss_gen + lambda * s.loss_rec, "step " + std::to_string(s.step));
            if (lambda == 0.0) check(s.loss_joint == s.loss_gen, "lambda 0 step " + std::to_string(s.step));
        }
        for (const auto& e : r.epochs) check(e.loss_joint == e.loss_gen + lambda * e.loss_rec, "epoch record");
        steps += r.steps.size();
    }
    check.note = std::to_string(steps) + " logged steps at lambda 1, 0.5, 0";
}

void overfit(Check& check) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto split = synthetic_split(32, 8, 1);
    Profile p = desk_profile();
    const auto vocab = Vocabulary::learn(glosses(split), p.vocab_size);
    p.model.vocab_size = vocab.size();
    p.model.embed_dim = 8;
    p.train.max_epochs = 200;
    p.train.patience = 200;
    p.train.seed = 1;
    const auto r = train(split, split, vocab, p.model, p.train);
    const auto enc = encode_split(split, vocab, p.model.max_len);
    const DevScore s = evaluate_dev(r.best_params, p.model, vocab, enc, split, thread_count());
    const double secs = seconds_since(t0);
    check(r.epochs.size() >= 200, "ran " + std::to_string(r.epochs.size()) + " epochs");
    check(s.nll < 0.1, "NLL " + std::to_string(s.nll));
    check(s.bleu == 1.0, "BLEU " + std::to_string(s.bleu));
    check(secs < 600.0, "took " + std::to_string(secs) + " s");
    std::ostringstream note;
    note << r.epochs.size() << " epochs, vocab " << vocab.size() << ", NLL " << s.nll << ", BLEU " << s.bleu
         << ", " << secs << " s";
    check.note = note.str();
}

void schedule_endpoints(Check& check) {
    const TrainConfig cfg;
    check(noam_lr(0, cfg) == 1e-7, "step 0");
    check(noam_lr(4000, cfg) == 1e-3, "step 4000");
    check(noam_lr(4'000'000'000'000'000ULL, cfg) == 1e-9, "decay floor");
    check.note = "1e-7, 1e-3, 1e-9";
}

void bleu_oracle(Check& check) {
    static const std::vector<std::string> words{"a", "b", "c", "the", "cat", "dog"};
    Rng rng(7);
    auto sentence = [&](std::size_t min_len) {
        std::vector<std::string> s(min_len + rng.below(10 - min_len));
        for (auto& w : s) w = words[rng.below(words.size())];
        return s;
    };
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto h = sentence(0), r = sentence(1);
        worst = std::max(worst, std::abs(sentence_bleu(h, r) - testing::oracle_bleu(h, r, 4)));
        check(lemma_bleu(h, r, LemmaMap::identity()) == sentence_bleu(h, r), "identity lemma map differs");
        check(sentence_bleu(r, r) == 1.0, "hyp == ref is not 1");
    }
    check(worst <= 1e-12, "max deviation " + std::to_string(worst));
    std::ostringstream note;
    note << "1000 pairs, max deviation " << worst;
    check.note = note.str();
}

void ensemble_consistency(Check& check) {
    const auto dir = scratch_dir("ensemble");
    const auto train_path = (dir / "xx.train.json").string();
    const auto test_path = (dir / "xx.test.json").string();
    save_dataset(train_path, synthetic_split(16, 8, 41));
    save_dataset(test_path, synthetic_split(6, 8, 42));
    const int code = cli({"train", "--train", train_path, "--dev", train_path, "--profile", "desk", "--width",
                          "8", "--max-epochs", "3", "--seeds", "1,2,3", "--out-dir", (dir / "run").string()});
    check(code == 0, "training exited with " + std::to_string(code));
    if (code != 0) return;
    const auto ckpt = [&](int seed) { return (dir / "run" / ("seed-" + std::to_string(seed)) / "model.json").string(); };
    auto generate = [&](const std::string& list, const std::string& name) {
        const auto path = (dir / name).string();
        const int rc = cli({"generate", "--checkpoints", list, "--test", test_path, "--width", "8",
                            "--submission", path});
        check(rc == 0, "generate " + list + " exited with " + std::to_string(rc));
        return read_file(path);
    };
    const auto single = generate(ckpt(1), "single.json");
    for (int k : {2, 3, 5}) {
        std::string list = ckpt(1);
        for (int i = 1; i < k; ++i) list += "," + ckpt(1);
        check(generate(list, "k" + std::to_string(k) + ".json") == single, "k = " + std::to_string(k));
    }
    const auto abc = generate(ckpt(1) + "," + ckpt(2) + "," + ckpt(3), "abc.json");
    check(generate(ckpt(3) + "," + ckpt(1) + "," + ckpt(2), "cab.json") == abc, "order cab");
    check(generate(ckpt(2) + "," + ckpt(3) + "," + ckpt(1), "bca.json") == abc, "order bca");
    check.note = "k in {2, 3, 5} and three orderings of three checkpoints";
}

void tokenizer_round_trip(Check& check) {
    const std::vector<std::string> alphabet{"a", "b", "c", "d", "é", "ж", "'", "-"};
    std::vector<std::string> corpus;
    for (const auto& x : alphabet) {
        for (const auto& y : alphabet) corpus.push_back(x + y + " " + y + x + x);
    }
    corpus.push_back("a  b");
    const auto v = Vocabulary::learn(corpus, 80);
    Rng rng(2);
    int failures = 0;
    for (int i = 0; i < 10000; ++i) {
        std::string s;
        const auto len = rng.below(16);
        for (std::uint64_t k = 0; k < len; ++k) {
            const auto pick = rng.below(alphabet.size() + 2);
            s += pick >= alphabet.size() ? std::string(" ") : alphabet[pick];
        }
        failures += v.decode(v.encode(s)) != s;
    }
    check(failures == 0, std::to_string(failures) + " strings failed to round-trip");
    const auto aaab = Vocabulary::learn(std::vector<std::string>{"aaab", "aaab"}, 100);
    check(aaab.merges().size() >= 2 && aaab.merges()[0] == Vocabulary::Merge{"a", "a"} &&
              aaab.merges()[1] == Vocabulary::Merge{"aa", "a"},
          "aaab merges");
    check.note = "10000 strings; first merges (a,a), (aa,a)";
}

void corruption_statistics(Check& check) {
    std::vector<int> ids{kBos};
    for (int i = 0; i < 10000; ++i) ids.push_back(kNumSpecials + i % 300);
    ids.push_back(kEos);
    Rng rng(12345);
    std::vector<bool> selected;
    corrupt_gloss(ids, 0.2, rng, 305, CorruptionMode::SubstituteBlank, &selected);
    const double frac = static_cast<double>(std::count(selected.begin(), selected.end(), true)) / 10000.0;
    check(frac >= 0.1897 && frac <= 0.2103, "fraction " + std::to_string(frac));
    check(corrupt_gloss(ids, 0.0, rng, 305) == ids, "p = 0 changed the sequence");
    check.note = "corrupted fraction " + std::to_string(frac);
}

void dataset_contract(Check& check) {
    auto entry = [](const std::string& id, std::size_t width) {
        return json{{"id", id},
                    {"gloss", "a b"},
                    {"sgns", std::vector<double>(width, 0.1)},
                    {"char", std::vector<double>(width, 0.2)}};
    };
    const auto ok = parse_dataset(json::array({entry("es.1", 256)}));
    check(ok.entries[0].embeddings().count() == 2, "entry without electra");
    for (std::size_t w : {255u, 257u, 8u}) {
        try {
            parse_dataset(json::array({entry("es.1", 256), entry("es.bad", w)}));
            check(false, "width " + std::to_string(w) + " accepted");
        } catch (const DataError& e) {
            check(std::string(e.what()).find("es.bad") != std::string::npos, "diagnostic lacks the id");
        }
    }
    std::string real;
    if (const char* env = std::getenv("CAMF_EN_TRAIN")) real = env;
    if (!real.empty() && fs::exists(real)) {
        const auto s = stats(load_dataset(real));
        check(s.entries == 43608, "entries " + std::to_string(s.entries));
        check(std::abs(s.mean_gloss_length - 11.73) <= 0.05, "mean length " + std::to_string(s.mean_gloss_length));
        check.note = "real English file: " + std::to_string(s.entries) + " entries, mean length " +
                     std::to_string(s.mean_gloss_length);
    } else {
        check.note = "real English train file not present (set CAMF_EN_TRAIN); count/length check skipped";
    }
}

void determinism(Check& check) {
    const auto dir = scratch_dir("determinism");
    const auto train_path = (dir / "xx.train.json").string();
    save_dataset(train_path, synthetic_split(16, 8, 51));
    for (const char* run : {"a", "b"}) {
        const int code = cli({"train", "--train", train_path, "--dev", train_path, "--profile", "desk",
                              "--width", "8", "--seeds", "3", "--out-dir", (dir / run).string()});
        check(code == 0, std::string("run ") + run + " exited with " + std::to_string(code));
    }
    auto strip = [](const std::string& log) {
        std::string out;
        std::istringstream in(log);
        for (std::string line; std::getline(in, line);) {
            auto j = json::parse(line);
            j.erase("time");
            out += j.dump() + "\n";
        }
        return out;
    };
    const auto a = dir / "a" / "seed-3", b = dir / "b" / "seed-3";
    check(read_file((a / "model.bin").string()) == read_file((b / "model.bin").string()), "payload differs");
    check(read_file((a / "model.json").string()) == read_file((b / "model.json").string()), "manifest differs");
    const auto log = read_file((a / "train.log.jsonl").string());
    check(strip(log) == strip(read_file((b / "train.log.jsonl").string())), "logs differ");
    check.note = std::to_string(std::count(log.begin(), log.end(), '\n')) + " epochs per run";
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"zero-mask law", zero_mask_law},
        {"cross-attention fidelity", attention_fidelity},
        {"joint-loss bookkeeping", loss_bookkeeping},
        {"overfit integration", overfit},
        {"schedule endpoints", schedule_endpoints},
        {"BLEU oracle equivalence", bleu_oracle},
        {"ensemble consistency", ensemble_consistency},
        {"tokenizer round-trip", tokenizer_round_trip},
        {"corruption statistics", corruption_statistics},
        {"dataset contract", dataset_contract},
        {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check check;
        try {
            criteria[i].second(check);
        } catch (const std::exception& e) {
            check.failures.push_back(std::string("exception: ") + e.what());
        }
        const bool ok = check.failures.empty();
        failed += !ok;
        std::cout << "AC" << (i + 1) << " " << (ok ? "PASS" : "FAIL") << "  " << criteria[i].first;
        if (!check.note.empty()) std::cout << "  (" << check.note << ")";
        std::cout << "\n";
        for (const auto& f : check.failures) std::cout << "    " << f << "\n";
        std::cout.flush();
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
