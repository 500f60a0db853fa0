#pragma once

#include <string>
#include <vector>

#include "camf/dataset.hpp"
#include "camf/tokenizer.hpp"
#include "camf/training.hpp"

namespace camf::testing {

// Toy two-entry batch over a tiny vocabulary, shared by loss goldens.
struct ToyBatch {
    camf::Vocabulary vocab;
    camf::ModelConfig cfg;
    camf::DatasetSplit split;
    std::vector<camf::EncodedEntry> entries;
};

inline ToyBatch toy_batch() {
    ToyBatch t;
    t.split = camf::synthetic_split(2, 8, 0);
    std::vector<std::string> corpus;
    for (const auto& e : t.split.entries) corpus.push_back(e.gloss);
    t.vocab = camf::Vocabulary::learn(corpus, 40);
    t.cfg.vocab_size = t.vocab.size();
    t.cfg.d_model = 8;
    t.cfg.layers = 1;
    t.cfg.heads = 2;
    t.cfg.d_ff = 16;
    t.cfg.max_len = 48;
    t.cfg.embed_dim = 8;
    t.cfg.dropout = 0.0;
    t.entries = camf::encode_split(t.split, t.vocab, t.cfg.max_len);
    return t;
}

}  // namespace camf::testing
