#include "camf/model.hpp"

#include <algorithm>
#include <cmath>

#include "camf/error.hpp"
#include "camf/rng.hpp"
#include "camf/tokenizer.hpp"

namespace camf {

std::string to_string(CrossAttentionMode mode) {
    return mode == CrossAttentionMode::Literal ? "literal" : "projected";
}

CrossAttentionMode cross_attention_mode_from_string(const std::string& name) {
    if (name == "literal") return CrossAttentionMode::Literal;
    if (name == "projected") return CrossAttentionMode::Projected;
    throw InvalidConfig("unknown cross-attention mode '" + name + "'");
}

void ModelConfig::validate() const {
    if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) {
        throw InvalidConfig("vocab_size must exceed the 5 special tokens");
    }
    if (d_model == 0 || layers == 0 || heads == 0 || d_ff == 0 || max_len == 0 ||
        embed_dim == 0) {
        throw InvalidConfig("model dimensions must be positive");
    }
    if (d_model % heads != 0) {
        throw InvalidConfig("d_model " + std::to_string(d_model) + " is not divisible by " +
                            std::to_string(heads) + " heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw InvalidConfig("dropout must lie in [0, 1)");
    }
    if (cross_mode == CrossAttentionMode::Literal && embed_dim != d_model) {
        throw InvalidConfig("literal cross-attention needs embedding width (" +
                            std::to_string(embed_dim) + ") == d_model (" +
                            std::to_string(d_model) + "); use projected mode");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"vocab_size", vocab_size}, {"d_model", d_model},
            {"layers", layers},         {"heads", heads},
            {"d_ff", d_ff},             {"max_len", max_len},
            {"embed_dim", embed_dim},   {"dropout", dropout},
            {"ln_eps", ln_eps},         {"cross_attention", camf::to_string(cross_mode)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) { return from_json(j, ModelConfig{}); }

ModelConfig ModelConfig::from_json(const nlohmann::json& j, ModelConfig c) {
    if (!j.is_object()) throw InvalidConfig("model config must be a JSON object");
    try {
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.d_model = j.value("d_model", c.d_model);
        c.layers = j.value("layers", c.layers);
        c.heads = j.value("heads", c.heads);
        c.d_ff = j.value("d_ff", c.d_ff);
        c.max_len = j.value("max_len", c.max_len);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.dropout = j.value("dropout", c.dropout);
        c.ln_eps = j.value("ln_eps", c.ln_eps);
        if (j.contains("cross_attention")) {
            c.cross_mode = cross_attention_mode_from_string(j.at("cross_attention").get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("malformed model config: ") + e.what());
    }
    return c;
}

EmbeddingSet::EmbeddingSet(std::vector<std::string> names, Tensor rows)
    : names_(std::move(names)), rows_(std::move(rows)) {
    if (rows_.rank() != 2 || rows_.rows() != names_.size()) {
        throw InvalidShape("embedding set: " + std::to_string(names_.size()) + " names for " +
                           shape_string(rows_.shape()) + " rows");
    }
    if (!rows_.all_finite()) {
        throw DataError("embedding set contains non-finite values");
    }
}

bool EmbeddingSet::has(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

namespace {

Tensor zero_conditioning(std::size_t width) { return Tensor({1, width}, 0.0); }

const Tensor& conditioning_rows(const EmbeddingSet* e, const Tensor& zero) {
    return e ? e->matrix() : zero;
}

std::string layer_prefix(std::size_t i) { return "layers." + std::to_string(i) + "."; }

}  // namespace

Tensor cross_attention(const Tensor& hidden, const EmbeddingSet* embeddings) {
    const Tensor zero = zero_conditioning(hidden.cols());
    const Tensor& e = conditioning_rows(embeddings, zero);
    if (e.cols() != hidden.cols()) {
        throw InvalidShape("cross_attention: embedding width " + std::to_string(e.cols()) +
                           " != hidden width " + std::to_string(hidden.cols()));
    }
    Tensor logits = matmul_nt(hidden, e);
    const double s = 1.0 / std::sqrt(static_cast<double>(hidden.cols()));
    for (double& v : logits.data()) v *= s;
    return matmul(softmax_rows(logits), e);
}

Var cross_attention(Var hidden, const EmbeddingSet* embeddings, double dropout, Rng* rng) {
    const std::size_t d = hidden.value().cols();
    Tape& tape = *hidden.tape();
    Var e = tape.constant(embeddings ? embeddings->matrix() : zero_conditioning(d));
    if (e.value().cols() != d) {
        throw InvalidShape("cross_attention: embedding width " +
                           std::to_string(e.value().cols()) + " != hidden width " +
                           std::to_string(d));
    }
    Var logits = ag::scale(ag::matmul_nt(hidden, e), 1.0 / std::sqrt(static_cast<double>(d)));
    Var weights = ag::softmax_rows(logits);
    if (rng && dropout > 0.0) {
        weights = ag::dropout(weights, dropout, *rng);
    }
    return ag::matmul(weights, e);
}

std::vector<std::string> parameter_names(const ModelConfig& cfg) {
    std::vector<std::string> names{"tok_emb"};
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto p = layer_prefix(l);
        for (const char* n : {"ln_self.gain", "ln_self.bias", "self.wq", "self.wk", "self.wv",
                              "self.wo", "ln_cross.gain", "ln_cross.bias"}) {
            names.push_back(p + n);
        }
        if (cfg.cross_mode == CrossAttentionMode::Projected) {
            for (const char* n : {"cross.wq", "cross.wk", "cross.wv", "cross.wo"}) {
                names.push_back(p + n);
            }
        }
        for (const char* n : {"ln_ffn.gain", "ln_ffn.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"}) {
            names.push_back(p + n);
        }
    }
    for (const char* n : {"final_ln.gain", "final_ln.bias", "out.w", "out.b"}) {
        names.push_back(n);
    }
    return names;
}

namespace {

Shape parameter_shape(const std::string& name, const ModelConfig& c) {
    const std::size_t d = c.d_model;
    auto ends_with = [&](const char* s) {
        const std::string suf(s);
        return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (name == "tok_emb") return {c.vocab_size, d};
    if (name == "out.w") return {d, c.vocab_size};
    if (name == "out.b") return {c.vocab_size};
    if (ends_with(".gain") || ends_with(".bias")) return {d};
    if (ends_with("cross.wk") || ends_with("cross.wv")) return {c.embed_dim, d};
    if (ends_with(".wq") || ends_with(".wk") || ends_with(".wv") || ends_with(".wo")) return {d, d};
    if (ends_with("ffn.w1")) return {d, c.d_ff};
    if (ends_with("ffn.b1")) return {c.d_ff};
    if (ends_with("ffn.w2")) return {c.d_ff, d};
    if (ends_with("ffn.b2")) return {d};
    throw InvalidConfig("no shape rule for parameter '" + name + "'");
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed({seed, 0x1417}));
    ParamStore params;
    for (const auto& name : parameter_names(cfg)) {
        Shape shape = parameter_shape(name, cfg);
        Tensor t(shape, 0.0);
        const bool is_gain = name.size() > 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
        if (name == "tok_emb") {
            const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
            for (double& v : t.data()) v = rng.normal(0.0, sd);
        } else if (is_gain) {
            t.fill(1.0);
        } else if (shape.size() == 2) {
            const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            for (double& v : t.data()) v = rng.uniform(-bound, bound);
        }
        params.emplace(name, std::move(t));
    }
    return params;
}

void check_params(const ParamStore& params, const ModelConfig& cfg) {
    const auto names = parameter_names(cfg);
    if (params.size() != names.size()) {
        throw InvalidConfig("parameter set has " + std::to_string(params.size()) +
                            " tensors, config expects " + std::to_string(names.size()));
    }
    for (const auto& name : names) {
        auto it = params.find(name);
        if (it == params.end()) {
            throw InvalidConfig("missing parameter '" + name + "'");
        }
        if (it->second.shape() != parameter_shape(name, cfg)) {
            throw InvalidConfig("parameter '" + name + "' has shape " +
                                shape_string(it->second.shape()) + ", expected " +
                                shape_string(parameter_shape(name, cfg)));
        }
    }
}

Tensor position_table(std::size_t rows, std::size_t d_model) {
    Tensor pe({rows, d_model});
    for (std::size_t pos = 0; pos < rows; ++pos) {
        for (std::size_t i = 0; i < d_model; ++i) {
            const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
            pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

namespace {

Var multi_head(Var q, Var k, Var v, std::size_t heads, bool causal, double dropout, Rng* rng) {
    const std::size_t d = q.value().cols();
    const std::size_t dh = d / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = ag::slice_cols(q, h * dh, dh);
        Var kh = ag::slice_cols(k, h * dh, dh);
        Var vh = ag::slice_cols(v, h * dh, dh);
        Var w = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), s), causal);
        if (rng && dropout > 0.0) {
            w = ag::dropout(w, dropout, *rng);
        }
        outs.push_back(ag::matmul(w, vh));
    }
    return heads == 1 ? outs.front() : ag::concat_cols(outs);
}

}  // namespace

Var decoder_forward(const ParamBinding& p, const ModelConfig& cfg, std::span<const int> ids,
                    const EmbeddingSet* embeddings, const ForwardOptions& opts) {
    if (ids.empty()) {
        throw LengthError("decoder_forward: empty input");
    }
    if (ids.size() > cfg.max_len) {
        throw LengthError("decoder_forward: " + std::to_string(ids.size()) +
                          " tokens exceed max_len " + std::to_string(cfg.max_len));
    }
    if (embeddings && embeddings->width() != cfg.embed_dim) {
        throw InvalidShape("embedding width " + std::to_string(embeddings->width()) +
                           " != configured " + std::to_string(cfg.embed_dim));
    }
    Rng* rng = opts.training ? opts.dropout_rng : nullptr;
    const double drop = cfg.dropout;
    Var tok = p["tok_emb"];
    Tape& tape = *tok.tape();

    Var x = ag::scale(ag::gather_rows(tok, ids), std::sqrt(static_cast<double>(cfg.d_model)));
    x = ag::add(x, tape.constant(position_table(ids.size(), cfg.d_model)));

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto pre = layer_prefix(l);
        Var h = ag::layer_norm(x, p[pre + "ln_self.gain"], p[pre + "ln_self.bias"], cfg.ln_eps);
        Var a = multi_head(ag::matmul(h, p[pre + "self.wq"]), ag::matmul(h, p[pre + "self.wk"]),
                           ag::matmul(h, p[pre + "self.wv"]), cfg.heads, true, drop, rng);
        x = ag::add(x, ag::matmul(a, p[pre + "self.wo"]));

        if (!opts.skip_cross_attention) {
            h = ag::layer_norm(x, p[pre + "ln_cross.gain"], p[pre + "ln_cross.bias"], cfg.ln_eps);
            Var c;
            if (cfg.cross_mode == CrossAttentionMode::Literal) {
                c = cross_attention(h, embeddings, drop, rng);
            } else {
                Var e = tape.constant(embeddings ? embeddings->matrix()
                                                 : zero_conditioning(cfg.embed_dim));
                Var o = multi_head(ag::matmul(h, p[pre + "cross.wq"]),
                                   ag::matmul(e, p[pre + "cross.wk"]),
                                   ag::matmul(e, p[pre + "cross.wv"]), cfg.heads, false, drop, rng);
                c = ag::matmul(o, p[pre + "cross.wo"]);
            }
            x = ag::add(x, c);
        }

        h = ag::layer_norm(x, p[pre + "ln_ffn.gain"], p[pre + "ln_ffn.bias"], cfg.ln_eps);
        Var f = ag::gelu(ag::add_row(ag::matmul(h, p[pre + "ffn.w1"]), p[pre + "ffn.b1"]));
        if (rng && drop > 0.0) {
            f = ag::dropout(f, drop, *rng);
        }
        f = ag::add_row(ag::matmul(f, p[pre + "ffn.w2"]), p[pre + "ffn.b2"]);
        x = ag::add(x, f);
    }
    x = ag::layer_norm(x, p["final_ln.gain"], p["final_ln.bias"], cfg.ln_eps);
    return ag::add_row(ag::matmul(x, p["out.w"]), p["out.b"]);
}

Tensor decoder_forward(const ParamStore& params, const ModelConfig& cfg, std::span<const int> ids,
                       const EmbeddingSet* embeddings, const ForwardOptions& opts) {
    Tape tape;
    ParamBinding bound(tape, params);
    return decoder_forward(bound, cfg, ids, embeddings, opts).value();
}

IncrementalDecoder::IncrementalDecoder(const ParamStore& params, const ModelConfig& cfg,
                                       const EmbeddingSet* embeddings)
    : params_(&params),
      cfg_(&cfg),
      embeddings_(embeddings),
      zero_rows_(zero_conditioning(cfg.embed_dim)),
      caches_(cfg.layers) {
    check_params(params, cfg);
    if (embeddings && embeddings->width() != cfg.embed_dim) {
        throw InvalidShape("embedding width " + std::to_string(embeddings->width()) +
                           " != configured " + std::to_string(cfg.embed_dim));
    }
    if (cfg.cross_mode == CrossAttentionMode::Projected) {
        const Tensor& e = conditioning_rows(embeddings_, zero_rows_);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const auto pre = layer_prefix(l);
            caches_[l].cross_keys = matmul(e, params.at(pre + "cross.wk"));
            caches_[l].cross_values = matmul(e, params.at(pre + "cross.wv"));
        }
    }
}

namespace {

// One query row against `count` cached key/value rows, per head, with the
// same accumulation order as the batched path.
std::vector<double> attend(std::span<const double> q, const double* keys, const double* values,
                           std::size_t count, std::size_t d, std::size_t heads) {
    const std::size_t dh = d / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> out(d, 0.0);
    Tensor scores({1, count});
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t j = 0; j < count; ++j) {
            double dotp = 0.0;
            for (std::size_t p = 0; p < dh; ++p) {
                dotp += q[off + p] * keys[j * d + off + p];
            }
            scores[j] = dotp * s;
        }
        const Tensor w = softmax_rows(scores);
        for (std::size_t j = 0; j < count; ++j) {
            const double wj = w[j];
            for (std::size_t p = 0; p < dh; ++p) {
                out[off + p] += wj * values[j * d + off + p];
            }
        }
    }
    return out;
}

}  // namespace

std::vector<double> IncrementalDecoder::step(int token) {
    const ModelConfig& c = *cfg_;
    const ParamStore& p = *params_;
    if (length_ >= c.max_len) {
        throw LengthError("incremental decoder: max_len " + std::to_string(c.max_len) + " reached");
    }
    const Tensor& emb = p.at("tok_emb");
    if (token < 0 || static_cast<std::size_t>(token) >= emb.rows()) {
        throw IndexError("token id " + std::to_string(token) + " outside vocabulary");
    }
    const std::size_t d = c.d_model;
    const double emb_scale = std::sqrt(static_cast<double>(d));
    const Tensor pe = position_table(length_ + 1, d);
    Tensor x({1, d});
    for (std::size_t j = 0; j < d; ++j) {
        x[j] = emb.at(static_cast<std::size_t>(token), j) * emb_scale + pe.at(length_, j);
    }

    for (std::size_t l = 0; l < c.layers; ++l) {
        const auto pre = layer_prefix(l);
        LayerCache& cache = caches_[l];

        Tensor h = layer_norm_rows(x, p.at(pre + "ln_self.gain"), p.at(pre + "ln_self.bias"), c.ln_eps);
        const Tensor q = matmul(h, p.at(pre + "self.wq"));
        const Tensor k = matmul(h, p.at(pre + "self.wk"));
        const Tensor v = matmul(h, p.at(pre + "self.wv"));
        cache.keys.insert(cache.keys.end(), k.data().begin(), k.data().end());
        cache.values.insert(cache.values.end(), v.data().begin(), v.data().end());
        Tensor a({1, d}, attend(q.data(), cache.keys.data(), cache.values.data(), length_ + 1, d,
                                c.heads));
        add_inplace(x, matmul(a, p.at(pre + "self.wo")));

        h = layer_norm_rows(x, p.at(pre + "ln_cross.gain"), p.at(pre + "ln_cross.bias"), c.ln_eps);
        if (c.cross_mode == CrossAttentionMode::Literal) {
            add_inplace(x, cross_attention(h, embeddings_));
        } else {
            const Tensor cq = matmul(h, p.at(pre + "cross.wq"));
            Tensor o({1, d}, attend(cq.data(), cache.cross_keys.data().data(),
                                    cache.cross_values.data().data(), cache.cross_keys.rows(), d,
                                    c.heads));
            add_inplace(x, matmul(o, p.at(pre + "cross.wo")));
        }

        h = layer_norm_rows(x, p.at(pre + "ln_ffn.gain"), p.at(pre + "ln_ffn.bias"), c.ln_eps);
        Tensor f = matmul(h, p.at(pre + "ffn.w1"));
        const Tensor& b1 = p.at(pre + "ffn.b1");
        for (std::size_t j = 0; j < f.size(); ++j) f[j] = gelu(f[j] + b1[j]);
        f = matmul(f, p.at(pre + "ffn.w2"));
        const Tensor& b2 = p.at(pre + "ffn.b2");
        for (std::size_t j = 0; j < d; ++j) x[j] += f[j] + b2[j];
    }
    const Tensor h = layer_norm_rows(x, p.at("final_ln.gain"), p.at("final_ln.bias"), c.ln_eps);
    Tensor logits = matmul(h, p.at("out.w"));
    const Tensor& ob = p.at("out.b");
    for (std::size_t j = 0; j < logits.size(); ++j) logits[j] += ob[j];
    ++length_;
    return std::move(logits.storage());
}

}  // namespace camf
