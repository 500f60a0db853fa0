#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "camf/autograd.hpp"
#include "camf/tensor.hpp"

namespace camf {

class Rng;

enum class CrossAttentionMode {
    // softmax(H E^T / sqrt(d_h)) E with no learned maps; needs d_e == d_h.
    Literal,
    // Learned query/key/value/output maps, multi-head; any d_e.
    Projected,
};

std::string to_string(CrossAttentionMode mode);
CrossAttentionMode cross_attention_mode_from_string(const std::string& name);

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 256;
    std::size_t layers = 3;
    std::size_t heads = 8;
    std::size_t d_ff = 1024;
    std::size_t max_len = 128;
    std::size_t embed_dim = 256;
    double dropout = 0.1;
    double ln_eps = 1e-5;
    CrossAttentionMode cross_mode = CrossAttentionMode::Literal;

    // Throws InvalidConfig on inconsistent settings.
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    // Keys present in `j` override `base`.
    static ModelConfig from_json(const nlohmann::json& j, ModelConfig base);
    bool operator==(const ModelConfig&) const = default;
};

// The conditioning vectors of one word, stacked as rows of an m x d_e matrix
// (sgns, char and optionally electra).
class EmbeddingSet {
public:
    EmbeddingSet(std::vector<std::string> names, Tensor rows);

    const Tensor& matrix() const noexcept { return rows_; }
    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t count() const noexcept { return rows_.rows(); }
    std::size_t width() const noexcept { return rows_.cols(); }
    bool has(const std::string& name) const;

private:
    std::vector<std::string> names_;
    Tensor rows_;
};

// Passing this in place of an embedding set feeds a zero vector into
// cross-attention, which masks the conditioning out.
inline constexpr const EmbeddingSet* kZeroEmbeddings = nullptr;

// Literal-mode cross-attention, softmax(H E^T / sqrt(d_h)) E. With E = zero
// the result is exactly the zero matrix. Throws InvalidShape if E's width
// differs from H's.
Tensor cross_attention(const Tensor& hidden, const EmbeddingSet* embeddings);
Var cross_attention(Var hidden, const EmbeddingSet* embeddings, double dropout = 0.0,
                    Rng* rng = nullptr);

struct ForwardOptions {
    // Dropout is active only when training and a generator is supplied.
    bool training = false;
    Rng* dropout_rng = nullptr;
    // Replaces every cross-attention sublayer with the bare residual path.
    bool skip_cross_attention = false;
};

// Canonical parameter names in creation order.
std::vector<std::string> parameter_names(const ModelConfig& cfg);

// Deterministic in `seed`: linear weights ~ U(+-sqrt(6 / (fan_in + fan_out))),
// token embeddings ~ N(0, d_model^-1/2), norm gains 1, biases 0.
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Throws InvalidConfig when a tensor is missing or has the wrong shape.
void check_params(const ParamStore& params, const ModelConfig& cfg);

// Logits [T x V] for the T input ids. Position t depends only on ids[0..t]
// and on the embeddings. Throws LengthError when T exceeds max_len.
Var decoder_forward(const ParamBinding& params, const ModelConfig& cfg, std::span<const int> ids,
                    const EmbeddingSet* embeddings, const ForwardOptions& opts = {});
Tensor decoder_forward(const ParamStore& params, const ModelConfig& cfg, std::span<const int> ids,
                       const EmbeddingSet* embeddings, const ForwardOptions& opts = {});

// Sinusoidal position table [rows x d_model].
Tensor position_table(std::size_t rows, std::size_t d_model);

// Token-at-a-time evaluation with cached self-attention keys and values.
// Produces the same logits as decoder_forward for each prefix.
class IncrementalDecoder {
public:
    IncrementalDecoder(const ParamStore& params, const ModelConfig& cfg,
                       const EmbeddingSet* embeddings);

    // Appends `token` and returns the logits for the next position.
    std::vector<double> step(int token);
    std::size_t length() const noexcept { return length_; }
    const ModelConfig& config() const noexcept { return *cfg_; }

private:
    struct LayerCache {
        std::vector<double> keys;    // length_ x d_model
        std::vector<double> values;  // length_ x d_model
        Tensor cross_keys;           // projected mode: m x d_model
        Tensor cross_values;
    };

    const ParamStore* params_;
    const ModelConfig* cfg_;
    const EmbeddingSet* embeddings_;
    Tensor zero_rows_;
    std::vector<LayerCache> caches_;
    std::size_t length_ = 0;
};

}  // namespace camf
