#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aga/rng.hpp"
#include "aga/tensor.hpp"

namespace aga {

struct EncoderConfig {
    size_t hidden_dim = 64;
    size_t num_heads = 4;
    size_t text_layers = 6;
    size_t image_layers = 4;
    size_t cross_layers = 2;
    size_t max_text_len = 32; // total positions including [CLS] and [SEP]
    size_t patch_grid = 16;   // M
    size_t patch_dim = 12;    // raw patch feature dimension
    size_t ffn_mult = 4;
    size_t itc_dim = 32;      // contrastive projection dimension
    bool tie_mlm = true;      // MLM head weight-tied to the token embedding
    size_t vocab_size = 0;    // filled from the corpus

    void validate() const;
};

/// Class-token attention rows recorded during text encoding, post-softmax and
/// after padding masking: trace[layer][head][key position]. Each row sums to
/// 1 over non-pad positions.
using AttentionTrace = std::vector<std::vector<std::vector<double>>>;

/// Plain (rows x cols) value matrix for recorded attention maps.
struct AttnMap {
    size_t rows = 0, cols = 0;
    std::vector<double> values;
    double at(size_t i, size_t j) const { return values[i * cols + j]; }
};

struct LinearParams {
    Tensor weight; // (in, out)
    Tensor bias;   // (out)
};

struct AttentionParams {
    LinearParams query, key, value, output;
};

struct BlockParams {
    AttentionParams attn;
    Tensor ln_attn_gain, ln_attn_bias;
    LinearParams ffn_in, ffn_out;
    Tensor ln_ffn_gain, ln_ffn_bias;
};

struct CrossBlockParams {
    AttentionParams self_attn;
    Tensor ln_self_gain, ln_self_bias;
    AttentionParams cross_attn;
    Tensor ln_cross_gain, ln_cross_bias;
    LinearParams ffn_in, ffn_out;
    Tensor ln_ffn_gain, ln_ffn_bias;
};

struct TextEncoderParams {
    Tensor token_embedding;    // (vocab, d)
    Tensor position_embedding; // (max_text_len, d)
    std::vector<BlockParams> blocks;
};

struct ImageEncoderParams {
    LinearParams patch_proj;   // (patch_dim, d)
    Tensor class_token;        // (1, d)
    Tensor position_embedding; // (M+1, d)
    std::vector<BlockParams> blocks;
};

struct CrossEncoderParams {
    std::vector<CrossBlockParams> blocks;
};

struct HeadParams {
    LinearParams text_proj;  // (d, itc_dim)
    LinearParams image_proj; // (d, itc_dim)
    LinearParams itm;        // (d, 2)
    LinearParams mlm;        // (d, vocab); unused when tied
    Tensor mlm_bias;         // (vocab)
};

struct TextForward {
    Tensor hidden; // (T, d); position 0 is the class token
    AttentionTrace trace;
};

struct CrossForward {
    Tensor hidden;                      // (T_text, d)
    std::vector<AttnMap> cross_maps;    // per layer, head-mean text->image rows
};

Tensor linear(const Tensor& x, const LinearParams& p);

/// Multi-head scaled dot-product attention, queries and keys/values from
/// separate sequences. `key_mask` (optional) is an additive row over key
/// positions. `class_rows` collects each head's post-softmax row for query 0;
/// `mean_map` collects the head-mean full attention map.
Tensor multihead_attention(const AttentionParams& p, const Tensor& queries_in, const Tensor& keys_in,
                           const Tensor* key_mask, size_t num_heads,
                           std::vector<std::vector<double>>* class_rows, AttnMap* mean_map);

/// The online/momentum-capable model: text, image, and cross encoders plus
/// the projection, ITM and MLM heads.
struct Model {
    EncoderConfig config;
    TextEncoderParams text;
    ImageEncoderParams image;
    CrossEncoderParams cross;
    HeadParams heads;

    static Model init(const EncoderConfig& config, Rng& rng);
    Model clone(bool requires_grad) const;
    void copy_values_from(const Model& other);

    void visit_params(const std::function<void(const std::string&, Tensor&)>& fn);
    void visit_params(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    size_t param_count() const;

    /// Contextual embeddings plus, when requested, the full class-attention
    /// trace. `pad_mask[i]` true marks a padded key position.
    TextForward encode_text(std::span<const int> token_ids, const std::vector<bool>& pad_mask,
                            bool record_trace) const;

    /// Patch features (M * patch_dim values) -> (M+1, d) embedding with the
    /// class token at position 0.
    Tensor encode_image(std::span<const double> patches) const;

    /// Text queries attend to image keys/values per layer (self-attention,
    /// cross-attention, feed-forward). Records head-mean cross maps.
    CrossForward cross_encode(const Tensor& text_hidden, const Tensor& image_hidden,
                              const std::vector<bool>& text_pad_mask) const;

    /// Vocabulary logits for the given (non-class) positions of the cross
    /// encoder's hidden state.
    Tensor mlm_logits(const Tensor& cross_hidden, const std::vector<size_t>& positions) const;

    Tensor text_global_feature(const Tensor& text_hidden) const;   // (1, itc_dim), unit
    Tensor image_global_feature(const Tensor& image_hidden) const; // (1, itc_dim), unit
    Tensor itm_logits(const Tensor& cross_cls_rows) const;         // (n, 2)
};

} // namespace aga
