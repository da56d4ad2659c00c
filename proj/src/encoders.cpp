#include "aga/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include "aga/vocab.hpp"

namespace aga {

namespace {

constexpr double kMaskedLogit = -1e30;

Tensor xavier_linear(size_t in, size_t out, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (double& v : w) v = rng.uniform(-limit, limit);
    Tensor t({in, out}, std::move(w));
    t.set_requires_grad(true);
    return t;
}

Tensor normal_tensor(std::vector<size_t> shape, double stddev, Rng& rng) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, stddev);
    Tensor t(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

Tensor const_vector(size_t n, double fill, bool requires_grad) {
    Tensor t({n}, fill);
    t.set_requires_grad(requires_grad);
    return t;
}

LinearParams init_linear(size_t in, size_t out, Rng& rng) {
    return {xavier_linear(in, out, rng), const_vector(out, 0.0, true)};
}

LinearParams zero_linear(size_t in, size_t out) {
    Tensor w({in, out}, 0.0);
    w.set_requires_grad(true);
    return {w, const_vector(out, 0.0, true)};
}

AttentionParams init_attention(size_t d, Rng& rng) {
    return {init_linear(d, d, rng), init_linear(d, d, rng), init_linear(d, d, rng),
            init_linear(d, d, rng)};
}

BlockParams init_block(size_t d, size_t ffn, Rng& rng) {
    BlockParams b;
    b.attn = init_attention(d, rng);
    b.ln_attn_gain = const_vector(d, 1.0, true);
    b.ln_attn_bias = const_vector(d, 0.0, true);
    b.ffn_in = init_linear(d, ffn, rng);
    b.ffn_out = init_linear(ffn, d, rng);
    b.ln_ffn_gain = const_vector(d, 1.0, true);
    b.ln_ffn_bias = const_vector(d, 0.0, true);
    return b;
}

CrossBlockParams init_cross_block(size_t d, size_t ffn, Rng& rng) {
    CrossBlockParams b;
    b.self_attn = init_attention(d, rng);
    b.ln_self_gain = const_vector(d, 1.0, true);
    b.ln_self_bias = const_vector(d, 0.0, true);
    b.cross_attn = init_attention(d, rng);
    b.ln_cross_gain = const_vector(d, 1.0, true);
    b.ln_cross_bias = const_vector(d, 0.0, true);
    b.ffn_in = init_linear(d, ffn, rng);
    b.ffn_out = init_linear(ffn, d, rng);
    b.ln_ffn_gain = const_vector(d, 1.0, true);
    b.ln_ffn_bias = const_vector(d, 0.0, true);
    return b;
}

Tensor block_forward(const BlockParams& b, const Tensor& x_in, const Tensor* key_mask,
                     size_t num_heads, std::vector<std::vector<double>>* class_rows) {
    Tensor a = multihead_attention(b.attn, x_in, x_in, key_mask, num_heads, class_rows, nullptr);
    Tensor x = layer_norm(add(x_in, a), b.ln_attn_gain, b.ln_attn_bias);
    Tensor f = linear(gelu(linear(x, b.ffn_in)), b.ffn_out);
    return layer_norm(add(x, f), b.ln_ffn_gain, b.ln_ffn_bias);
}

Tensor pad_mask_row(const std::vector<bool>& pad_mask) {
    std::vector<double> m(pad_mask.size(), 0.0);
    for (size_t i = 0; i < pad_mask.size(); ++i)
        if (pad_mask[i]) m[i] = kMaskedLogit;
    return Tensor::row(std::move(m));
}

} // namespace

void EncoderConfig::validate() const {
    if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0)
        throw std::invalid_argument("encoder: hidden_dim must be a positive multiple of num_heads");
    if (text_layers == 0 || image_layers == 0 || cross_layers == 0)
        throw std::invalid_argument("encoder: all encoder depths must be positive");
    if (max_text_len < 3)
        throw std::invalid_argument("encoder: max_text_len must fit [CLS], one token and [SEP]");
    if (patch_grid == 0 || patch_dim == 0)
        throw std::invalid_argument("encoder: patch_grid and patch_dim must be positive");
    if (itc_dim == 0 || ffn_mult == 0)
        throw std::invalid_argument("encoder: itc_dim and ffn_mult must be positive");
    if (vocab_size <= static_cast<size_t>(kMaskId))
        throw std::invalid_argument("encoder: vocab_size must cover the special tokens");
}

Tensor linear(const Tensor& x, const LinearParams& p) {
    return add_rows(matmul(x, p.weight), p.bias);
}

Tensor multihead_attention(const AttentionParams& p, const Tensor& queries_in,
                           const Tensor& keys_in, const Tensor* key_mask, size_t num_heads,
                           std::vector<std::vector<double>>* class_rows, AttnMap* mean_map) {
    size_t d = p.query.weight.cols();
    size_t head_dim = d / num_heads;
    double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Tensor q = linear(queries_in, p.query);
    Tensor k = linear(keys_in, p.key);
    Tensor v = linear(keys_in, p.value);

    size_t tq = q.rows(), tk = k.rows();
    if (mean_map) {
        mean_map->rows = tq;
        mean_map->cols = tk;
        mean_map->values.assign(tq * tk, 0.0);
    }

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(num_heads);
    for (size_t h = 0; h < num_heads; ++h) {
        Tensor qh = slice(q, 1, h * head_dim, (h + 1) * head_dim);
        Tensor kh = slice(k, 1, h * head_dim, (h + 1) * head_dim);
        Tensor vh = slice(v, 1, h * head_dim, (h + 1) * head_dim);
        Tensor scores = scale(matmul(qh, transpose(kh)), scale_factor);
        if (key_mask) scores = add_rows(scores, *key_mask);
        Tensor attn = softmax(scores, 1.0, 1);
        if (class_rows) {
            class_rows->emplace_back(attn.data().begin(), attn.data().begin() + tk);
        }
        if (mean_map) {
            for (size_t i = 0; i < tq * tk; ++i)
                mean_map->values[i] += attn.data()[i] / static_cast<double>(num_heads);
        }
        head_outputs.push_back(matmul(attn, vh));
    }
    Tensor ctx = num_heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
    return linear(ctx, p.output);
}

Model Model::init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    Model m;
    m.config = config;
    size_t d = config.hidden_dim;
    size_t ffn = d * config.ffn_mult;

    Rng r = rng.fork("model-init");
    m.text.token_embedding = normal_tensor({config.vocab_size, d}, 0.02, r);
    m.text.position_embedding = normal_tensor({config.max_text_len, d}, 0.02, r);
    for (size_t i = 0; i < config.text_layers; ++i) m.text.blocks.push_back(init_block(d, ffn, r));

    m.image.patch_proj = init_linear(config.patch_dim, d, r);
    m.image.class_token = normal_tensor({1, d}, 0.02, r);
    m.image.position_embedding = normal_tensor({config.patch_grid + 1, d}, 0.02, r);
    for (size_t i = 0; i < config.image_layers; ++i) m.image.blocks.push_back(init_block(d, ffn, r));

    for (size_t i = 0; i < config.cross_layers; ++i) m.cross.blocks.push_back(init_cross_block(d, ffn, r));

    m.heads.text_proj = init_linear(d, config.itc_dim, r);
    m.heads.image_proj = init_linear(d, config.itc_dim, r);
    m.heads.itm = init_linear(d, 2, r);
    if (config.tie_mlm) {
        m.heads.mlm = zero_linear(1, 1); // placeholder, not visited when tied
    } else {
        m.heads.mlm = init_linear(d, config.vocab_size, r);
    }
    m.heads.mlm_bias = const_vector(config.vocab_size, 0.0, true);
    return m;
}

namespace {

template <typename ModelT, typename Fn>
void visit_model_params(ModelT& m, const Fn& fn) {
    auto visit_linear = [&](const std::string& prefix, auto& lin) {
        fn(prefix + ".weight", lin.weight);
        fn(prefix + ".bias", lin.bias);
    };
    auto visit_attention = [&](const std::string& prefix, auto& attn) {
        visit_linear(prefix + ".query", attn.query);
        visit_linear(prefix + ".key", attn.key);
        visit_linear(prefix + ".value", attn.value);
        visit_linear(prefix + ".output", attn.output);
    };
    auto visit_block = [&](const std::string& prefix, auto& b) {
        visit_attention(prefix + ".attn", b.attn);
        fn(prefix + ".ln_attn.gain", b.ln_attn_gain);
        fn(prefix + ".ln_attn.bias", b.ln_attn_bias);
        visit_linear(prefix + ".ffn_in", b.ffn_in);
        visit_linear(prefix + ".ffn_out", b.ffn_out);
        fn(prefix + ".ln_ffn.gain", b.ln_ffn_gain);
        fn(prefix + ".ln_ffn.bias", b.ln_ffn_bias);
    };

    fn("text.token_embedding", m.text.token_embedding);
    fn("text.position_embedding", m.text.position_embedding);
    for (size_t i = 0; i < m.text.blocks.size(); ++i)
        visit_block("text.block" + std::to_string(i), m.text.blocks[i]);

    visit_linear("image.patch_proj", m.image.patch_proj);
    fn("image.class_token", m.image.class_token);
    fn("image.position_embedding", m.image.position_embedding);
    for (size_t i = 0; i < m.image.blocks.size(); ++i)
        visit_block("image.block" + std::to_string(i), m.image.blocks[i]);

    for (size_t i = 0; i < m.cross.blocks.size(); ++i) {
        auto& b = m.cross.blocks[i];
        std::string prefix = "cross.block" + std::to_string(i);
        visit_attention(prefix + ".self_attn", b.self_attn);
        fn(prefix + ".ln_self.gain", b.ln_self_gain);
        fn(prefix + ".ln_self.bias", b.ln_self_bias);
        visit_attention(prefix + ".cross_attn", b.cross_attn);
        fn(prefix + ".ln_cross.gain", b.ln_cross_gain);
        fn(prefix + ".ln_cross.bias", b.ln_cross_bias);
        visit_linear(prefix + ".ffn_in", b.ffn_in);
        visit_linear(prefix + ".ffn_out", b.ffn_out);
        fn(prefix + ".ln_ffn.gain", b.ln_ffn_gain);
        fn(prefix + ".ln_ffn.bias", b.ln_ffn_bias);
    }

    visit_linear("heads.text_proj", m.heads.text_proj);
    visit_linear("heads.image_proj", m.heads.image_proj);
    visit_linear("heads.itm", m.heads.itm);
    if (!m.config.tie_mlm) visit_linear("heads.mlm", m.heads.mlm);
    fn("heads.mlm_bias", m.heads.mlm_bias);
}

} // namespace

void Model::visit_params(const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_model_params(*this, fn);
}

void Model::visit_params(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    visit_model_params(*this, fn);
}

size_t Model::param_count() const {
    size_t n = 0;
    visit_params([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

Model Model::clone(bool requires_grad) const {
    // Rebuild with a throwaway stream, then overwrite every value.
    Rng scratch(0);
    Model copy = Model::init(config, scratch);
    copy.copy_values_from(*this);
    copy.visit_params([&](const std::string&, Tensor& t) { t.set_requires_grad(requires_grad); });
    return copy;
}

void Model::copy_values_from(const Model& other) {
    std::vector<const Tensor*> src;
    other.visit_params([&](const std::string&, const Tensor& t) { src.push_back(&t); });
    size_t i = 0;
    visit_params([&](const std::string& name, Tensor& t) {
        if (i >= src.size() || src[i]->shape() != t.shape())
            throw std::invalid_argument("model: parameter shape drift at " + name);
        t.data() = src[i]->data();
        ++i;
    });
}

TextForward Model::encode_text(std::span<const int> token_ids, const std::vector<bool>& pad_mask,
                               bool record_trace) const {
    if (token_ids.empty())
        throw std::invalid_argument("encode_text: empty token sequence");
    if (token_ids.size() > config.max_text_len)
        throw std::invalid_argument("encode_text: sequence of " + std::to_string(token_ids.size()) +
                                    " tokens exceeds max_text_len " + std::to_string(config.max_text_len));
    if (token_ids[0] != kClsId)
        throw std::invalid_argument("encode_text: sequence must start with the class token");
    if (!pad_mask.empty() && pad_mask.size() != token_ids.size())
        throw std::invalid_argument("encode_text: pad mask length mismatch");
    for (int id : token_ids) {
        if (id < 0 || static_cast<size_t>(id) >= config.vocab_size)
            throw std::out_of_range("encode_text: unknown token id " + std::to_string(id));
    }

    size_t t = token_ids.size();
    Tensor x = add(embedding_lookup(text.token_embedding, {token_ids.begin(), token_ids.end()}),
                   slice(text.position_embedding, 0, 0, t));

    bool any_pad = false;
    for (bool b : pad_mask) any_pad = any_pad || b;
    Tensor mask_row;
    const Tensor* mask_ptr = nullptr;
    if (any_pad) {
        mask_row = pad_mask_row(pad_mask);
        mask_ptr = &mask_row;
    }

    TextForward out;
    if (record_trace) out.trace.reserve(text.blocks.size());
    for (const BlockParams& b : text.blocks) {
        std::vector<std::vector<double>> rows;
        x = block_forward(b, x, mask_ptr, config.num_heads, record_trace ? &rows : nullptr);
        if (record_trace) out.trace.push_back(std::move(rows));
    }
    out.hidden = x;
    return out;
}

Tensor Model::encode_image(std::span<const double> patches) const {
    size_t expected = config.patch_grid * config.patch_dim;
    if (patches.size() != expected)
        throw std::invalid_argument("encode_image: expected " + std::to_string(expected) +
                                    " patch values (" + std::to_string(config.patch_grid) + "x" +
                                    std::to_string(config.patch_dim) + "), got " +
                                    std::to_string(patches.size()));
    Tensor raw({config.patch_grid, config.patch_dim}, std::vector<double>(patches.begin(), patches.end()));
    Tensor projected = linear(raw, image.patch_proj);
    Tensor x = add(concat({image.class_token, projected}, 0), image.position_embedding);
    for (const BlockParams& b : image.blocks) {
        x = block_forward(b, x, nullptr, config.num_heads, nullptr);
    }
    return x;
}

CrossForward Model::cross_encode(const Tensor& text_hidden, const Tensor& image_hidden,
                                 const std::vector<bool>& text_pad_mask) const {
    if (text_hidden.cols() != config.hidden_dim || image_hidden.cols() != config.hidden_dim)
        throw std::invalid_argument("cross_encode: hidden dim mismatch " +
                                    shape_to_string(text_hidden.shape()) + " vs " +
                                    shape_to_string(image_hidden.shape()));
    bool any_pad = false;
    for (bool b : text_pad_mask) any_pad = any_pad || b;
    Tensor mask_row;
    const Tensor* mask_ptr = nullptr;
    if (any_pad) {
        mask_row = pad_mask_row(text_pad_mask);
        mask_ptr = &mask_row;
    }

    CrossForward out;
    Tensor x = text_hidden;
    for (const CrossBlockParams& b : cross.blocks) {
        Tensor a = multihead_attention(b.self_attn, x, x, mask_ptr, config.num_heads, nullptr, nullptr);
        x = layer_norm(add(x, a), b.ln_self_gain, b.ln_self_bias);
        AttnMap map;
        Tensor c = multihead_attention(b.cross_attn, x, image_hidden, nullptr, config.num_heads,
                                       nullptr, &map);
        out.cross_maps.push_back(std::move(map));
        x = layer_norm(add(x, c), b.ln_cross_gain, b.ln_cross_bias);
        Tensor f = linear(gelu(linear(x, b.ffn_in)), b.ffn_out);
        x = layer_norm(add(x, f), b.ln_ffn_gain, b.ln_ffn_bias);
    }
    out.hidden = x;
    return out;
}

Tensor Model::mlm_logits(const Tensor& cross_hidden, const std::vector<size_t>& positions) const {
    if (positions.empty())
        throw std::invalid_argument("mlm_head: no positions given");
    for (size_t p : positions) {
        if (p == 0)
            throw std::invalid_argument("mlm_head: position 0 is the class token");
        if (p >= cross_hidden.rows())
            throw std::out_of_range("mlm_head: position " + std::to_string(p) + " outside sequence of " +
                                    std::to_string(cross_hidden.rows()));
    }
    Tensor gathered = gather_rows(cross_hidden, positions);
    if (config.tie_mlm) {
        return add_rows(matmul(gathered, transpose(text.token_embedding)), heads.mlm_bias);
    }
    return add_rows(matmul(gathered, heads.mlm.weight), heads.mlm_bias);
}

Tensor Model::text_global_feature(const Tensor& text_hidden) const {
    return l2_normalize_rows(linear(slice(text_hidden, 0, 0, 1), heads.text_proj));
}

Tensor Model::image_global_feature(const Tensor& image_hidden) const {
    return l2_normalize_rows(linear(slice(image_hidden, 0, 0, 1), heads.image_proj));
}

Tensor Model::itm_logits(const Tensor& cross_cls_rows) const {
    return linear(cross_cls_rows, heads.itm);
}

} // namespace aga
