#include "doctest.h"

#include <cmath>
#include <cstring>

#include "aga/encoders.hpp"
#include "aga/vocab.hpp"
#include "support.hpp"

using namespace aga;
using aga::test::finite_difference_check;

namespace {

EncoderConfig micro_config(size_t vocab_size) {
    EncoderConfig cfg;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.text_layers = 2;
    cfg.image_layers = 2;
    cfg.cross_layers = 2;
    cfg.max_text_len = 12;
    cfg.patch_grid = 4;
    cfg.patch_dim = 3;
    cfg.ffn_mult = 2;
    cfg.itc_dim = 4;
    cfg.vocab_size = vocab_size;
    return cfg;
}

std::vector<double> random_patches(const EncoderConfig& cfg, Rng& rng) {
    std::vector<double> p(cfg.patch_grid * cfg.patch_dim);
    for (double& v : p) v = rng.uniform(-1, 1);
    return p;
}

} // namespace

TEST_SUITE_BEGIN("encoders");

TEST_CASE("trace rows are distributions over non-pad positions") {
    Rng rng(5);
    Model m = Model::init(micro_config(20), rng);
    std::vector<int> ids{kClsId, 7, 9, 12, kSepId, kPadId, kPadId};
    std::vector<bool> pads{false, false, false, false, false, true, true};
    TextForward fwd = m.encode_text(ids, pads, true);
    REQUIRE(fwd.trace.size() == 2);
    for (const auto& layer : fwd.trace) {
        REQUIRE(layer.size() == 2);
        for (const auto& row : layer) {
            REQUIRE(row.size() == ids.size());
            double sum = 0.0;
            for (double w : row) {
                CHECK(w >= 0.0);
                sum += w;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
            CHECK(row[5] == 0.0); // padded keys carry exactly zero weight
            CHECK(row[6] == 0.0);
        }
    }
}

TEST_CASE("padding length does not change the class embedding") {
    Rng rng(6);
    Model m = Model::init(micro_config(20), rng);
    std::vector<int> short_ids{kClsId, 7, 9, kSepId};
    std::vector<bool> short_pads(4, false);
    std::vector<int> long_ids{kClsId, 7, 9, kSepId, kPadId, kPadId, kPadId};
    std::vector<bool> long_pads{false, false, false, false, true, true, true};
    Tensor a = m.encode_text(short_ids, short_pads, false).hidden;
    Tensor b = m.encode_text(long_ids, long_pads, false).hidden;
    for (size_t j = 0; j < a.cols(); ++j)
        CHECK(std::abs(a.at(0, j) - b.at(0, j)) <= 1e-9);
}

TEST_CASE("single-layer single-head attention row matches the hand oracle") {
    EncoderConfig cfg;
    cfg.hidden_dim = 2;
    cfg.num_heads = 1;
    cfg.text_layers = 1;
    cfg.image_layers = 1;
    cfg.cross_layers = 1;
    cfg.max_text_len = 4;
    cfg.patch_grid = 2;
    cfg.patch_dim = 2;
    cfg.ffn_mult = 1;
    cfg.itc_dim = 2;
    cfg.vocab_size = 8;
    Rng rng(1);
    Model m = Model::init(cfg, rng);

    // Hand-set embeddings and an identity query/key map.
    auto& emb = m.text.token_embedding.data();
    std::fill(emb.begin(), emb.end(), 0.0);
    emb[kClsId * 2 + 0] = 0.3;
    emb[kClsId * 2 + 1] = -0.2;
    emb[5 * 2 + 0] = 1.0;
    emb[5 * 2 + 1] = 0.5;
    emb[6 * 2 + 0] = -0.7;
    emb[6 * 2 + 1] = 0.4;
    std::fill(m.text.position_embedding.data().begin(), m.text.position_embedding.data().end(), 0.0);
    auto& block = m.text.blocks[0];
    block.attn.query.weight.data() = {1, 0, 0, 1};
    block.attn.query.bias.data() = {0, 0};
    block.attn.key.weight.data() = {1, 0, 0, 1};
    block.attn.key.bias.data() = {0, 0};

    std::vector<int> ids{kClsId, 5, 6};
    TextForward fwd = m.encode_text(ids, {}, true);

    // oracle: sigma(q K^T / sqrt(d)) for the class query
    double q0 = 0.3, q1 = -0.2;
    double logits[3] = {(q0 * 0.3 + q1 * -0.2) / std::sqrt(2.0),
                        (q0 * 1.0 + q1 * 0.5) / std::sqrt(2.0),
                        (q0 * -0.7 + q1 * 0.4) / std::sqrt(2.0)};
    double mx = std::max({logits[0], logits[1], logits[2]});
    double z = 0.0;
    double expect[3];
    for (int i = 0; i < 3; ++i) {
        expect[i] = std::exp(logits[i] - mx);
        z += expect[i];
    }
    for (int i = 0; i < 3; ++i) expect[i] /= z;
    for (int i = 0; i < 3; ++i)
        CHECK(fwd.trace[0][0][static_cast<size_t>(i)] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("encode_text rejects bad inputs") {
    Rng rng(2);
    Model m = Model::init(micro_config(20), rng);
    std::vector<int> too_long(m.config.max_text_len + 1, 5);
    too_long[0] = kClsId;
    CHECK_THROWS_AS(m.encode_text(too_long, {}, false), std::invalid_argument);
    std::vector<int> unknown{kClsId, 99, kSepId};
    CHECK_THROWS_AS(m.encode_text(unknown, {}, false), std::out_of_range);
    std::vector<int> no_cls{5, 6, kSepId};
    CHECK_THROWS_AS(m.encode_text(no_cls, {}, false), std::invalid_argument);
}

TEST_CASE("zero patches with zero projection give identical patch tokens") {
    Rng rng(3);
    Model m = Model::init(micro_config(20), rng);
    std::fill(m.image.patch_proj.weight.data().begin(), m.image.patch_proj.weight.data().end(), 0.0);
    std::fill(m.image.patch_proj.bias.data().begin(), m.image.patch_proj.bias.data().end(), 0.0);
    std::fill(m.image.position_embedding.data().begin(), m.image.position_embedding.data().end(), 0.0);
    std::vector<double> patches(m.config.patch_grid * m.config.patch_dim, 0.0);
    Tensor out = m.encode_image(patches);
    for (size_t i = 2; i <= m.config.patch_grid; ++i)
        for (size_t j = 0; j < out.cols(); ++j)
            CHECK(out.at(i, j) == doctest::Approx(out.at(1, j)).epsilon(1e-12));
}

TEST_CASE("permuting patches changes the embedding and wrong counts throw") {
    Rng rng(4);
    Model m = Model::init(micro_config(20), rng);
    std::vector<double> patches = random_patches(m.config, rng);
    Tensor base = m.encode_image(patches);
    std::vector<double> permuted = patches;
    // swap patch 0 and patch 1
    for (size_t j = 0; j < m.config.patch_dim; ++j)
        std::swap(permuted[j], permuted[m.config.patch_dim + j]);
    Tensor moved = m.encode_image(permuted);
    double diff = 0.0;
    for (size_t i = 0; i < base.numel(); ++i) diff += std::abs(base.data()[i] - moved.data()[i]);
    CHECK(diff > 1e-6);

    std::vector<double> wrong(m.config.patch_grid * m.config.patch_dim + 1, 0.0);
    CHECK_THROWS_AS(m.encode_image(wrong), std::invalid_argument);
}

TEST_CASE("image encoding is deterministic for a fixed seed") {
    Rng rng_a(9);
    Rng rng_b(9);
    Model a = Model::init(micro_config(20), rng_a);
    Model b = Model::init(micro_config(20), rng_b);
    Rng data_rng(10);
    std::vector<double> patches = random_patches(a.config, data_rng);
    Tensor ea = a.encode_image(patches);
    Tensor eb = b.encode_image(patches);
    CHECK(std::memcmp(ea.data().data(), eb.data().data(), ea.numel() * sizeof(double)) == 0);
}

TEST_CASE("uniform keys give uniform cross-attention rows") {
    Rng rng(11);
    Model m = Model::init(micro_config(20), rng);
    size_t d = m.config.hidden_dim;
    size_t ti = m.config.patch_grid + 1;
    std::vector<double> image_vals(ti * d);
    for (size_t i = 0; i < ti; ++i)
        for (size_t j = 0; j < d; ++j) image_vals[i * d + j] = 0.1 * static_cast<double>(j); // equal rows
    Tensor image_hidden({ti, d}, image_vals);
    std::vector<int> ids{kClsId, 7, 9, kSepId};
    Tensor text_hidden = m.encode_text(ids, {}, false).hidden;
    CrossForward fwd = m.cross_encode(text_hidden, image_hidden, {});
    for (const AttnMap& map : fwd.cross_maps) {
        REQUIRE(map.cols == ti);
        for (size_t i = 0; i < map.rows; ++i) {
            for (size_t j = 0; j < map.cols; ++j)
                CHECK(std::abs(map.at(i, j) - 1.0 / static_cast<double>(ti)) <= 1e-9);
        }
    }
}

TEST_CASE("cross-attention maps are distributions over image positions") {
    Rng rng(12);
    Model m = Model::init(micro_config(20), rng);
    Rng data_rng(13);
    Tensor image_hidden = m.encode_image(random_patches(m.config, data_rng));
    std::vector<int> ids{kClsId, 7, 9, 12, kSepId};
    Tensor text_hidden = m.encode_text(ids, {}, false).hidden;
    CrossForward fwd = m.cross_encode(text_hidden, image_hidden, {});
    REQUIRE(fwd.cross_maps.size() == m.config.cross_layers);
    for (const AttnMap& map : fwd.cross_maps) {
        for (size_t i = 0; i < map.rows; ++i) {
            double sum = 0.0;
            for (size_t j = 0; j < map.cols; ++j) {
                CHECK(map.at(i, j) >= 0.0);
                sum += map.at(i, j);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
    CHECK(fwd.hidden.rows() == ids.size());
    CHECK_THROWS_AS(m.cross_encode(text_hidden, Tensor({3, 5}, 0.0), {}), std::invalid_argument);
}

TEST_CASE("zero image values make cross-attention output independent of attention weights") {
    // With V = 0 the attended mixture is zero whatever the weights are.
    AttentionParams p;
    Rng rng(14);
    p.query.weight = aga::test::random_tensor({4, 4}, rng);
    p.query.bias = aga::test::random_tensor({4}, rng);
    p.key.weight = aga::test::random_tensor({4, 4}, rng);
    p.key.bias = aga::test::random_tensor({4}, rng);
    p.value.weight = aga::test::random_tensor({4, 4}, rng);
    p.value.bias = Tensor({4}, 0.0);
    p.output.weight = aga::test::random_tensor({4, 4}, rng);
    p.output.bias = Tensor({4}, 0.0);
    Tensor text = aga::test::random_tensor({3, 4}, rng);
    Tensor image({5, 4}, 0.0);
    Tensor out_a = multihead_attention(p, text, image, nullptr, 2, nullptr, nullptr);
    p.query.weight = aga::test::random_tensor({4, 4}, rng); // different attention pattern
    Tensor out_b = multihead_attention(p, text, image, nullptr, 2, nullptr, nullptr);
    for (size_t i = 0; i < out_a.numel(); ++i) {
        CHECK(out_a.data()[i] == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(out_b.data()[i] == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("two-token two-patch single-head cross attention matches the hand oracle") {
    AttentionParams p;
    p.query.weight = Tensor::matrix(2, 2, {1, 0, 0, 1});
    p.query.bias = Tensor({2}, 0.0);
    p.key.weight = Tensor::matrix(2, 2, {1, 0, 0, 1});
    p.key.bias = Tensor({2}, 0.0);
    p.value.weight = Tensor::matrix(2, 2, {1, 0, 0, 1});
    p.value.bias = Tensor({2}, 0.0);
    p.output.weight = Tensor::matrix(2, 2, {1, 0, 0, 1});
    p.output.bias = Tensor({2}, 0.0);
    Tensor text = Tensor::matrix(2, 2, {0.5, -0.25, -1.0, 0.75});
    Tensor image = Tensor::matrix(2, 2, {0.8, 0.1, -0.3, 0.6});

    Tensor out = multihead_attention(p, text, image, nullptr, 1, nullptr, nullptr);

    double inv_sqrt_d = 1.0 / std::sqrt(2.0);
    for (size_t i = 0; i < 2; ++i) {
        double s0 = (text.at(i, 0) * image.at(0, 0) + text.at(i, 1) * image.at(0, 1)) * inv_sqrt_d;
        double s1 = (text.at(i, 0) * image.at(1, 0) + text.at(i, 1) * image.at(1, 1)) * inv_sqrt_d;
        double mx = std::max(s0, s1);
        double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
        double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
        for (size_t j = 0; j < 2; ++j) {
            double expect = a0 * image.at(0, j) + a1 * image.at(1, j);
            CHECK(out.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("mlm head basics") {
    Rng rng(15);
    Model m = Model::init(micro_config(20), rng);
    size_t d = m.config.hidden_dim;
    Tensor hidden({5, d}, 0.0);
    Tensor logits = m.mlm_logits(hidden, {1, 3});
    CHECK(logits.rows() == 2);
    CHECK(logits.cols() == m.config.vocab_size);
    Tensor probs = softmax(logits, 1.0, 1);
    for (double v : probs.data())
        CHECK(v == doctest::Approx(1.0 / 20.0).epsilon(1e-12)); // zero hidden, zero bias -> uniform

    CHECK_THROWS_AS(m.mlm_logits(hidden, {0}), std::invalid_argument);
    CHECK_THROWS_AS(m.mlm_logits(hidden, {99}), std::out_of_range);
}

TEST_CASE("weight tying: growing a word embedding raises its logit") {
    Rng rng(16);
    Model m = Model::init(micro_config(20), rng);
    size_t d = m.config.hidden_dim;
    int w = 7;
    Tensor hidden({2, d});
    for (size_t j = 0; j < d; ++j)
        hidden.at(1, j) = m.text.token_embedding.at(static_cast<size_t>(w), j);
    double before = m.mlm_logits(hidden, {1}).at(0, static_cast<size_t>(w));
    for (size_t j = 0; j < d; ++j) m.text.token_embedding.at(static_cast<size_t>(w), j) *= 2.0;
    // hidden stays aligned with the old direction, logit must still rise
    double after = m.mlm_logits(hidden, {1}).at(0, static_cast<size_t>(w));
    CHECK(after > before);
}

TEST_CASE("zeroed position embeddings make content tokens permutation-covariant") {
    Rng rng(17);
    Model m = Model::init(micro_config(20), rng);
    std::fill(m.text.position_embedding.data().begin(), m.text.position_embedding.data().end(), 0.0);
    std::vector<int> a{kClsId, 5, 6, 7, kSepId};
    std::vector<int> b{kClsId, 7, 5, 6, kSepId};
    Tensor ha = m.encode_text(a, {}, false).hidden;
    Tensor hb = m.encode_text(b, {}, false).hidden;
    for (size_t j = 0; j < ha.cols(); ++j) {
        CHECK(std::abs(ha.at(0, j) - hb.at(0, j)) <= 1e-9); // class row unchanged
        CHECK(std::abs(ha.at(1, j) - hb.at(2, j)) <= 1e-9); // token 5
        CHECK(std::abs(ha.at(2, j) - hb.at(3, j)) <= 1e-9); // token 6
        CHECK(std::abs(ha.at(3, j) - hb.at(1, j)) <= 1e-9); // token 7
    }
}

TEST_CASE("encoder pipeline gradients match finite differences") {
    Rng rng(18);
    Model m = Model::init(micro_config(20), rng);
    Rng data_rng(19);
    std::vector<double> patches = random_patches(m.config, data_rng);
    std::vector<int> ids{kClsId, 7, 9, 12, kSepId};

    auto forward = [&] {
        Tensor text_hidden = m.encode_text(ids, {}, false).hidden;
        Tensor image_hidden = m.encode_image(patches);
        CrossForward cross = m.cross_encode(text_hidden, image_hidden, {});
        Tensor logits = m.mlm_logits(cross.hidden, {2, 3});
        Tensor target({2, m.config.vocab_size}, 0.0);
        target.at(0, 9) = 1.0;
        target.at(1, 12) = 1.0;
        Tensor feat = m.text_global_feature(text_hidden);
        return add(cross_entropy(logits, target), mean_all(feat));
    };

    std::vector<Tensor> probes{
        m.text.token_embedding,
        m.text.blocks[0].attn.query.weight,
        m.text.blocks[1].ffn_in.weight,
        m.image.patch_proj.weight,
        m.image.class_token,
        m.cross.blocks[0].cross_attn.value.weight,
        m.cross.blocks[1].ln_cross_gain,
        m.heads.text_proj.weight,
        m.heads.mlm_bias,
    };
    auto report = finite_difference_check(forward, probes, 1e-5, 8);
    INFO("max rel err ", report.max_rel_err);
    CHECK(report.max_rel_err <= 1e-4);
}

TEST_SUITE_END();
