#include "doctest.h"

#include <cmath>

#include "aga/agm.hpp"
#include "aga/vocab.hpp"

using namespace aga;

namespace {

Vocabulary test_vocab(size_t meaningful = 8, size_t vacuous = 8) {
    Vocabulary v;
    for (size_t i = 0; i < meaningful; ++i) v.add("word" + std::to_string(i), WordClass::meaningful);
    for (size_t i = 0; i < vacuous; ++i) v.add("the" + std::to_string(i), WordClass::vacuous);
    return v;
}

AttentionTrace constant_trace(size_t layers, size_t heads, const std::vector<double>& row) {
    return AttentionTrace(layers, std::vector<std::vector<double>>(heads, row));
}

} // namespace

TEST_SUITE_BEGIN("agm");

TEST_CASE("layer EMA of a constant trace is the geometric-series factor") {
    std::vector<double> row{0.4, 0.3, 0.2, 0.1};
    auto out = aggregate_class_attention(constant_trace(6, 4, row), 0.95);
    double factor = 1.0 - std::pow(0.95, 6);
    CHECK(factor == doctest::Approx(0.264908).epsilon(1e-6));
    for (size_t i = 0; i < row.size(); ++i)
        CHECK(std::abs(out[i] - factor * row[i]) <= 1e-12);
}

TEST_CASE("EMA degenerate coefficients") {
    AttentionTrace trace;
    trace.push_back({{0.7, 0.3}});
    trace.push_back({{0.1, 0.9}});
    auto last_only = aggregate_class_attention(trace, 0.0);
    CHECK(last_only[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(last_only[1] == doctest::Approx(0.9).epsilon(1e-12));
    auto frozen = aggregate_class_attention(trace, 1.0);
    CHECK(frozen[0] == 0.0);
    CHECK(frozen[1] == 0.0);
    CHECK_THROWS_AS(aggregate_class_attention({}, 0.95), std::invalid_argument);
}

TEST_CASE("EMA heads are averaged before aggregation and the map is linear") {
    AttentionTrace trace;
    trace.push_back({{0.8, 0.2}, {0.2, 0.8}}); // head mean {0.5, 0.5}
    auto out = aggregate_class_attention(trace, 0.5);
    CHECK(out[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.25).epsilon(1e-12));

    // linearity: aggregate(c * trace) == c * aggregate(trace)
    std::vector<double> row{0.1, 0.5, 0.4};
    auto base = aggregate_class_attention(constant_trace(3, 2, row), 0.9);
    std::vector<double> scaled_row{0.3, 1.5, 1.2};
    auto scaled = aggregate_class_attention(constant_trace(3, 2, scaled_row), 0.9);
    for (size_t i = 0; i < row.size(); ++i)
        CHECK(scaled[i] == doctest::Approx(3.0 * base[i]).epsilon(1e-12));
}

TEST_CASE("normalize_attention hand values and exclusion") {
    // content-only values 0.10 and 0.08 at temperature 0.02 -> logits 5 and 4
    std::vector<double> aggregated{0.5, 0.10, 0.08, 0.0};
    std::vector<bool> content{false, true, true, false};
    auto out = normalize_attention(aggregated, 0.02, content);
    double e = std::exp(1.0);
    CHECK(out[1] == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
    CHECK(out[2] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(out[2] == doctest::Approx(0.2689).epsilon(1e-4));
    CHECK(out[0] == 0.0);
    CHECK(out[3] == 0.0);
}

TEST_CASE("normalize_attention uniform case and empty-text error") {
    std::vector<double> aggregated(12, 0.02);
    std::vector<bool> content(12, true);
    content[0] = false;
    content[11] = false;
    auto out = normalize_attention(aggregated, 0.02, content);
    for (size_t i = 1; i <= 10; ++i) CHECK(out[i] == doctest::Approx(0.1).epsilon(1e-12));

    std::vector<bool> none(12, false);
    CHECK_THROWS_AS(normalize_attention(aggregated, 0.02, none), std::invalid_argument);
}

TEST_CASE("normalize_attention preserves ranking") {
    std::vector<double> aggregated{0.0, 0.07, 0.01, 0.05, 0.09, 0.0};
    std::vector<bool> content{false, true, true, true, true, false};
    auto out = normalize_attention(aggregated, 0.02, content);
    CHECK(out[4] > out[1]);
    CHECK(out[1] > out[3]);
    CHECK(out[3] > out[2]);
}

TEST_CASE("mask_probabilities affine map") {
    AgmConfig cfg;
    std::vector<bool> content{false, true, true, true, true, true, true, true, true, true, true, false};
    std::vector<double> normalized(12, 0.0);
    for (size_t i = 1; i <= 10; ++i) normalized[i] = 0.1;
    auto p = mask_probabilities(normalized, cfg, content);
    for (size_t i = 1; i <= 10; ++i) CHECK(p[i] == doctest::Approx(0.065).epsilon(1e-12));
    CHECK(p[0] == 0.0);
    CHECK(p[11] == 0.0);

    // zero attention floors at alpha1
    std::vector<double> zeroed(12, 0.0);
    zeroed[1] = 1.0;
    auto p2 = mask_probabilities(zeroed, cfg, content);
    CHECK(p2[2] == doctest::Approx(0.05).epsilon(1e-12));

    // sum over content = n * alpha1 + alpha2 when the input is normalized
    double sum = 0.0;
    for (size_t i = 1; i <= 10; ++i) sum += p[i];
    CHECK(sum == doctest::Approx(10 * 0.05 + 0.15).epsilon(1e-12));
}

TEST_CASE("mask_probabilities clamps at one in rate-rescaled mode") {
    AgmConfig cfg;
    cfg.target_mask_rate = true;
    std::vector<bool> content{true, true, true, true, true, true, true, true, true, true};
    std::vector<double> concentrated(10, 0.0);
    concentrated[3] = 1.0;
    auto p = mask_probabilities(concentrated, cfg, content);
    CHECK(p[3] == 1.0); // 0.05 + 0.15 * 10 * 1.0 clamps
    CHECK(p[0] == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("forced single mask when nothing is drawn") {
    Vocabulary vocab = test_vocab();
    AgmConfig cfg;
    Rng rng(1);
    std::vector<int> tokens{kClsId, vocab.id("word0"), vocab.id("the0"), vocab.id("word1"), kSepId};
    std::vector<double> p(tokens.size(), 0.0);
    MaskedText masked = apply_mask(tokens, p, vocab, cfg, rng);
    REQUIRE(masked.positions.size() == 1);
    CHECK(masked.positions[0] == 1); // all-tie argmax lands on the first content token
    CHECK(masked.strategy == "agm");
}

TEST_CASE("mask plan reconstructs the input and only touches content") {
    Vocabulary vocab = test_vocab();
    AgmConfig cfg;
    Rng rng(2);
    std::vector<int> tokens{kClsId, vocab.id("word0"), vocab.id("the0"), vocab.id("word2"),
                            vocab.id("the3"), vocab.id("word5"), kSepId};
    std::vector<double> p(tokens.size(), 0.0);
    for (size_t i = 1; i + 1 < tokens.size(); ++i) p[i] = 0.5;
    for (int trial = 0; trial < 200; ++trial) {
        MaskedText masked = apply_mask(tokens, p, vocab, cfg, rng);
        CHECK(masked.reconstruct() == tokens);
        for (size_t pos : masked.positions) CHECK(vocab.is_content(tokens[pos]));
        for (size_t i = 0; i < masked.positions.size(); ++i) {
            if (masked.actions[i] == MaskAction::mask) CHECK(masked.tokens[masked.positions[i]] == kMaskId);
            if (masked.actions[i] == MaskAction::keep)
                CHECK(masked.tokens[masked.positions[i]] == masked.originals[i]);
        }
    }
}

TEST_CASE("Bernoulli selection stage matches per-token probabilities") {
    // Monte Carlo over the selection stage; the forced-mask guard is a
    // separate post-processing step and is tested above.
    Rng rng(3);
    std::vector<double> p{0.0, 0.05, 0.2, 0.065, 0.5, 0.0};
    const int trials = 100000;
    std::vector<int> hits(p.size(), 0);
    for (int t = 0; t < trials; ++t) {
        for (size_t idx : draw_mask_set(p, rng)) ++hits[idx];
    }
    for (size_t i = 0; i < p.size(); ++i) {
        double expected = p[i];
        double sigma = std::sqrt(std::max(expected * (1.0 - expected), 1e-12) / trials);
        CHECK(std::abs(hits[i] / static_cast<double>(trials) - expected) <= 3.0 * sigma + 1e-12);
    }
}

TEST_CASE("expected masked fraction is alpha1 + alpha2 / n") {
    AgmConfig cfg;
    size_t n = 12;
    std::vector<bool> content(n + 2, true);
    content[0] = false;
    content[n + 1] = false;
    std::vector<double> aggregated(n + 2, 0.0);
    // a non-constant attention profile
    for (size_t i = 1; i <= n; ++i) aggregated[i] = 0.01 * static_cast<double>(i);
    auto normalized = normalize_attention(aggregated, 0.02, content);
    auto p = mask_probabilities(normalized, cfg, content);

    Rng rng(4);
    const int trials = 100000;
    long total = 0;
    double variance = 0.0;
    for (size_t i = 0; i < p.size(); ++i) variance += p[i] * (1.0 - p[i]);
    for (int t = 0; t < trials; ++t) total += static_cast<long>(draw_mask_set(p, rng).size());
    double mean_fraction = static_cast<double>(total) / trials / static_cast<double>(n);
    double expected = cfg.alpha1 + cfg.alpha2 / static_cast<double>(n);
    double sigma = std::sqrt(variance / trials) / static_cast<double>(n);
    CHECK(std::abs(mean_fraction - expected) <= 3.0 * sigma);
}

TEST_CASE("replacement actions follow the 80/10/10 scheme") {
    Vocabulary vocab = test_vocab();
    AgmConfig cfg;
    Rng rng(5);
    std::vector<int> tokens{kClsId};
    for (int i = 0; i < 8; ++i) tokens.push_back(vocab.id("word" + std::to_string(i)));
    tokens.push_back(kSepId);
    std::vector<double> p(tokens.size(), 0.5);
    p[0] = p[tokens.size() - 1] = 0.0;

    long mask_count = 0, random_count = 0, keep_count = 0, total = 0;
    while (total < 100000) {
        MaskedText masked = apply_mask(tokens, p, vocab, cfg, rng);
        for (MaskAction a : masked.actions) {
            ++total;
            if (a == MaskAction::mask) ++mask_count;
            if (a == MaskAction::random) ++random_count;
            if (a == MaskAction::keep) ++keep_count;
        }
    }
    CHECK(std::abs(mask_count / static_cast<double>(total) - 0.8) <= 0.01);
    CHECK(std::abs(random_count / static_cast<double>(total) - 0.1) <= 0.01);
    CHECK(std::abs(keep_count / static_cast<double>(total) - 0.1) <= 0.01);
}

TEST_CASE("higher aggregated attention means higher masking probability") {
    AgmConfig cfg;
    std::vector<bool> content{false, true, true, true, false};
    std::vector<double> aggregated{0.3, 0.09, 0.02, 0.05, 0.0};
    auto p = mask_probabilities(normalize_attention(aggregated, 0.02, content), cfg, content);
    CHECK(p[1] > p[2]);
    CHECK(p[1] > p[3]);
}

TEST_CASE("random_mask hits the requested rate") {
    Vocabulary vocab = test_vocab(40, 4);
    AgmConfig cfg;
    Rng rng(6);
    std::vector<int> tokens{kClsId};
    for (int i = 0; i < 40; ++i) tokens.push_back(vocab.id("word" + std::to_string(i % 8)));
    tokens.push_back(kSepId);

    long masked_tokens = 0, content_tokens = 0;
    while (content_tokens < 100000) {
        MaskedText masked = random_mask(tokens, 0.15, vocab, cfg, rng);
        masked_tokens += static_cast<long>(masked.positions.size());
        content_tokens += 40;
    }
    // 40 content tokens per sentence keep the forced-mask guard negligible
    CHECK(std::abs(masked_tokens / static_cast<double>(content_tokens) - 0.15) <= 0.005);

    Rng rng2(7);
    MaskedText forced = random_mask(tokens, 0.0, vocab, cfg, rng2);
    CHECK(forced.positions.size() == 1);
    CHECK(forced.positions[0] == 1);
}

TEST_CASE("picked_mask masks only vacuous words") {
    Vocabulary vocab = test_vocab();
    AgmConfig cfg;
    Rng rng(8);
    std::vector<int> tokens{kClsId, vocab.id("word0"), vocab.id("the0"), vocab.id("word1"),
                            vocab.id("the1"), kSepId};
    for (int trial = 0; trial < 500; ++trial) {
        MaskedText masked = picked_mask(tokens, 0.3, vocab, cfg, rng);
        CHECK_FALSE(masked.fallback);
        CHECK(masked.positions.size() >= 1);
        for (size_t i = 0; i < masked.positions.size(); ++i)
            CHECK(vocab.is_vacuous(masked.originals[i]));
    }

    // rate 0 still forces one mask, and it stays vacuous
    Rng rng2(9);
    MaskedText forced = picked_mask(tokens, 0.0, vocab, cfg, rng2);
    REQUIRE(forced.positions.size() == 1);
    CHECK(vocab.is_vacuous(forced.originals[0]));
}

TEST_CASE("picked_mask falls back on sentences without vacuous words") {
    Vocabulary vocab = test_vocab();
    AgmConfig cfg;
    Rng rng(10);
    std::vector<int> tokens{kClsId, vocab.id("word0"), vocab.id("word1"), kSepId};
    MaskedText masked = picked_mask(tokens, 0.3, vocab, cfg, rng);
    CHECK(masked.fallback);
    CHECK(masked.strategy == "picked");
    REQUIRE(masked.positions.size() == 1);
    CHECK(vocab.is_content(tokens[masked.positions[0]]));
}

TEST_CASE("config validation") {
    AgmConfig bad;
    bad.beta = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AgmConfig{};
    bad.tau = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AgmConfig{};
    bad.alpha1 = 0.9;
    bad.alpha2 = 0.2;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AgmConfig{};
    bad.scheme_keep = 0.3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    AgmConfig good;
    CHECK_NOTHROW(good.validate());
}

TEST_SUITE_END();
