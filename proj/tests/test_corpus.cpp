#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "aga/corpus.hpp"

using namespace aga;

namespace {

CorpusConfig small_config() {
    CorpusConfig cfg;
    cfg.num_identities = 40;
    cfg.pairs_per_identity = 2;
    cfg.test_identities = 10;
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

size_t decode_slot(const CorpusData& corpus, size_t record, size_t slot) {
    auto grid = corpus.patch_grid_of(record);
    size_t dim = corpus.config.patch_dim;
    const double* cell = grid.data() + corpus.spec.slots[slot].patch_index * dim;
    double best = -1e300;
    size_t best_value = 0;
    for (size_t v = 0; v < corpus.spec.slots[slot].values.size(); ++v) {
        auto code = attribute_code(slot, v, dim);
        double dot = 0.0;
        for (size_t i = 0; i < dim; ++i) dot += cell[i] * code[i];
        if (dot > best) {
            best = dot;
            best_value = v;
        }
    }
    return best_value;
}

} // namespace

TEST_SUITE_BEGIN("corpus");

TEST_CASE("generation is deterministic and files are byte-identical") {
    CorpusConfig cfg = small_config();
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData a = generate_corpus(cfg, spec, 42);
    CorpusData b = generate_corpus(cfg, spec, 42);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].sentence == b.records[i].sentence);
        CHECK(a.records[i].split == b.records[i].split);
    }
    CHECK(a.patches == b.patches);

    auto dir_a = std::filesystem::temp_directory_path() / "aga_corpus_a";
    auto dir_b = std::filesystem::temp_directory_path() / "aga_corpus_b";
    save_corpus(a, dir_a.string());
    save_corpus(b, dir_b.string());
    for (const char* name : {"corpus.txt", "patches.bin", "vocab.txt", "corpus_meta.json"})
        CHECK(read_file((dir_a / name).string()) == read_file((dir_b / name).string()));

    CorpusData loaded = load_corpus(dir_a.string());
    CHECK(loaded.records.size() == a.records.size());
    CHECK(loaded.patches == a.patches);
    CHECK(loaded.identity_values == a.identity_values);
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

TEST_CASE("different seeds give different corpora") {
    CorpusConfig cfg = small_config();
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData a = generate_corpus(cfg, spec, 1);
    CorpusData b = generate_corpus(cfg, spec, 2);
    bool any_diff = false;
    for (size_t i = 0; i < a.records.size(); ++i)
        any_diff = any_diff || a.records[i].sentence != b.records[i].sentence;
    CHECK(any_diff);
}

TEST_CASE("vacuous token fraction tracks the target") {
    CorpusConfig cfg;
    cfg.num_identities = 150;
    cfg.pairs_per_identity = 3;
    cfg.test_identities = 30;
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData corpus = generate_corpus(cfg, spec, 7);
    size_t vacuous = 0, total = 0;
    for (const auto& r : corpus.records) {
        for (int id : corpus.vocab.tokenize(r.sentence)) {
            ++total;
            if (corpus.vocab.is_vacuous(id)) ++vacuous;
        }
    }
    CHECK(std::abs(vacuous / static_cast<double>(total) - 0.5) <= 0.05);
}

TEST_CASE("noise-free sentences agree with their patch grids") {
    CorpusConfig cfg = small_config();
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData corpus = generate_corpus(cfg, spec, 11);
    for (const auto& r : corpus.records) {
        CHECK_FALSE(r.noisy);
        // every attribute word names the value encoded at its slot's patch
        for (int id : corpus.vocab.tokenize(r.sentence)) {
            if (!corpus.vocab.is_meaningful(id)) continue;
            const std::string& word = corpus.vocab.word(id);
            auto slot = corpus.slot_of_word(word);
            REQUIRE(slot.has_value());
            size_t decoded = decode_slot(corpus, r.patch_offset, *slot);
            bool word_matches = false;
            for (const auto& synonym : corpus.spec.slots[*slot].values[decoded].synonyms)
                word_matches = word_matches || synonym == word;
            CHECK(word_matches);
        }
    }
}

TEST_CASE("label noise corrupts one attribute word") {
    CorpusConfig cfg = small_config();
    cfg.noise_rate = 1.0;
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData corpus = generate_corpus(cfg, spec, 13);
    size_t mismatched_records = 0;
    for (const auto& r : corpus.records) {
        CHECK(r.noisy);
        size_t mismatches = 0;
        for (int id : corpus.vocab.tokenize(r.sentence)) {
            if (!corpus.vocab.is_meaningful(id)) continue;
            const std::string& word = corpus.vocab.word(id);
            auto slot = corpus.slot_of_word(word);
            size_t truth = corpus.identity_values[static_cast<size_t>(r.identity)][*slot];
            bool word_matches = false;
            for (const auto& synonym : corpus.spec.slots[*slot].values[truth].synonyms)
                word_matches = word_matches || synonym == word;
            if (!word_matches) ++mismatches;
        }
        CHECK(mismatches == 1);
        mismatched_records += mismatches;
    }
    CHECK(mismatched_records == corpus.records.size());
}

TEST_CASE("identity is recoverable from both modalities") {
    CorpusConfig cfg = small_config();
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData corpus = generate_corpus(cfg, spec, 17);
    for (const auto& r : corpus.records) {
        const auto& truth = corpus.identity_values[static_cast<size_t>(r.identity)];
        // image side: nearest-code decoding of each slot patch
        for (size_t s = 0; s < spec.slots.size(); ++s)
            CHECK(decode_slot(corpus, r.patch_offset, s) == truth[s]);
        // text side: attribute words name the identity's values
        std::vector<size_t> decoded(spec.slots.size(), SIZE_MAX);
        for (int id : corpus.vocab.tokenize(r.sentence)) {
            if (!corpus.vocab.is_meaningful(id)) continue;
            const std::string& word = corpus.vocab.word(id);
            auto slot = corpus.slot_of_word(word);
            for (size_t v = 0; v < spec.slots[*slot].values.size(); ++v)
                for (const auto& synonym : spec.slots[*slot].values[v].synonyms)
                    if (synonym == word) decoded[*slot] = v;
        }
        CHECK(decoded == truth);
    }
}

TEST_CASE("tokenize round-trips every corpus sentence") {
    CorpusConfig cfg = small_config();
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData corpus = generate_corpus(cfg, spec, 19);
    for (const auto& r : corpus.records) {
        auto ids = corpus.vocab.tokenize(r.sentence);
        for (int id : ids) CHECK(static_cast<size_t>(id) < corpus.vocab.size());
        CHECK(corpus.vocab.detokenize(ids) == r.sentence);
    }
    CHECK_THROWS_AS(corpus.vocab.tokenize(""), std::invalid_argument);
    CHECK_THROWS_WITH_AS(corpus.vocab.tokenize("red qwzx boots"),
                         doctest::Contains("qwzx"), std::invalid_argument);
}

TEST_CASE("vocabulary partition covers every token exactly once") {
    CorpusConfig cfg = small_config();
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData corpus = generate_corpus(cfg, spec, 23);
    size_t meaningful = 0, vacuous = 0, special = 0;
    for (size_t id = 0; id < corpus.vocab.size(); ++id) {
        switch (corpus.vocab.word_class(static_cast<int>(id))) {
        case WordClass::special: ++special; break;
        case WordClass::meaningful: ++meaningful; break;
        case WordClass::vacuous: ++vacuous; break;
        }
    }
    CHECK(special == 4);
    size_t expected_meaningful = 0;
    for (const auto& slot : spec.slots)
        for (const auto& value : slot.values) expected_meaningful += value.synonyms.size();
    CHECK(meaningful == expected_meaningful);
    CHECK(special + meaningful + vacuous == corpus.vocab.size());
    // every sentence token belongs to exactly one of the two content classes
    for (const auto& r : corpus.records) {
        for (int id : corpus.vocab.tokenize(r.sentence))
            CHECK(corpus.vocab.is_meaningful(id) != corpus.vocab.is_vacuous(id));
    }
}

TEST_CASE("identity split respects the configured sizes") {
    CorpusConfig cfg = small_config();
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData corpus = generate_corpus(cfg, spec, 29);
    std::vector<bool> seen_test(cfg.num_identities, false), seen_train(cfg.num_identities, false);
    for (const auto& r : corpus.records) {
        if (r.split == "test") seen_test[static_cast<size_t>(r.identity)] = true;
        else seen_train[static_cast<size_t>(r.identity)] = true;
    }
    size_t test_ids = 0, both = 0;
    for (size_t i = 0; i < cfg.num_identities; ++i) {
        if (seen_test[i]) ++test_ids;
        if (seen_test[i] && seen_train[i]) ++both;
    }
    CHECK(test_ids == cfg.test_identities);
    CHECK(both == 0); // identity-level split, no leakage
}

TEST_CASE("attribute space too small for the identity count") {
    CorpusConfig cfg = small_config();
    cfg.num_identities = 500; // standard spec holds 6*4*4*4 = 384 combos
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CHECK_THROWS_AS(generate_corpus(cfg, spec, 1), ConfigError);
}

TEST_CASE("ratio_vacuous over dump records") {
    CorpusConfig cfg = small_config();
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData corpus = generate_corpus(cfg, spec, 31);
    const Vocabulary& vocab = corpus.vocab;

    std::vector<MaskDumpRecord> picked;
    picked.push_back({0, 1, "the", 0.0, 0.3, true, "mask"});
    picked.push_back({0, 2, "with", 0.0, 0.3, true, "mask"});
    picked.push_back({0, 3, "red", 0.0, 0.0, false, ""});
    CHECK(ratio_vacuous(picked, vocab) == doctest::Approx(1.0));

    std::vector<MaskDumpRecord> attrs;
    attrs.push_back({0, 1, "red", 0.0, 0.3, true, "mask"});
    attrs.push_back({0, 2, "boots", 0.0, 0.3, true, "mask"});
    CHECK(ratio_vacuous(attrs, vocab) == doctest::Approx(0.0));

    std::vector<MaskDumpRecord> none;
    none.push_back({0, 1, "red", 0.0, 0.0, false, ""});
    CHECK_FALSE(ratio_vacuous(none, vocab).has_value());
}

TEST_CASE("random masking over the corpus keeps ratio_v near the vacuous fraction") {
    CorpusConfig cfg;
    cfg.num_identities = 100;
    cfg.pairs_per_identity = 3;
    cfg.test_identities = 20;
    AttributeSpec spec = AttributeSpec::standard(cfg.patch_grid);
    CorpusData corpus = generate_corpus(cfg, spec, 37);
    AgmConfig agm_cfg;
    Rng rng(38);
    std::vector<MaskDumpRecord> dumps;
    size_t masked_total = 0;
    int sentence_id = 0;
    while (masked_total < 10000) {
        for (const auto& r : corpus.records) {
            auto wrapped = wrap_sequence(corpus.vocab.tokenize(r.sentence));
            MaskedText masked = random_mask(wrapped, 0.15, corpus.vocab, agm_cfg, rng);
            for (size_t i = 0; i < masked.positions.size(); ++i) {
                dumps.push_back({sentence_id, masked.positions[i],
                                 corpus.vocab.word(masked.originals[i]), 0.0, 0.15, true,
                                 mask_action_name(masked.actions[i])});
            }
            masked_total += masked.positions.size();
            ++sentence_id;
            if (masked_total >= 10000) break;
        }
    }
    auto ratio = ratio_vacuous(dumps, corpus.vocab);
    REQUIRE(ratio.has_value());
    // corpus-level vacuous fraction for this seed
    size_t vacuous = 0, total = 0;
    for (const auto& r : corpus.records) {
        for (int id : corpus.vocab.tokenize(r.sentence)) {
            ++total;
            if (corpus.vocab.is_vacuous(id)) ++vacuous;
        }
    }
    double fraction = vacuous / static_cast<double>(total);
    CHECK(std::abs(*ratio - fraction) <= 0.02);
}

TEST_SUITE_END();
