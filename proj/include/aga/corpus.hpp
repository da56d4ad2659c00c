#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aga/agm.hpp"
#include "aga/error.hpp"
#include "aga/rng.hpp"
#include "aga/vocab.hpp"

namespace aga {

struct AttributeValue {
    std::string name;
    std::vector<std::string> synonyms; // >= 2, disjoint across values of a slot
};

struct AttributeSlot {
    std::string name;
    size_t patch_index; // the grid cell that carries this slot's code
    std::vector<AttributeValue> values;
};

struct AttributeSpec {
    std::vector<AttributeSlot> slots;

    size_t combinations() const;
    void validate(size_t patch_grid) const;

    /// Built-in spec: four slots (top color, bottom color, footwear,
    /// accessory) with two surface words per value, spread over the grid.
    static AttributeSpec standard(size_t patch_grid);
};

/// Deterministic code vector identifying (slot, value) inside a patch; fixed
/// across corpus seeds so decoders need no side file.
std::vector<double> attribute_code(size_t slot, size_t value, size_t patch_dim);

struct CorpusConfig {
    size_t num_identities = 200;
    size_t pairs_per_identity = 3;
    size_t test_identities = 100;
    double vacuous_fraction = 0.5; // target share of filler tokens, in [0.3, 0.7]
    double noise_rate = 0.0;       // per-pair chance of one corrupted attribute word
    double patch_noise_sigma = 0.1;
    size_t patch_grid = 16;
    size_t patch_dim = 12;

    void validate() const;
};

struct CorpusRecord {
    int identity = 0;
    size_t patch_offset = 0; // record index into the patch array
    std::string sentence;
    std::string split; // "train" | "test"
    bool noisy = false;
};

struct CorpusData {
    CorpusConfig config;
    AttributeSpec spec;
    Vocabulary vocab;
    std::vector<CorpusRecord> records;
    std::vector<double> patches; // records * patch_grid * patch_dim, row-major
    std::vector<std::vector<size_t>> identity_values; // identity -> value index per slot

    std::span<const double> patch_grid_of(size_t record_index) const;
    std::vector<size_t> split_indices(std::string_view split) const;
    size_t max_sentence_tokens() const;

    /// Slot index naming this word, if it is an attribute surface word.
    std::optional<size_t> slot_of_word(std::string_view word) const;
};

CorpusData generate_corpus(const CorpusConfig& config, const AttributeSpec& spec, uint64_t seed);

void save_corpus(const CorpusData& corpus, const std::string& dir);
CorpusData load_corpus(const std::string& dir);

/// N_vacuous / N_masked over mask-dump records. Empty when nothing is masked.
std::optional<double> ratio_vacuous(std::span<const MaskDumpRecord> dumps, const Vocabulary& vocab);

constexpr uint32_t kCorpusFormatVersion = 1;

} // namespace aga
