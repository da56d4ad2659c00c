#include "aga/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "aga/error.hpp"

namespace aga {

using nlohmann::json;

namespace {

const std::vector<std::string> kFillerWords = {
    "a", "also", "an", "and", "carrying", "has", "in", "is", "on",
    "person", "seen", "some", "that", "the", "this", "was", "wearing",
    "while", "with", "who"};

constexpr char kPatchMagic[8] = {'A', 'G', 'A', 'P', 'T', 'C', 'H', '\0'};

} // namespace

size_t AttributeSpec::combinations() const {
    size_t n = 1;
    for (const auto& slot : slots) n *= slot.values.size();
    return n;
}

void AttributeSpec::validate(size_t patch_grid) const {
    if (slots.empty()) throw ConfigError("corpus: attribute spec has no slots");
    for (const auto& slot : slots) {
        if (slot.patch_index >= patch_grid)
            throw ConfigError("corpus: slot '" + slot.name + "' patch index " +
                              std::to_string(slot.patch_index) + " outside grid of " +
                              std::to_string(patch_grid));
        if (slot.values.size() < 4)
            throw ConfigError("corpus: slot '" + slot.name + "' needs at least 4 values");
        for (const auto& value : slot.values) {
            if (value.synonyms.size() < 2)
                throw ConfigError("corpus: value '" + value.name + "' needs at least 2 synonyms");
        }
    }
}

AttributeSpec AttributeSpec::standard(size_t patch_grid) {
    auto slot_patch = [patch_grid](size_t i, size_t total) {
        return i * patch_grid / total;
    };
    AttributeSpec spec;
    spec.slots = {
        {"top", slot_patch(0, 4),
         {{"red", {"red", "crimson"}},
          {"blue", {"blue", "navy"}},
          {"green", {"green", "olive"}},
          {"yellow", {"yellow", "amber"}},
          {"white", {"white", "ivory"}},
          {"black", {"black", "onyx"}}}},
        {"bottom", slot_patch(1, 4),
         {{"gray", {"gray", "silver"}},
          {"brown", {"brown", "tan"}},
          {"purple", {"purple", "violet"}},
          {"pink", {"pink", "rose"}}}},
        {"shoes", slot_patch(2, 4),
         {{"sneakers", {"sneakers", "trainers"}},
          {"boots", {"boots", "cleats"}},
          {"heels", {"heels", "pumps"}},
          {"sandals", {"sandals", "slippers"}}}},
        {"accessory", slot_patch(3, 4),
         {{"backpack", {"backpack", "knapsack"}},
          {"handbag", {"handbag", "purse"}},
          {"hat", {"hat", "cap"}},
          {"umbrella", {"umbrella", "parasol"}}}},
    };
    return spec;
}

std::vector<double> attribute_code(size_t slot, size_t value, size_t patch_dim) {
    // Fixed base seed: codes are a property of the encoding scheme, not of
    // any particular corpus, so decoders never need a side file.
    Rng rng = Rng(0x41474143u).fork("attribute-code", slot * 4096 + value);
    std::vector<double> code(patch_dim);
    for (double& c : code) c = rng.bernoulli(0.5) ? 1.0 : -1.0;
    return code;
}

void CorpusConfig::validate() const {
    if (num_identities == 0) throw ConfigError("corpus.num_identities must be positive");
    if (pairs_per_identity == 0) throw ConfigError("corpus.pairs_per_identity must be positive");
    if (test_identities >= num_identities)
        throw ConfigError("corpus.test_identities must be smaller than corpus.num_identities");
    if (vacuous_fraction < 0.3 || vacuous_fraction > 0.7)
        throw ConfigError("corpus.vacuous_fraction must lie in [0.3, 0.7]");
    if (noise_rate < 0.0 || noise_rate > 1.0)
        throw ConfigError("corpus.noise_rate must lie in [0, 1]");
    if (patch_noise_sigma < 0.0) throw ConfigError("corpus.patch_noise_sigma must be non-negative");
    if (patch_grid == 0 || patch_dim == 0)
        throw ConfigError("corpus.patch_grid and corpus.patch_dim must be positive");
}

std::span<const double> CorpusData::patch_grid_of(size_t record_index) const {
    size_t stride = config.patch_grid * config.patch_dim;
    return {patches.data() + record_index * stride, stride};
}

std::vector<size_t> CorpusData::split_indices(std::string_view split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < records.size(); ++i)
        if (records[i].split == split) out.push_back(i);
    return out;
}

size_t CorpusData::max_sentence_tokens() const {
    size_t longest = 0;
    for (const auto& r : records) {
        size_t n = 1;
        for (char c : r.sentence)
            if (c == ' ') ++n;
        longest = std::max(longest, n);
    }
    return longest;
}

std::optional<size_t> CorpusData::slot_of_word(std::string_view word) const {
    for (size_t s = 0; s < spec.slots.size(); ++s) {
        for (const auto& value : spec.slots[s].values) {
            for (const auto& synonym : value.synonyms) {
                if (synonym == word) return s;
            }
        }
    }
    return std::nullopt;
}

CorpusData generate_corpus(const CorpusConfig& config, const AttributeSpec& spec, uint64_t seed) {
    config.validate();
    spec.validate(config.patch_grid);
    if (spec.combinations() < config.num_identities)
        throw ConfigError("corpus: attribute space of " + std::to_string(spec.combinations()) +
                          " combinations cannot hold " + std::to_string(config.num_identities) +
                          " distinct identities");

    CorpusData corpus;
    corpus.config = config;
    corpus.spec = spec;

    // Vocabulary: attribute surface words (meaningful), then fillers.
    for (const auto& slot : spec.slots)
        for (const auto& value : slot.values)
            for (const auto& synonym : value.synonyms) corpus.vocab.add(synonym, WordClass::meaningful);
    for (const auto& filler : kFillerWords) corpus.vocab.add(filler, WordClass::vacuous);

    Rng root(seed);

    // Distinct attribute combination per identity.
    size_t num_slots = spec.slots.size();
    std::vector<size_t> combo_ids(spec.combinations());
    std::iota(combo_ids.begin(), combo_ids.end(), size_t{0});
    Rng combo_rng = root.fork("identity-combos");
    combo_rng.shuffle(combo_ids);
    corpus.identity_values.resize(config.num_identities);
    for (size_t id = 0; id < config.num_identities; ++id) {
        size_t code = combo_ids[id];
        std::vector<size_t> values(num_slots);
        for (size_t s = 0; s < num_slots; ++s) {
            values[s] = code % spec.slots[s].values.size();
            code /= spec.slots[s].values.size();
        }
        corpus.identity_values[id] = std::move(values);
    }

    // Identity-level split.
    std::vector<size_t> identity_order(config.num_identities);
    std::iota(identity_order.begin(), identity_order.end(), size_t{0});
    Rng split_rng = root.fork("split");
    split_rng.shuffle(identity_order);
    std::vector<bool> is_test(config.num_identities, false);
    for (size_t i = 0; i < config.test_identities; ++i) is_test[identity_order[i]] = true;

    size_t grid_stride = config.patch_grid * config.patch_dim;
    double filler_mean = static_cast<double>(num_slots) * config.vacuous_fraction /
                         (1.0 - config.vacuous_fraction);

    for (size_t id = 0; id < config.num_identities; ++id) {
        for (size_t pair = 0; pair < config.pairs_per_identity; ++pair) {
            Rng pair_rng = root.fork("pair", id * 100000 + pair);

            // Sentence: one sampled synonym per slot, fillers interleaved.
            std::vector<std::string> attr_words(num_slots);
            for (size_t s = 0; s < num_slots; ++s) {
                const auto& value = spec.slots[s].values[corpus.identity_values[id][s]];
                attr_words[s] = value.synonyms[pair_rng.uniform_index(value.synonyms.size())];
            }

            bool noisy = pair_rng.bernoulli(config.noise_rate);
            if (noisy) {
                size_t s = pair_rng.uniform_index(num_slots);
                const auto& slot = spec.slots[s];
                size_t truth = corpus.identity_values[id][s];
                size_t wrong = pair_rng.uniform_index(slot.values.size() - 1);
                if (wrong >= truth) ++wrong;
                const auto& value = slot.values[wrong];
                attr_words[s] = value.synonyms[pair_rng.uniform_index(value.synonyms.size())];
            }

            long filler_count = std::lround(filler_mean + pair_rng.uniform(-1.5, 1.5));
            filler_count = std::max(filler_count, 0l);
            std::vector<size_t> gap_counts(num_slots + 1, 0);
            for (long f = 0; f < filler_count; ++f) ++gap_counts[pair_rng.uniform_index(num_slots + 1)];

            std::string sentence;
            auto append_fillers = [&](size_t gap) {
                for (size_t f = 0; f < gap_counts[gap]; ++f) {
                    if (!sentence.empty()) sentence += ' ';
                    sentence += kFillerWords[pair_rng.uniform_index(kFillerWords.size())];
                }
            };
            for (size_t s = 0; s < num_slots; ++s) {
                append_fillers(s);
                if (!sentence.empty()) sentence += ' ';
                sentence += attr_words[s];
            }
            append_fillers(num_slots);

            // Patch grid: background noise everywhere, slot codes at their
            // designated cells.
            size_t offset = corpus.patches.size();
            corpus.patches.resize(offset + grid_stride);
            for (size_t i = 0; i < grid_stride; ++i)
                corpus.patches[offset + i] = pair_rng.normal(0.0, config.patch_noise_sigma);
            for (size_t s = 0; s < num_slots; ++s) {
                auto code = attribute_code(s, corpus.identity_values[id][s], config.patch_dim);
                double* cell = corpus.patches.data() + offset + spec.slots[s].patch_index * config.patch_dim;
                for (size_t i = 0; i < config.patch_dim; ++i) cell[i] += code[i];
            }

            corpus.records.push_back({static_cast<int>(id), corpus.records.size(), sentence,
                                      is_test[id] ? "test" : "train", noisy});
        }
    }
    return corpus;
}

// ---- persistence ------------------------------------------------------------

void save_corpus(const CorpusData& corpus, const std::string& dir) {
    std::filesystem::create_directories(dir);
    corpus.vocab.save(dir + "/vocab.txt");

    std::ofstream records(dir + "/corpus.txt");
    if (!records) throw IoError("corpus: cannot write " + dir + "/corpus.txt");
    for (const auto& r : corpus.records) {
        json line = {{"id", r.identity},
                     {"noisy", r.noisy},
                     {"patch_offset", r.patch_offset},
                     {"sentence", r.sentence},
                     {"split", r.split}};
        records << line.dump() << '\n';
    }

    std::ofstream patches(dir + "/patches.bin", std::ios::binary);
    if (!patches) throw IoError("corpus: cannot write " + dir + "/patches.bin");
    uint32_t version = kCorpusFormatVersion;
    uint32_t grid = static_cast<uint32_t>(corpus.config.patch_grid);
    uint32_t dim = static_cast<uint32_t>(corpus.config.patch_dim);
    uint64_t count = corpus.records.size();
    patches.write(kPatchMagic, sizeof(kPatchMagic));
    patches.write(reinterpret_cast<const char*>(&version), sizeof(version));
    patches.write(reinterpret_cast<const char*>(&grid), sizeof(grid));
    patches.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    patches.write(reinterpret_cast<const char*>(&count), sizeof(count));
    patches.write(reinterpret_cast<const char*>(corpus.patches.data()),
                  static_cast<std::streamsize>(corpus.patches.size() * sizeof(double)));

    json meta;
    meta["format_version"] = kCorpusFormatVersion;
    meta["num_identities"] = corpus.config.num_identities;
    meta["pairs_per_identity"] = corpus.config.pairs_per_identity;
    meta["test_identities"] = corpus.config.test_identities;
    meta["vacuous_fraction"] = corpus.config.vacuous_fraction;
    meta["noise_rate"] = corpus.config.noise_rate;
    meta["patch_noise_sigma"] = corpus.config.patch_noise_sigma;
    meta["patch_grid"] = corpus.config.patch_grid;
    meta["patch_dim"] = corpus.config.patch_dim;
    json slots = json::array();
    for (const auto& slot : corpus.spec.slots) {
        json values = json::array();
        for (const auto& value : slot.values)
            values.push_back({{"name", value.name}, {"synonyms", value.synonyms}});
        slots.push_back({{"name", slot.name}, {"patch_index", slot.patch_index}, {"values", values}});
    }
    meta["slots"] = slots;
    std::ofstream meta_out(dir + "/corpus_meta.json");
    if (!meta_out) throw IoError("corpus: cannot write " + dir + "/corpus_meta.json");
    meta_out << meta.dump(2) << '\n';
}

CorpusData load_corpus(const std::string& dir) {
    std::ifstream meta_in(dir + "/corpus_meta.json");
    if (!meta_in) throw IoError("corpus: cannot read " + dir + "/corpus_meta.json");
    json meta = json::parse(meta_in, nullptr, true);
    if (meta.at("format_version").get<uint32_t>() != kCorpusFormatVersion)
        throw IoError("corpus: unsupported format version in " + dir);

    CorpusData corpus;
    corpus.config.num_identities = meta.at("num_identities").get<size_t>();
    corpus.config.pairs_per_identity = meta.at("pairs_per_identity").get<size_t>();
    corpus.config.test_identities = meta.at("test_identities").get<size_t>();
    corpus.config.vacuous_fraction = meta.at("vacuous_fraction").get<double>();
    corpus.config.noise_rate = meta.at("noise_rate").get<double>();
    corpus.config.patch_noise_sigma = meta.at("patch_noise_sigma").get<double>();
    corpus.config.patch_grid = meta.at("patch_grid").get<size_t>();
    corpus.config.patch_dim = meta.at("patch_dim").get<size_t>();
    for (const auto& slot : meta.at("slots")) {
        AttributeSlot s;
        s.name = slot.at("name").get<std::string>();
        s.patch_index = slot.at("patch_index").get<size_t>();
        for (const auto& value : slot.at("values")) {
            s.values.push_back({value.at("name").get<std::string>(),
                                value.at("synonyms").get<std::vector<std::string>>()});
        }
        corpus.spec.slots.push_back(std::move(s));
    }

    corpus.vocab = Vocabulary::load(dir + "/vocab.txt");

    std::ifstream records(dir + "/corpus.txt");
    if (!records) throw IoError("corpus: cannot read " + dir + "/corpus.txt");
    std::string line;
    while (std::getline(records, line)) {
        if (line.empty()) continue;
        json r = json::parse(line);
        corpus.records.push_back({r.at("id").get<int>(), r.at("patch_offset").get<size_t>(),
                                  r.at("sentence").get<std::string>(), r.at("split").get<std::string>(),
                                  r.at("noisy").get<bool>()});
    }

    std::ifstream patches(dir + "/patches.bin", std::ios::binary);
    if (!patches) throw IoError("corpus: cannot read " + dir + "/patches.bin");
    char magic[8];
    uint32_t version = 0, grid = 0, dim = 0;
    uint64_t count = 0;
    patches.read(magic, sizeof(magic));
    patches.read(reinterpret_cast<char*>(&version), sizeof(version));
    patches.read(reinterpret_cast<char*>(&grid), sizeof(grid));
    patches.read(reinterpret_cast<char*>(&dim), sizeof(dim));
    patches.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!patches || std::memcmp(magic, kPatchMagic, sizeof(magic)) != 0)
        throw IoError("corpus: " + dir + "/patches.bin is not a patch file");
    if (version != kCorpusFormatVersion || grid != corpus.config.patch_grid ||
        dim != corpus.config.patch_dim || count != corpus.records.size())
        throw IoError("corpus: patch file header disagrees with metadata in " + dir);
    corpus.patches.resize(count * grid * dim);
    patches.read(reinterpret_cast<char*>(corpus.patches.data()),
                 static_cast<std::streamsize>(corpus.patches.size() * sizeof(double)));
    if (!patches) throw IoError("corpus: truncated patch file in " + dir);

    // Sentences may carry label noise, so the identity attribute table is
    // rebuilt by decoding the designated patch cells.
    corpus.identity_values.assign(corpus.config.num_identities, {});
    for (const auto& r : corpus.records) {
        auto& values = corpus.identity_values[static_cast<size_t>(r.identity)];
        if (!values.empty()) continue;
        values.resize(corpus.spec.slots.size());
        auto grid_values = corpus.patch_grid_of(r.patch_offset);
        for (size_t s = 0; s < corpus.spec.slots.size(); ++s) {
            const double* cell = grid_values.data() + corpus.spec.slots[s].patch_index * dim;
            double best = -1e300;
            size_t best_value = 0;
            for (size_t v = 0; v < corpus.spec.slots[s].values.size(); ++v) {
                auto code = attribute_code(s, v, dim);
                double dot = 0.0;
                for (size_t i = 0; i < dim; ++i) dot += cell[i] * code[i];
                if (dot > best) {
                    best = dot;
                    best_value = v;
                }
            }
            values[s] = best_value;
        }
    }
    return corpus;
}

std::optional<double> ratio_vacuous(std::span<const MaskDumpRecord> dumps, const Vocabulary& vocab) {
    size_t masked = 0, vacuous = 0;
    for (const auto& record : dumps) {
        if (!record.masked) continue;
        ++masked;
        if (vocab.word_class(vocab.id(record.token)) == WordClass::vacuous) ++vacuous;
    }
    if (masked == 0) return std::nullopt;
    return static_cast<double>(vacuous) / static_cast<double>(masked);
}

} // namespace aga
