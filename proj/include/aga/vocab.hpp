#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace aga {

/// Ground-truth labeling of each vocabulary word. The vacuous/meaningful
/// partition exists for evaluation (and the "picked" baseline masker); the
/// training objectives never read it.
enum class WordClass { special, meaningful, vacuous };

constexpr int kPadId = 0;
constexpr int kClsId = 1;
constexpr int kSepId = 2;
constexpr int kMaskId = 3;

/// Word-level vocabulary with a fixed special-token prefix. Tokenization is
/// whitespace splitting; unknown words are rejected, never mapped to a
/// placeholder.
class Vocabulary {
public:
    Vocabulary();

    int add(const std::string& word, WordClass cls);
    size_t size() const { return words_.size(); }

    int id(std::string_view word) const; // throws naming the word when absent
    const std::string& word(int id) const;
    WordClass word_class(int id) const;

    bool is_special(int id) const { return word_class(id) == WordClass::special; }
    bool is_content(int id) const { return !is_special(id); }
    bool is_vacuous(int id) const { return word_class(id) == WordClass::vacuous; }
    bool is_meaningful(int id) const { return word_class(id) == WordClass::meaningful; }

    /// Content ids (no class or boundary tokens added; that happens at encode
    /// time). Empty sentences are rejected.
    std::vector<int> tokenize(const std::string& sentence) const;
    std::string detokenize(std::span<const int> ids) const;

    /// All non-special ids, ascending. Used for random-word replacement.
    const std::vector<int>& content_ids() const { return content_ids_; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> words_;
    std::vector<WordClass> classes_;
    std::unordered_map<std::string, int> index_;
    std::vector<int> content_ids_;
};

/// Token sequence as fed to the text encoder: [CLS] w1..wn [SEP].
std::vector<int> wrap_sequence(std::span<const int> content_ids);

} // namespace aga
