#include "aga/vocab.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "aga/error.hpp"

namespace aga {

namespace {

const char* class_name(WordClass c) {
    switch (c) {
    case WordClass::special: return "special";
    case WordClass::meaningful: return "meaningful";
    case WordClass::vacuous: return "vacuous";
    }
    return "?";
}

WordClass class_from_name(const std::string& s) {
    if (s == "special") return WordClass::special;
    if (s == "meaningful") return WordClass::meaningful;
    if (s == "vacuous") return WordClass::vacuous;
    throw IoError("vocabulary: unknown word class '" + s + "'");
}

} // namespace

Vocabulary::Vocabulary() {
    add("[PAD]", WordClass::special);
    add("[CLS]", WordClass::special);
    add("[SEP]", WordClass::special);
    add("[MASK]", WordClass::special);
}

int Vocabulary::add(const std::string& word, WordClass cls) {
    if (word.empty() || word.find_first_of(" \t\n") != std::string::npos)
        throw std::invalid_argument("vocabulary: invalid word '" + word + "'");
    if (index_.contains(word))
        throw std::invalid_argument("vocabulary: duplicate word '" + word + "'");
    int id = static_cast<int>(words_.size());
    words_.push_back(word);
    classes_.push_back(cls);
    index_.emplace(word, id);
    if (cls != WordClass::special) content_ids_.push_back(id);
    return id;
}

int Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end())
        throw std::invalid_argument("vocabulary: unknown word '" + std::string(word) + "'");
    return it->second;
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= words_.size())
        throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
    return words_[static_cast<size_t>(id)];
}

WordClass Vocabulary::word_class(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= classes_.size())
        throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
    return classes_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string& sentence) const {
    std::vector<int> ids;
    std::istringstream in(sentence);
    std::string word;
    while (in >> word) ids.push_back(id(word));
    if (ids.empty())
        throw std::invalid_argument("tokenize: empty sentence");
    return ids;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("vocabulary: cannot write " + path);
    for (size_t i = 0; i < words_.size(); ++i)
        out << words_[i] << '\t' << class_name(classes_[i]) << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("vocabulary: cannot read " + path);
    Vocabulary vocab;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError("vocabulary: malformed line " + std::to_string(line_no) + " in " + path);
        std::string word = line.substr(0, tab);
        WordClass cls = class_from_name(line.substr(tab + 1));
        if (line_no <= 4) {
            // the special prefix is created by the constructor
            if (static_cast<size_t>(vocab.id(word)) != line_no - 1 || cls != WordClass::special)
                throw IoError("vocabulary: special token prefix mismatch in " + path);
            continue;
        }
        vocab.add(word, cls);
    }
    return vocab;
}

std::vector<int> wrap_sequence(std::span<const int> content_ids) {
    std::vector<int> out;
    out.reserve(content_ids.size() + 2);
    out.push_back(kClsId);
    out.insert(out.end(), content_ids.begin(), content_ids.end());
    out.push_back(kSepId);
    return out;
}

} // namespace aga
