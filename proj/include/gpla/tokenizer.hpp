#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <unordered_map>
#include <vector>

#include "gpla/common.hpp"

namespace gpla::text {

// Lowercase, strip punctuation, split on whitespace. Shared by the
// tokenizer and the text metrics so both see the same token stream.
inline std::vector<std::string> normalize_words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char raw : s) {
        const unsigned char c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty() && (std::isspace(c) || std::ispunct(c))) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Closed-lexicon word tokenizer over the template language. Ids are stable:
// specials first, then the alphabetized lexicon.
class Tokenizer {
public:
    static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3, kSep = 4;

    static const Tokenizer& standard() {
        static Tokenizer tok = make_standard();
        return tok;
    }

    int vocab_size() const { return static_cast<int>(id_to_word_.size()); }
    int max_len() const { return max_len_; }

    int word_id(const std::string& w) const {
        auto it = word_to_id_.find(w);
        return it == word_to_id_.end() ? kUnk : it->second;
    }

    std::vector<int> encode(const std::string& s, bool add_bos = false, bool add_eos = false) const {
        std::vector<int> ids;
        if (add_bos) ids.push_back(kBos);
        for (const std::string& w : normalize_words(s)) ids.push_back(word_id(w));
        if (add_eos) ids.push_back(kEos);
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id < 0 || id >= vocab_size()) throw ContractError("decode: id out of range");
            if (id <= kSep) continue;  // specials dropped
            if (!out.empty()) out.push_back(' ');
            out += id_to_word_[static_cast<std::size_t>(id)];
        }
        return out;
    }

    const std::vector<std::string>& words() const { return id_to_word_; }

private:
    static Tokenizer make_standard() {
        std::vector<std::string> lexicon = {
            // colors and shapes
            "red", "green", "blue", "yellow",
            "circle", "star", "hexagon", "heart", "cube", "triangle", "square", "moon",
            // relations and regions
            "near", "above", "below", "left", "right", "diagonal", "top", "bottom",
            "center", "corner",
            // instruction verbs and glue
            "move", "push", "the", "to", "towards", "of", "a", "in", "on",
            // high-level phrasing
            "put", "all", "blocks", "vertical", "horizontal", "line", "make",
            "parallelogram", "shape", "out",
            // prompt template
            "system", "you", "are", "controlling", "robotic", "agent", "your",
            "task", "is", "user", "what", "should", "robot", "do", "next", "answer",
        };
        std::sort(lexicon.begin(), lexicon.end());
        Tokenizer t;
        t.id_to_word_ = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};
        for (const std::string& w : lexicon) t.id_to_word_.push_back(w);
        for (std::size_t i = 0; i < t.id_to_word_.size(); ++i)
            t.word_to_id_[t.id_to_word_[i]] = static_cast<int>(i);
        t.max_len_ = 24;
        return t;
    }

    std::vector<std::string> id_to_word_;
    std::unordered_map<std::string, int> word_to_id_;
    int max_len_ = 24;
};

}  // namespace gpla::text
