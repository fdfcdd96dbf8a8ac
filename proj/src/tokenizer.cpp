#include "cpfx/tokenizer.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace cpfx {

std::vector<std::string> Tokenizer::split(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus_lines,
                           const std::vector<std::string>& extra_specials) {
    std::vector<std::string> vocab = {"<pad>", "<bos>", "<eos>", "<oov>",
                                      "<H>", "<R>", "<T>"};
    for (const auto& s : extra_specials) vocab.push_back(s);

    std::set<std::string> seen(vocab.begin(), vocab.end());
    std::set<std::string> words;
    for (const auto& line : corpus_lines)
        for (auto& w : split(line))
            if (!seen.count(w)) words.insert(w);
    vocab.insert(vocab.end(), words.begin(), words.end());
    return from_vocab(std::move(vocab));
}

Tokenizer Tokenizer::from_vocab(std::vector<std::string> vocab) {
    if (vocab.size() < 4)
        throw std::invalid_argument("tokenizer vocab must include the reserved block");
    Tokenizer t;
    t.vocab_ = std::move(vocab);
    t.reindex();
    return t;
}

void Tokenizer::reindex() {
    index_.clear();
    for (size_t i = 0; i < vocab_.size(); ++i) index_[vocab_[i]] = static_cast<int>(i);
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    for (auto& w : split(text)) {
        auto it = index_.find(w);
        out.push_back(it == index_.end() ? kOov : it->second);
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kPad || id == kBos || id == kEos) continue;
        if (id < 0 || static_cast<size_t>(id) >= vocab_.size())
            throw std::out_of_range("decode: token id out of range");
        if (!out.empty()) out += ' ';
        out += vocab_[id];
    }
    return out;
}

int Tokenizer::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

}  // namespace cpfx
