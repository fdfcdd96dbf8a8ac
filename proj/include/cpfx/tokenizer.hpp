#pragma once

// Whitespace tokenizer with a fixed block of reserved specials. Vocabulary is
// the sorted set of corpus words, so construction is deterministic.

#include <string>
#include <unordered_map>
#include <vector>

namespace cpfx {

class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kOov = 3;

    Tokenizer() = default;

    // corpus: whitespace-separated lines; extra_specials are appended after
    // the reserved block (used for control tokens)
    static Tokenizer build(const std::vector<std::string>& corpus_lines,
                           const std::vector<std::string>& extra_specials = {});
    static Tokenizer from_vocab(std::vector<std::string> vocab);

    std::vector<int> encode(const std::string& text) const;  // unknown -> kOov
    std::string decode(const std::vector<int>& ids) const;   // specials skipped
    int id(const std::string& token) const;                  // -1 when absent
    const std::string& token(int id) const { return vocab_.at(id); }
    size_t size() const { return vocab_.size(); }
    const std::vector<std::string>& vocab() const { return vocab_; }

    static std::vector<std::string> split(const std::string& text);

private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;
    void reindex();
};

}  // namespace cpfx
