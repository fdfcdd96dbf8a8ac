#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace cpfx {

// The three attention classes of an encoder-decoder layer: encoder
// self-attention, decoder cross-attention, decoder masked self-attention.
enum class AttentionClass { E = 0, Dc = 1, Dm = 2 };

constexpr std::array<AttentionClass, 3> kAttentionClasses{
    AttentionClass::E, AttentionClass::Dc, AttentionClass::Dm};

inline const char* to_string(AttentionClass c) {
    switch (c) {
        case AttentionClass::E: return "E";
        case AttentionClass::Dc: return "Dc";
        case AttentionClass::Dm: return "Dm";
    }
    return "?";
}

inline AttentionClass attention_class_from(const std::string& s) {
    if (s == "E") return AttentionClass::E;
    if (s == "Dc") return AttentionClass::Dc;
    if (s == "Dm") return AttentionClass::Dm;
    throw std::invalid_argument("unknown attention class: " + s);
}

struct ModelConfig {
    int d = 32;          // hidden dimension
    int L = 2;           // layers per stack
    int heads = 4;
    int vocab = 0;
    int ffn_dim = 64;
    bool rel_bias = false;
    double dropout = 0.0;
    int rho = 2;         // general prompt length (prefix key/value rows)
    int reparam_k = 800; // intermediate width of the re-parameterization MLPs

    void validate() const {
        if (d <= 0 || heads <= 0 || d % heads != 0)
            throw std::invalid_argument("config: d must be a positive multiple of heads");
        if (L < 1) throw std::invalid_argument("config: L must be >= 1");
        if (vocab < 4) throw std::invalid_argument("config: vocab must cover the special tokens");
        if (ffn_dim <= 0) throw std::invalid_argument("config: ffn_dim must be positive");
        if (rho < 0) throw std::invalid_argument("config: rho must be >= 0");
        if (reparam_k < 1) throw std::invalid_argument("config: reparam_k must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("config: dropout must be in [0, 1)");
    }
};

}  // namespace cpfx
