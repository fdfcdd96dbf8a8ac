#pragma once

// Greedy and beam-search generation with length normalization, length limits
// and no-repeat-trigram blocking.

#include <vector>

#include "cpfx/model.hpp"

namespace cpfx {

struct DecodeConfig {
    int beam = 1;
    double ln_alpha = 1.0;  // score = logprob / len^alpha, len counts EOS
    int min_len = 1;
    int max_len = 32;
    bool no_repeat_trigram = false;

    void validate() const;
};

// -inf for any token t where (history[-2], history[-1], t) already occurs in
// history as a consecutive trigram; history is the hypothesis so far
std::vector<double> block_repeat_trigrams(std::vector<double> logits,
                                          const std::vector<int>& history);

std::vector<int> greedy_decode(const Model& model, const PrefixBank& bank,
                               const ResolvedGuidance& rg, const std::vector<int>& x,
                               const DecodeConfig& cfg);

struct BeamResult {
    std::vector<int> tokens;      // without BOS/EOS
    double logprob = 0.0;         // includes the final EOS term
    double normalized = 0.0;      // logprob / (tokens+1)^alpha
};

BeamResult beam_search(const Model& model, const PrefixBank& bank,
                       const ResolvedGuidance& rg, const std::vector<int>& x,
                       const DecodeConfig& cfg);

}  // namespace cpfx
