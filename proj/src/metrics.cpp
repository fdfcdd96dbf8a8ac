#include "cpfx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cpfx/tokenizer.hpp"

namespace cpfx {

namespace {

using Ngram = std::vector<int>;

std::map<Ngram, int> ngram_counts(const std::vector<int>& seq, size_t n) {
    std::map<Ngram, int> out;
    if (seq.size() < n) return out;
    for (size_t i = 0; i + n <= seq.size(); ++i)
        ++out[Ngram(seq.begin() + i, seq.begin() + i + n)];
    return out;
}

}  // namespace

double bleu(const std::vector<std::vector<int>>& hypotheses,
            const std::vector<std::vector<int>>& references) {
    if (hypotheses.size() != references.size())
        throw std::invalid_argument("bleu: hypothesis/reference count mismatch");
    if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");

    double log_p_sum = 0.0;
    for (size_t n = 1; n <= 4; ++n) {
        uint64_t matched = 0, total = 0;
        for (size_t i = 0; i < hypotheses.size(); ++i) {
            auto hyp = ngram_counts(hypotheses[i], n);
            auto ref = ngram_counts(references[i], n);
            for (const auto& [gram, cnt] : hyp) {
                total += cnt;
                auto it = ref.find(gram);
                if (it != ref.end()) matched += std::min(cnt, it->second);
            }
        }
        // add-one smoothing on the higher orders keeps them finite; the
        // unigram precision stays raw so disjoint corpora score zero
        const double smooth = n == 1 ? 0.0 : 1.0;
        if (n == 1 && matched == 0) return 0.0;
        const double p = (double(matched) + smooth) / (double(total) + smooth);
        log_p_sum += 0.25 * std::log(p);
    }

    size_t hyp_len = 0, ref_len = 0;
    for (size_t i = 0; i < hypotheses.size(); ++i) {
        hyp_len += hypotheses[i].size();
        ref_len += references[i].size();
    }
    double bp = 1.0;
    if (hyp_len == 0) return 0.0;
    if (hyp_len < ref_len) bp = std::exp(1.0 - double(ref_len) / double(hyp_len));
    return 100.0 * bp * std::exp(log_p_sum);
}

double bleu_text(const std::vector<std::string>& hypotheses,
                 const std::vector<std::string>& references) {
    // shared word index so identical words map to identical ids
    std::map<std::string, int> index;
    auto to_ids = [&](const std::string& s) {
        std::vector<int> out;
        for (const auto& w : Tokenizer::split(s)) {
            auto [it, _] = index.emplace(w, static_cast<int>(index.size()));
            out.push_back(it->second);
        }
        return out;
    };
    std::vector<std::vector<int>> h, r;
    for (const auto& s : hypotheses) h.push_back(to_ids(s));
    for (const auto& s : references) r.push_back(to_ids(s));
    return bleu(h, r);
}

double sequence_accuracy(const std::vector<std::vector<int>>& hypotheses,
                         const std::vector<std::vector<int>>& references) {
    if (hypotheses.size() != references.size())
        throw std::invalid_argument("sequence_accuracy: count mismatch");
    if (hypotheses.empty()) return 0.0;
    size_t hits = 0;
    for (size_t i = 0; i < hypotheses.size(); ++i)
        if (hypotheses[i] == references[i]) ++hits;
    return double(hits) / double(hypotheses.size());
}

LengthComplianceReport length_compliance(const std::vector<size_t>& output_lens,
                                         const std::vector<size_t>& source_lens,
                                         const std::vector<double>& target_ratios) {
    if (output_lens.size() != source_lens.size() ||
        output_lens.size() != target_ratios.size())
        throw std::invalid_argument("length_compliance: aligned lists required");
    LengthComplianceReport rep;
    size_t within = 0;
    for (size_t i = 0; i < output_lens.size(); ++i) {
        if (source_lens[i] == 0)
            throw std::invalid_argument("length_compliance: zero-length source");
        const double r = double(output_lens[i]) / double(source_lens[i]);
        rep.realized.push_back(r);
        rep.histogram[target_ratios[i]].push_back(r);
        if (std::abs(r - target_ratios[i]) <= 0.1) ++within;
    }
    rep.compliance = output_lens.empty() ? 0.0 : double(within) / double(output_lens.size());
    return rep;
}

}  // namespace cpfx
