#pragma once

#include <map>
#include <string>
#include <vector>

namespace cpfx {

// Corpus BLEU-4 with add-one smoothing on every n-gram precision and the
// standard brevity penalty; returns a value in [0, 100].
double bleu(const std::vector<std::vector<int>>& hypotheses,
            const std::vector<std::vector<int>>& references);
double bleu_text(const std::vector<std::string>& hypotheses,
                 const std::vector<std::string>& references);

double sequence_accuracy(const std::vector<std::vector<int>>& hypotheses,
                         const std::vector<std::vector<int>>& references);

struct LengthComplianceReport {
    std::vector<double> realized;               // per-example output/source ratio
    double compliance = 0.0;                    // fraction within +-0.1 of target
    std::map<double, std::vector<double>> histogram;  // target -> realized ratios
};

LengthComplianceReport length_compliance(const std::vector<size_t>& output_lens,
                                         const std::vector<size_t>& source_lens,
                                         const std::vector<double>& target_ratios);

}  // namespace cpfx
