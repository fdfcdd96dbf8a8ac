#pragma once

// Synthetic controllable datasets: a data-to-text task whose surface template
// is dictated by a category attribute (and is deliberately not inferable from
// the input), and a length-control copy task with continuous ratios.

#include <map>
#include <string>
#include <vector>

#include "cpfx/guidance.hpp"

namespace cpfx {

struct Triple {
    std::string subject, predicate, object;
};

struct TripleSet {
    std::vector<Triple> triples;
};

// "translate Graph to English: <H> s <R> p <T> o ..." with stable triple order
std::string linearize_triples(const TripleSet& ts);
TripleSet parse_linearized(const std::string& text);

struct ToyExample {
    std::string input;
    std::string output;
    std::map<std::string, std::string> labels;  // discrete attrs
    std::map<std::string, double> ratios;       // continuous attrs

    std::string json_line() const;
    static ToyExample from_json_line(const std::string& line);
};

void write_jsonl(const std::string& path, const std::vector<ToyExample>& data);
std::vector<ToyExample> read_jsonl(const std::string& path);

struct D2tData {
    std::vector<ToyExample> examples;       // seen categories, balanced
    std::vector<ToyExample> unseen;         // held-out categories
    std::vector<std::string> seen_labels;
    std::vector<std::string> unseen_labels; // unseen[i] renders like seen[i]
    EmbeddingFixture fixture;               // seen + unseen label vectors
};

// Each category imposes a distinct surface template over the same triples, so
// the output is not inferable from the input alone. Unseen categories reuse
// the template of their fixture-nearest seen category.
D2tData gen_toy_d2t(uint64_t seed, int n, int R);

// the template a category renders with; exposed for ambiguity audits
std::string render_template(int template_id, const TripleSet& ts);
int d2t_template_count();

struct LengthData {
    std::vector<ToyExample> examples;  // attrs carry the realized ratio
};

// Inputs are random token strings; targets are truncated/extended copies
// realizing ratios roughly uniform over (0, 1.1].
LengthData gen_length_task(uint64_t seed, int n);
extern const char* kLengthRatioAttr;

// label naming for ratio bins: b00..b40
std::string ratio_bin_label(int bin);

}  // namespace cpfx
