#pragma once

// Attribute schemas, ratio discretization, OOV substitution and zero-shot
// label transfer via cosine similarity over a pluggable embedding fixture.

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cpfx {

struct Attribute {
    std::string name;
    std::vector<std::string> labels;  // ordered, unique
    int rho_c = 1;                    // prompt length of each control prefix
    bool oov_enabled = true;
};

struct AttributeSchema {
    std::vector<Attribute> attributes;  // declaration order, at most 4

    void validate() const;
    const Attribute* find(const std::string& name) const;
    int label_index(const std::string& attr, const std::string& label) const;  // -1 absent
    bool empty() const { return attributes.empty(); }
};

// one (attribute, label) pair per declared attribute, in declaration order
struct Guidance {
    std::vector<std::pair<std::string, std::string>> pairs;
};

// Resolved per-attribute selection: a label index, or the OOV slot.
struct ResolvedGuidance {
    struct Slot {
        int label = -1;     // index into Attribute::labels; -1 means OOV
        bool oov() const { return label < 0; }
    };
    std::vector<Slot> slots;  // one per attribute, declaration order
};

class EmbeddingFixture {
public:
    static EmbeddingFixture load(const std::string& path);
    void save(const std::string& path) const;
    void put(const std::string& label, std::vector<double> vec);
    const std::vector<double>& get(const std::string& label) const;  // throws if absent
    bool contains(const std::string& label) const;
    size_t dim() const { return dim_; }
    size_t size() const { return vecs_.size(); }

    // averages the token vectors of a whitespace-separated multi-token label
    std::vector<double> embed_label(const std::string& label) const;

private:
    std::map<std::string, std::vector<double>> vecs_;
    size_t dim_ = 0;
};

// floor(min(ratio, 2) * 20) clamped to [0, 40]; bin width 0.05, cap 2.
int discretize_ratio(double ratio);
constexpr int kRatioBins = 41;

enum class ResolveMode { train, infer };

struct ResolvePolicy {
    double oov_train_prob = 0.02;   // per-example, per-attribute Bernoulli
    bool zero_shot = false;         // route unknown labels via fixture mapping
    const EmbeddingFixture* fixture = nullptr;
};

// Maps example guidance onto label slots. In train mode each attribute is
// independently replaced by its OOV slot with probability oov_train_prob.
// In infer mode unknown labels go to OOV, or through zero_shot_map when the
// policy enables it. Throws when a label cannot be routed anywhere.
ResolvedGuidance resolve(const AttributeSchema& schema, const Guidance& g,
                         ResolveMode mode, std::mt19937_64& rng,
                         const ResolvePolicy& policy = {});

// Seen label with the highest cosine similarity to the unseen label's vector.
// Ties break to the lexicographically smallest label.
std::string zero_shot_map(const std::string& unseen_label,
                          const std::vector<std::string>& seen_labels,
                          const EmbeddingFixture& fixture);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cpfx
