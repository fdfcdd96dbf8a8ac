#include "cpfx/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cpfx/tokenizer.hpp"

namespace cpfx {

void AttributeSchema::validate() const {
    if (attributes.size() > 4)
        throw std::invalid_argument("schema: at most 4 attributes supported");
    std::set<std::string> names;
    for (const auto& a : attributes) {
        if (a.name.empty()) throw std::invalid_argument("schema: empty attribute name");
        if (!names.insert(a.name).second)
            throw std::invalid_argument("schema: duplicate attribute '" + a.name + "'");
        if (a.rho_c < 1)
            throw std::invalid_argument("schema: rho_c must be >= 1 for '" + a.name + "'");
        std::set<std::string> labels(a.labels.begin(), a.labels.end());
        if (labels.size() != a.labels.size())
            throw std::invalid_argument("schema: duplicate label in '" + a.name + "'");
    }
}

const Attribute* AttributeSchema::find(const std::string& name) const {
    for (const auto& a : attributes)
        if (a.name == name) return &a;
    return nullptr;
}

int AttributeSchema::label_index(const std::string& attr, const std::string& label) const {
    const Attribute* a = find(attr);
    if (!a) return -1;
    auto it = std::find(a->labels.begin(), a->labels.end(), label);
    return it == a->labels.end() ? -1 : static_cast<int>(it - a->labels.begin());
}

EmbeddingFixture EmbeddingFixture::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open fixture file: " + path);
    EmbeddingFixture f;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("fixture " + path + ":" + std::to_string(lineno) +
                                     ": expected label<TAB>values");
        std::string label = line.substr(0, tab);
        std::istringstream ss(line.substr(tab + 1));
        std::vector<double> vec;
        double v;
        while (ss >> v) vec.push_back(v);
        if (vec.empty())
            throw std::runtime_error("fixture " + path + ":" + std::to_string(lineno) +
                                     ": no vector values");
        f.put(label, std::move(vec));
    }
    return f;
}

void EmbeddingFixture::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write fixture file: " + path);
    out.precision(17);
    for (const auto& [label, vec] : vecs_) {
        out << label << '\t';
        for (size_t i = 0; i < vec.size(); ++i) {
            if (i) out << ' ';
            out << vec[i];
        }
        out << '\n';
    }
}

void EmbeddingFixture::put(const std::string& label, std::vector<double> vec) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_)
        throw std::invalid_argument("fixture: inconsistent vector dim for '" + label + "'");
    double norm2 = 0.0;
    for (double v : vec) norm2 += v * v;
    if (norm2 == 0.0)
        throw std::invalid_argument("fixture: zero-norm vector for '" + label + "'");
    vecs_[label] = std::move(vec);
}

const std::vector<double>& EmbeddingFixture::get(const std::string& label) const {
    auto it = vecs_.find(label);
    if (it == vecs_.end())
        throw std::out_of_range("fixture: label '" + label + "' not present");
    return it->second;
}

bool EmbeddingFixture::contains(const std::string& label) const {
    return vecs_.count(label) > 0;
}

std::vector<double> EmbeddingFixture::embed_label(const std::string& label) const {
    auto toks = Tokenizer::split(label);
    if (toks.size() <= 1) return get(label);
    std::vector<double> acc(dim_, 0.0);
    for (const auto& t : toks) {
        const auto& v = get(t);
        for (size_t i = 0; i < dim_; ++i) acc[i] += v[i];
    }
    for (auto& x : acc) x /= static_cast<double>(toks.size());
    return acc;
}

int discretize_ratio(double ratio) {
    if (!std::isfinite(ratio) || ratio < 0.0)
        throw std::invalid_argument("discretize_ratio: ratio must be finite and >= 0");
    const double capped = std::min(ratio, 2.0);
    int bin = static_cast<int>(std::floor(capped * 20.0));
    return std::clamp(bin, 0, kRatioBins - 1);
}

ResolvedGuidance resolve(const AttributeSchema& schema, const Guidance& g,
                         ResolveMode mode, std::mt19937_64& rng,
                         const ResolvePolicy& policy) {
    if (g.pairs.size() != schema.attributes.size())
        throw std::invalid_argument("resolve: guidance must cover every attribute");
    ResolvedGuidance out;
    for (size_t i = 0; i < schema.attributes.size(); ++i) {
        const Attribute& attr = schema.attributes[i];
        const auto& [gname, glabel] = g.pairs[i];
        if (gname != attr.name)
            throw std::invalid_argument("resolve: guidance order must match schema ('" +
                                        gname + "' vs '" + attr.name + "')");
        ResolvedGuidance::Slot slot;
        int idx = schema.label_index(attr.name, glabel);
        if (mode == ResolveMode::train) {
            if (idx < 0) {
                if (!attr.oov_enabled)
                    throw std::invalid_argument("resolve: unknown label '" + glabel +
                                                "' with OOV disabled");
                slot.label = -1;
            } else {
                std::uniform_real_distribution<double> u(0.0, 1.0);
                slot.label = u(rng) < policy.oov_train_prob ? -1 : idx;
            }
        } else {
            if (idx >= 0) {
                slot.label = idx;
            } else if (policy.zero_shot) {
                if (!policy.fixture)
                    throw std::invalid_argument("resolve: zero-shot requires a fixture");
                std::string mapped = zero_shot_map(glabel, attr.labels, *policy.fixture);
                slot.label = schema.label_index(attr.name, mapped);
            } else if (attr.oov_enabled) {
                slot.label = -1;
            } else {
                throw std::invalid_argument("resolve: unknown label '" + glabel +
                                            "' with OOV and zero-shot disabled");
            }
        }
        out.slots.push_back(slot);
    }
    return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine_similarity: dim mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_similarity: zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string zero_shot_map(const std::string& unseen_label,
                          const std::vector<std::string>& seen_labels,
                          const EmbeddingFixture& fixture) {
    if (seen_labels.empty())
        throw std::invalid_argument("zero_shot_map: no seen labels");
    const auto u = fixture.embed_label(unseen_label);
    std::string best;
    double best_cos = 0.0;
    bool first = true;
    for (const auto& s : seen_labels) {
        const double c = cosine_similarity(u, fixture.embed_label(s));
        if (first || c > best_cos || (c == best_cos && s < best)) {
            best = s;
            best_cos = c;
            first = false;
        }
    }
    return best;
}

}  // namespace cpfx
