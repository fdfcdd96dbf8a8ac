#include "cpfx/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cpfx/rng.hpp"
#include "cpfx/tokenizer.hpp"

namespace cpfx {

namespace {

const std::vector<std::string> kSubjects = {"alba", "brin", "caro", "doran", "elia",
                                            "fenn", "gilda", "hano", "iris", "jude"};
const std::vector<std::string> kPredicates = {"likes", "knows", "leads", "joins", "guards"};

const std::vector<std::string> kSeenCats = {"airport", "building", "food", "team",
                                            "city",    "artist",   "river", "comet"};
const std::vector<std::string> kUnseenCats = {"heliport", "skyscraper", "dish", "club",
                                              "village",  "singer",     "stream", "meteor"};

std::string render_one(int template_id, const Triple& t) {
    const auto& s = t.subject;
    const auto& p = t.predicate;
    const auto& o = t.object;
    switch (template_id) {
        case 0: return s + " " + p + " " + o;
        case 1: return o + " is " + p + " by " + s;
        case 2: return "fact : " + s + " " + p + " " + o;
        case 3: return "we know " + s + " " + p + " " + o;
        case 4: return p + " ( " + s + " , " + o + " )";
        case 5: return o + " from " + s + " via " + p;
        case 6: return "pair " + s + " " + o + " under " + p;
        case 7: return s + " with " + o + " : " + p;
        default: throw std::out_of_range("render_template: bad template id");
    }
}

}  // namespace

int d2t_template_count() { return 8; }

std::string render_template(int template_id, const TripleSet& ts) {
    std::string out;
    for (size_t i = 0; i < ts.triples.size(); ++i) {
        if (i) out += " and ";
        out += render_one(template_id, ts.triples[i]);
    }
    return out;
}

std::string linearize_triples(const TripleSet& ts) {
    if (ts.triples.empty())
        throw std::invalid_argument("linearize_triples: empty triple set");
    std::string out = "translate Graph to English:";
    for (const auto& t : ts.triples)
        out += " <H> " + t.subject + " <R> " + t.predicate + " <T> " + t.object;
    return out;
}

TripleSet parse_linearized(const std::string& text) {
    auto toks = Tokenizer::split(text);
    TripleSet ts;
    size_t i = 0;
    // skip the task prompt up to the first <H>
    while (i < toks.size() && toks[i] != "<H>") ++i;
    while (i < toks.size()) {
        Triple t;
        auto read_field = [&](const std::string& marker, std::string& into) {
            if (i >= toks.size() || toks[i] != marker)
                throw std::invalid_argument("parse_linearized: expected " + marker);
            ++i;
            std::string val;
            while (i < toks.size() && toks[i] != "<H>" && toks[i] != "<R>" && toks[i] != "<T>") {
                if (!val.empty()) val += ' ';
                val += toks[i++];
            }
            if (val.empty()) throw std::invalid_argument("parse_linearized: empty field");
            into = val;
        };
        read_field("<H>", t.subject);
        read_field("<R>", t.predicate);
        read_field("<T>", t.object);
        ts.triples.push_back(std::move(t));
    }
    if (ts.triples.empty())
        throw std::invalid_argument("parse_linearized: no triples found");
    return ts;
}

std::string ToyExample::json_line() const {
    nlohmann::ordered_json attrs;
    for (const auto& [k, v] : labels) attrs[k] = v;
    for (const auto& [k, v] : ratios) attrs[k] = v;
    nlohmann::ordered_json j;
    j["input"] = input;
    j["output"] = output;
    j["attrs"] = attrs;
    return j.dump();
}

ToyExample ToyExample::from_json_line(const std::string& line) {
    auto j = nlohmann::json::parse(line);
    ToyExample e;
    e.input = j.at("input").get<std::string>();
    e.output = j.at("output").get<std::string>();
    if (j.contains("attrs"))
        for (auto& [k, v] : j.at("attrs").items()) {
            if (v.is_string())
                e.labels[k] = v.get<std::string>();
            else if (v.is_number())
                e.ratios[k] = v.get<double>();
            else
                throw std::invalid_argument("attrs values must be strings or numbers");
        }
    return e;
}

void write_jsonl(const std::string& path, const std::vector<ToyExample>& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& e : data) out << e.json_line() << '\n';
}

std::vector<ToyExample> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<ToyExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(ToyExample::from_json_line(line));
        } catch (const std::exception& ex) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return out;
}

D2tData gen_toy_d2t(uint64_t seed, int n, int R) {
    if (n < 1) throw std::invalid_argument("gen_toy_d2t: n must be >= 1");
    if (R < 2 || R > static_cast<int>(kSeenCats.size()))
        throw std::invalid_argument("gen_toy_d2t: R must be in [2, 8]");

    D2tData d;
    d.seen_labels.assign(kSeenCats.begin(), kSeenCats.begin() + R);
    d.unseen_labels.assign(kUnseenCats.begin(), kUnseenCats.begin() + R);

    // label fixture: random unit vectors for seen labels, lightly perturbed
    // copies for their paired unseen labels
    constexpr size_t kDim = 16;
    auto frng = named_rng(seed, "d2t.fixture");
    for (int r = 0; r < R; ++r) {
        std::vector<double> v(kDim);
        double norm = 0.0;
        for (auto& x : v) {
            x = rand_normal(frng);
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
        std::vector<double> u(kDim);
        for (size_t i = 0; i < kDim; ++i) u[i] = v[i] + 0.15 * rand_normal(frng);
        d.fixture.put(d.seen_labels[r], std::move(v));
        d.fixture.put(d.unseen_labels[r], std::move(u));
    }

    auto rng = named_rng(seed, "d2t.data");
    auto sample_triples = [&]() {
        TripleSet ts;
        const int count = rand_int(rng, 1, 2);
        for (int t = 0; t < count; ++t) {
            Triple tr;
            tr.subject = kSubjects[rand_int(rng, 0, int(kSubjects.size()) - 1)];
            tr.predicate = kPredicates[rand_int(rng, 0, int(kPredicates.size()) - 1)];
            do {
                tr.object = kSubjects[rand_int(rng, 0, int(kSubjects.size()) - 1)];
            } while (tr.object == tr.subject);
            ts.triples.push_back(std::move(tr));
        }
        return ts;
    };

    // balanced category assignment, shuffled
    std::vector<int> cats(n);
    for (int i = 0; i < n; ++i) cats[i] = i % R;
    std::shuffle(cats.begin(), cats.end(), rng);

    for (int i = 0; i < n; ++i) {
        TripleSet ts = sample_triples();
        ToyExample e;
        e.input = linearize_triples(ts);
        e.output = render_template(cats[i], ts);
        e.labels["category"] = d.seen_labels[cats[i]];
        d.examples.push_back(std::move(e));
    }

    const int n_unseen = std::max(R, n / 10);
    for (int i = 0; i < n_unseen; ++i) {
        const int r = i % R;
        TripleSet ts = sample_triples();
        ToyExample e;
        e.input = linearize_triples(ts);
        e.output = render_template(r, ts);  // renders like its paired seen category
        e.labels["category"] = d.unseen_labels[r];
        d.unseen.push_back(std::move(e));
    }
    return d;
}

const char* kLengthRatioAttr = "len_ratio";

std::string ratio_bin_label(int bin) {
    if (bin < 0 || bin >= kRatioBins)
        throw std::out_of_range("ratio_bin_label: bin out of range");
    std::string s = std::to_string(bin);
    return "b" + std::string(2 - s.size(), '0') + s;
}

LengthData gen_length_task(uint64_t seed, int n) {
    if (n < 1) throw std::invalid_argument("gen_length_task: n must be >= 1");
    static const std::vector<std::string> kWords = {
        "alpha", "bravo", "delta", "echo", "fox",  "golf",  "hotel", "india",
        "juliet", "kilo", "lima",  "mike", "nova", "oscar", "papa",  "quebec"};
    LengthData d;
    auto rng = named_rng(seed, "length.data");
    for (int i = 0; i < n; ++i) {
        const int slen = rand_int(rng, 8, 16);
        std::vector<std::string> src(slen);
        for (auto& w : src) w = kWords[rand_int(rng, 0, int(kWords.size()) - 1)];
        const double ratio = rand_uniform(rng, 0.0, 1.1);
        int tlen = static_cast<int>(std::lround(ratio * slen));
        tlen = std::clamp(tlen, 1, static_cast<int>(std::lround(1.1 * slen)));

        ToyExample e;
        std::ostringstream in;
        for (int t = 0; t < slen; ++t) in << (t ? " " : "") << src[t];
        e.input = in.str();
        std::ostringstream out;
        for (int t = 0; t < tlen; ++t) out << (t ? " " : "") << src[t % slen];
        e.output = out.str();
        e.ratios[kLengthRatioAttr] = double(tlen) / double(slen);
        d.examples.push_back(std::move(e));
    }
    return d;
}

}  // namespace cpfx
