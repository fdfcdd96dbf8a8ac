#include "cpfx/experiment.hpp"

#include <algorithm>
#include <stdexcept>

#include "cpfx/rng.hpp"

namespace cpfx {

TrainExample to_train_example(const ToyExample& e, const AttributeSchema& schema,
                              const Tokenizer& tok) {
    TrainExample out;
    out.x = tok.encode(e.input);
    out.y = tok.encode(e.output);
    for (const auto& attr : schema.attributes) {
        auto lit = e.labels.find(attr.name);
        if (lit != e.labels.end()) {
            out.g.pairs.emplace_back(attr.name, lit->second);
            continue;
        }
        auto rit = e.ratios.find(attr.name);
        if (rit != e.ratios.end()) {
            out.g.pairs.emplace_back(attr.name,
                                     ratio_bin_label(discretize_ratio(rit->second)));
            continue;
        }
        throw std::invalid_argument("example lacks attribute '" + attr.name + "'");
    }
    return out;
}

std::vector<TrainExample> to_train_examples(const std::vector<ToyExample>& es,
                                            const AttributeSchema& schema,
                                            const Tokenizer& tok) {
    std::vector<TrainExample> out;
    out.reserve(es.size());
    for (const auto& e : es) out.push_back(to_train_example(e, schema, tok));
    return out;
}

std::vector<std::string> control_token_strings(const AttributeSchema& schema) {
    std::vector<std::string> out;
    for (const auto& attr : schema.attributes) {
        for (const auto& label : attr.labels)
            out.push_back("<ctrl:" + attr.name + "=" + label + ">");
        out.push_back("<ctrl:" + attr.name + "=oov>");
    }
    return out;
}

std::vector<TrainExample> strip_guidance(const std::vector<TrainExample>& data) {
    std::vector<TrainExample> out = data;
    for (auto& e : out) e.g.pairs.clear();
    return out;
}

std::vector<TrainExample> with_control_tokens(const std::vector<TrainExample>& data,
                                              const AttributeSchema& schema,
                                              const Tokenizer& tok) {
    std::vector<TrainExample> out;
    out.reserve(data.size());
    for (const auto& e : data) {
        if (e.g.pairs.size() != schema.attributes.size())
            throw std::invalid_argument("with_control_tokens: guidance/schema mismatch");
        TrainExample t;
        for (size_t a = 0; a < schema.attributes.size(); ++a) {
            const auto& attr = schema.attributes[a];
            const std::string& label = e.g.pairs[a].second;
            const bool known = schema.label_index(attr.name, label) >= 0;
            const std::string token =
                "<ctrl:" + attr.name + "=" + (known ? label : std::string("oov")) + ">";
            const int id = tok.id(token);
            if (id < 0)
                throw std::invalid_argument("with_control_tokens: token '" + token +
                                            "' missing from vocabulary");
            t.x.push_back(id);
        }
        t.x.insert(t.x.end(), e.x.begin(), e.x.end());
        t.y = e.y;
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

std::vector<std::string> corpus_lines(const std::vector<ToyExample>& es) {
    std::vector<std::string> lines;
    for (const auto& e : es) {
        lines.push_back(e.input);
        lines.push_back(e.output);
    }
    return lines;
}

}  // namespace

TaskBundle prepare_d2t(uint64_t seed, int n, int R, int rho_c) {
    D2tData d = gen_toy_d2t(seed, n, R);

    TaskBundle b;
    Attribute cat;
    cat.name = "category";
    cat.labels = d.seen_labels;
    cat.rho_c = rho_c;
    b.schema.attributes.push_back(cat);
    b.fixture = d.fixture;
    b.task_specials = {"<H>", "<R>", "<T>"};

    auto lines = corpus_lines(d.examples);
    auto ulines = corpus_lines(d.unseen);
    lines.insert(lines.end(), ulines.begin(), ulines.end());
    // control tokens always enter the vocabulary so every arm shares one base
    b.tok = Tokenizer::build(lines, control_token_strings(b.schema));

    const size_t n_val = std::min<size_t>(48, std::max<size_t>(1, d.examples.size() / 10));
    const size_t n_test = std::min<size_t>(200, std::max<size_t>(1, d.examples.size() / 10));
    const size_t n_train = d.examples.size() - n_val - n_test;
    std::vector<ToyExample> train(d.examples.begin(), d.examples.begin() + n_train);
    std::vector<ToyExample> val(d.examples.begin() + n_train,
                                d.examples.begin() + n_train + n_val);
    std::vector<ToyExample> test(d.examples.begin() + n_train + n_val, d.examples.end());

    b.train = to_train_examples(train, b.schema, b.tok);
    b.val = to_train_examples(val, b.schema, b.tok);
    b.test = to_train_examples(test, b.schema, b.tok);
    b.unseen = to_train_examples(d.unseen, b.schema, b.tok);
    return b;
}

TaskBundle prepare_length(uint64_t seed, int n, int rho_c) {
    LengthData d = gen_length_task(seed, n);

    TaskBundle b;
    Attribute attr;
    attr.name = kLengthRatioAttr;
    for (int bin = 0; bin < kRatioBins; ++bin) attr.labels.push_back(ratio_bin_label(bin));
    attr.rho_c = rho_c;
    b.schema.attributes.push_back(attr);
    b.tok = Tokenizer::build(corpus_lines(d.examples));

    const size_t n_val = std::min<size_t>(48, std::max<size_t>(1, d.examples.size() / 10));
    const size_t n_test = std::min<size_t>(200, std::max<size_t>(1, d.examples.size() / 10));
    const size_t n_train = d.examples.size() - n_val - n_test;
    std::vector<ToyExample> train(d.examples.begin(), d.examples.begin() + n_train);
    std::vector<ToyExample> val(d.examples.begin() + n_train,
                                d.examples.begin() + n_train + n_val);
    std::vector<ToyExample> test(d.examples.begin() + n_train + n_val, d.examples.end());

    b.train = to_train_examples(train, b.schema, b.tok);
    b.val = to_train_examples(val, b.schema, b.tok);
    b.test = to_train_examples(test, b.schema, b.tok);
    return b;
}

ParamSnapshot pretrain_base(Model& model, const TaskBundle& bundle,
                            const TrainConfig& cfg, const DecodeConfig& dec) {
    ModelConfig zero_cfg = model.cfg;
    zero_cfg.rho = 0;
    PrefixBank empty = PrefixBank::init(zero_cfg, AttributeSchema{}, cfg.seed);
    auto data = strip_guidance(bundle.train);
    auto val = strip_guidance(bundle.val);
    train(model, empty, data, val, cfg, dec);
    return snapshot_params(model.parameters());
}

Model model_from_snapshot(const ModelConfig& cfg, const ParamSnapshot& snap) {
    Model m = Model::init(cfg, 0);
    auto params = m.parameters();
    restore_params(snap, params);
    return m;
}

ArmResult run_arm(Arm arm, const TaskBundle& bundle, const ModelConfig& cfg,
                  const ParamSnapshot& base, const TrainConfig& adapt,
                  const DecodeConfig& eval_dec, uint64_t seed) {
    ArmResult r{model_from_snapshot(cfg, base), PrefixBank{}, TrainResult{}};

    std::vector<std::string> specials = bundle.task_specials;
    AttributeSchema schema = bundle.schema;
    std::vector<TrainExample> data = bundle.train;
    std::vector<TrainExample> val = bundle.val;

    switch (arm) {
        case Arm::control_prefixes:
        case Arm::disjoint_expanders:
            break;
        case Arm::prefix_only:
            schema = AttributeSchema{};
            data = strip_guidance(data);
            val = strip_guidance(val);
            break;
        case Arm::control_tokens:
            specials = control_token_strings(bundle.schema);
            data = with_control_tokens(data, bundle.schema, bundle.tok);
            val = with_control_tokens(val, bundle.schema, bundle.tok);
            schema = AttributeSchema{};
            break;
    }

    std::vector<int> special_ids;
    for (const auto& s : specials) {
        const int id = bundle.tok.id(s);
        if (id < 0) throw std::invalid_argument("run_arm: special '" + s + "' not in vocab");
        special_ids.push_back(id);
    }
    r.model.set_trainable_specials(special_ids);
    r.model.freeze_base();

    r.bank = PrefixBank::init(cfg, schema, seed);
    if (arm == Arm::disjoint_expanders) r.bank.make_disjoint_expanders(seed);

    std::vector<Parameter*> all = r.model.parameters();
    for (Parameter* p : r.bank.params()) all.push_back(p);
    audit_trainable(all);

    TrainConfig tc = adapt;
    tc.seed = seed;
    r.train = train(r.model, r.bank, data, val, tc, eval_dec);
    restore_params(r.train.best, all);
    return r;
}

double eval_accuracy(const Model& model, const PrefixBank& bank,
                     const std::vector<TrainExample>& data, const DecodeConfig& dec,
                     const ResolvePolicy& policy) {
    auto rng = named_rng(0, "eval");
    std::vector<std::vector<int>> hyps, refs;
    for (const auto& e : data) {
        ResolvedGuidance rg = resolve(bank.schema, e.g, ResolveMode::infer, rng, policy);
        if (dec.beam > 1)
            hyps.push_back(beam_search(model, bank, rg, e.x, dec).tokens);
        else
            hyps.push_back(greedy_decode(model, bank, rg, e.x, dec));
        refs.push_back(e.y);
    }
    return sequence_accuracy(hyps, refs);
}

LengthComplianceReport eval_length_control(const Model& model, const PrefixBank& bank,
                                           const std::vector<TrainExample>& sources,
                                           const std::vector<double>& targets,
                                           const DecodeConfig& dec) {
    if (bank.schema.attributes.size() != 1)
        throw std::invalid_argument("eval_length_control: one ratio attribute expected");
    const std::string attr = bank.schema.attributes[0].name;
    auto rng = named_rng(0, "eval");
    std::vector<size_t> out_lens, src_lens;
    std::vector<double> tgt;
    for (double target : targets) {
        Guidance g;
        g.pairs.emplace_back(attr, ratio_bin_label(discretize_ratio(target)));
        ResolvedGuidance rg = resolve(bank.schema, g, ResolveMode::infer, rng);
        for (const auto& e : sources) {
            std::vector<int> out = dec.beam > 1
                                       ? beam_search(model, bank, rg, e.x, dec).tokens
                                       : greedy_decode(model, bank, rg, e.x, dec);
            out_lens.push_back(out.size());
            src_lens.push_back(e.x.size());
            tgt.push_back(target);
        }
    }
    return length_compliance(out_lens, src_lens, tgt);
}

uint64_t count_elems(const std::vector<const Parameter*>& params) {
    uint64_t n = 0;
    for (const Parameter* p : params) n += p->value.numel();
    return n;
}

}  // namespace cpfx
