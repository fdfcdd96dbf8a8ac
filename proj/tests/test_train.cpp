#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cpfx/experiment.hpp"
#include "cpfx/rng.hpp"
#include "cpfx/train.hpp"

using namespace cpfx;

namespace {

ModelConfig tiny_cfg(int vocab = 12) {
    ModelConfig c;
    c.d = 8;
    c.L = 1;
    c.heads = 2;
    c.vocab = vocab;
    c.ffn_dim = 12;
    c.rho = 2;
    c.reparam_k = 4;
    return c;
}

AttributeSchema schema1() {
    AttributeSchema s;
    Attribute a;
    a.name = "tone";
    a.labels = {"hi", "lo"};
    s.attributes.push_back(a);
    return s;
}

std::vector<TrainExample> copy_data(int n, uint64_t seed, int vocab = 12) {
    std::vector<TrainExample> out;
    auto rng = named_rng(seed, "copy");
    for (int i = 0; i < n; ++i) {
        TrainExample e;
        const int len = rand_int(rng, 2, 4);
        for (int t = 0; t < len; ++t) e.x.push_back(rand_int(rng, 4, vocab - 1));
        e.y = e.x;
        e.g.pairs.emplace_back("tone", (i % 2) ? "hi" : "lo");
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

TEST_CASE("lr schedule: warmup then linear decay") {
    TrainConfig cfg;
    cfg.lr = 0.4;
    cfg.warmup_steps = 100;
    cfg.total_steps = 500;
    CHECK(lr_at(0, cfg) == 0.0);
    CHECK(lr_at(100, cfg) == doctest::Approx(0.4));
    CHECK(lr_at(100 + 200, cfg) == doctest::Approx(0.2));  // halfway through decay
    CHECK(lr_at(500, cfg) == 0.0);
    CHECK(lr_at(50, cfg) == doctest::Approx(0.2));
    CHECK_THROWS(lr_at(-1, cfg));
}

TEST_CASE("uniform logits give ln(vocab) loss per token") {
    ModelConfig cfg = tiny_cfg(4);  // vocab of exactly 4
    Model m = Model::init(cfg, 1);
    // zero embedding table -> tied head projects onto zero -> uniform logits
    for (auto& v : m.tok_embed.value.data()) v = 0.0;
    PrefixBank bank = PrefixBank::init(cfg, AttributeSchema{}, 2);

    TrainExample e;
    e.x = {1, 2};
    e.y = {3, 3};
    std::vector<ResolvedGuidance> rg{ResolvedGuidance{}};
    const double loss = batch_loss_value(m, bank, {&e}, rg);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("batch loss matches a hand-rolled log-softmax oracle") {
    ModelConfig cfg = tiny_cfg();
    Model m = Model::init(cfg, 5);
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 6);
    TrainExample e;
    e.x = {4, 5, 6};
    e.y = {7, 8};
    ResolvedGuidance rg;
    rg.slots.push_back({1});

    const double loss = batch_loss_value(m, bank, {&e}, {rg});

    // independent: forward logits, then log-softmax by hand
    NoGradGuard ng;
    std::vector<int> y = e.y;
    y.push_back(Tokenizer::kEos);
    Tensor logits = m.forward(e.x, y, bank, rg);
    double total = 0.0;
    for (size_t r = 0; r < logits.rows(); ++r) {
        double mx = -1e300, z = 0.0;
        for (size_t c = 0; c < logits.cols(); ++c) mx = std::max(mx, logits.at(r, c));
        for (size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits.at(r, c) - mx);
        total += mx + std::log(z) - logits.at(r, y[r]);
    }
    CHECK(loss == doctest::Approx(total / 3.0).epsilon(1e-10));

    CHECK_THROWS(batch_loss(m, bank, {}, {}));  // empty batch
}

TEST_CASE("zero steps returns the initialization") {
    ModelConfig cfg = tiny_cfg();
    Model m = Model::init(cfg, 3);
    m.freeze_base();
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 4);
    auto before = snapshot_params(bank.params());

    TrainConfig tc;
    tc.total_steps = 0;
    auto data = copy_data(8, 1);
    TrainResult r = train(m, bank, data, {}, tc, DecodeConfig{});
    CHECK(r.best_step == 0);
    for (auto& [name, vals] : before) CHECK(r.best.at(name) == vals);
}

TEST_CASE("training changes adaptation parameters but never the frozen base") {
    ModelConfig cfg = tiny_cfg();
    Model m = Model::init(cfg, 3);
    m.set_trainable_specials({4, 5});
    m.freeze_base();
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 4);

    std::vector<const Parameter*> frozen;
    for (Parameter* p : m.base_parameters()) frozen.push_back(p);
    const uint64_t phi_before = params_checksum(frozen);

    std::vector<Parameter*> all = m.parameters();
    for (auto* p : bank.params()) all.push_back(p);
    audit_trainable(all);
    std::vector<const Parameter*> adapt;
    for (auto* p : all)
        if (!p->frozen) adapt.push_back(p);
    const uint64_t theta_before = params_checksum(adapt);

    TrainConfig tc;
    tc.total_steps = 50;
    tc.lr = 1e-2;
    tc.batch = 4;
    tc.eval_every = 0;
    auto data = copy_data(16, 2);
    train(m, bank, data, {}, tc, DecodeConfig{});

    CHECK(params_checksum(frozen) == phi_before);
    CHECK(params_checksum(adapt) != theta_before);
    for (const Parameter* p : frozen) CHECK_FALSE(p->value.has_grad());
}

TEST_CASE("gradient accumulation equals one large batch") {
    auto make = [] {
        ModelConfig cfg = tiny_cfg();
        Model m = Model::init(cfg, 7);
        m.freeze_base();
        PrefixBank bank = PrefixBank::init(cfg, schema1(), 8);
        return std::pair<Model, PrefixBank>(std::move(m), std::move(bank));
    };
    auto data = copy_data(16, 3);

    TrainConfig big;
    big.total_steps = 3;
    big.batch = 4;
    big.accum = 1;
    big.lr = 1e-2;
    big.eval_every = 0;
    TrainConfig split = big;
    split.batch = 2;
    split.accum = 2;

    auto [m1, b1] = make();
    train(m1, b1, data, {}, big, DecodeConfig{});
    auto [m2, b2] = make();
    train(m2, b2, data, {}, split, DecodeConfig{});

    auto p1 = b1.params(), p2 = b2.params();
    REQUIRE(p1.size() == p2.size());
    double worst = 0.0;
    for (size_t i = 0; i < p1.size(); ++i)
        for (size_t j = 0; j < p1[i]->value.numel(); ++j)
            worst = std::max(worst,
                             std::fabs(p1[i]->value.data()[j] - p2[i]->value.data()[j]));
    CHECK(worst <= 1e-10);
}

TEST_CASE("same seed and config give identical parameters") {
    auto run = [] {
        ModelConfig cfg = tiny_cfg();
        Model m = Model::init(cfg, 7);
        m.freeze_base();
        PrefixBank bank = PrefixBank::init(cfg, schema1(), 8);
        TrainConfig tc;
        tc.total_steps = 10;
        tc.batch = 2;
        tc.lr = 5e-3;
        tc.eval_every = 5;
        auto data = copy_data(12, 3);
        auto val = copy_data(4, 9);
        train(m, bank, data, val, tc, DecodeConfig{});
        return snapshot_params(bank.params());
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (auto& [name, vals] : a) CHECK(b.at(name) == vals);
}

TEST_CASE("audit rejects stray trainable parameters and frozen adapters") {
    ModelConfig cfg = tiny_cfg();
    Model m = Model::init(cfg, 3);
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 4);
    std::vector<Parameter*> all = m.parameters();
    for (auto* p : bank.params()) all.push_back(p);
    CHECK_THROWS(audit_trainable(all));  // base still trainable

    m.freeze_base();
    CHECK_NOTHROW(audit_trainable(all));

    bank.general.mats[0].frozen = true;
    CHECK_THROWS(audit_trainable(all));
    bank.general.mats[0].frozen = false;
}

TEST_CASE("divergence guard aborts on non-finite loss") {
    ModelConfig cfg = tiny_cfg();
    Model m = Model::init(cfg, 3);
    m.freeze_base();
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 4);
    bank.general.mats[0].value.at(0, 0) = std::nan("");
    TrainConfig tc;
    tc.total_steps = 5;
    tc.batch = 2;
    tc.eval_every = 0;
    auto data = copy_data(8, 4);
    CHECK_THROWS_AS(train(m, bank, data, {}, tc, DecodeConfig{}), divergence_error);
}

TEST_CASE("two-stage training selects the best stage-two checkpoint") {
    ModelConfig cfg = tiny_cfg();
    Model m = Model::init(cfg, 3);
    m.freeze_base();
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 4);

    auto stage1_data = copy_data(12, 5);
    auto stage2_data = copy_data(12, 6);
    auto val = copy_data(4, 7);

    TrainConfig c1;
    c1.total_steps = 6;
    c1.lr = 5e-3;
    c1.eval_every = 3;
    c1.checkpoint_metric = ValMetric::neg_loss;
    TrainConfig c2 = c1;
    c2.lr = 1e-3;

    std::vector<StageSpec> stages{{&stage1_data, c1}, {&stage2_data, c2}};
    TrainResult r = train_stages(m, bank, stages, val, DecodeConfig{});
    CHECK(r.best_step >= 0);
    CHECK(r.best_step <= 6);
    CHECK(r.history.size() == 6);  // stage-2 history only
    // the restored bank equals the best snapshot
    for (Parameter* p : bank.params()) CHECK(r.best.at(p->name) == p->value.data());
}

TEST_CASE("evaluate_metric neg_loss matches batch loss") {
    ModelConfig cfg = tiny_cfg();
    Model m = Model::init(cfg, 3);
    m.freeze_base();
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 4);
    auto val = copy_data(4, 7);
    const double neg = evaluate_metric(m, bank, val, ValMetric::neg_loss, DecodeConfig{});
    CHECK(neg < 0.0);
}
