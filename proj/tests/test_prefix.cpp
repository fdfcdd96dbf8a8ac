#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "cpfx/model.hpp"
#include "cpfx/prefix.hpp"
#include "cpfx/rng.hpp"
#include "testutil.hpp"

using namespace cpfx;

namespace {

ModelConfig cfg_with(int d, int L, int rho, int k) {
    ModelConfig c;
    c.d = d;
    c.L = L;
    c.heads = 2;
    c.vocab = 12;
    c.ffn_dim = 8;
    c.rho = rho;
    c.reparam_k = k;
    return c;
}

AttributeSchema schema1(int rho_c = 1) {
    AttributeSchema s;
    Attribute a;
    a.name = "category";
    a.labels = {"red", "blue", "green"};
    a.rho_c = rho_c;
    s.attributes.push_back(a);
    return s;
}

AttributeSchema schema2() {
    AttributeSchema s = schema1(1);
    Attribute b;
    b.name = "tone";
    b.labels = {"hi", "lo"};
    b.rho_c = 1;
    s.attributes.push_back(b);
    return s;
}

ResolvedGuidance slots(std::vector<int> labels) {
    ResolvedGuidance rg;
    for (int l : labels) rg.slots.push_back({l});
    return rg;
}

// stamps every folded matrix with a code identifying (which prefix, row, col)
void stamp(PrefixBank& bank) {
    double code = 1.0;
    auto mark = [&](PrefixSet& s) {
        for (auto& m : s.mats) {
            for (size_t r = 0; r < m.value.rows(); ++r)
                for (size_t c = 0; c < m.value.cols(); ++c)
                    m.value.at(r, c) = code + double(r) + double(c) * 1e-3;
            code += 100.0;
        }
    };
    mark(bank.general);
    for (auto& sets : bank.controls)
        for (auto& s : sets) mark(s);
}

}  // namespace

TEST_CASE("materialize orders rows control-then-general with K/V split") {
    ModelConfig cfg = cfg_with(4, 2, 2, 4);
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 7);
    fold(bank);
    stamp(bank);

    // single attribute, rho_c=1, rho=2 -> rows [C, P0, P1]
    auto [K, V] = materialize(bank, slots({1}), AttentionClass::E, 0);
    CHECK(K.rows() == 3);
    CHECK(K.cols() == 4);
    const double ctrl_code = bank.controls[0][1].mats[0].value.at(0, 0);
    const double gen_code = bank.general.mats[0].value.at(0, 0);
    CHECK(K.at(0, 0) == ctrl_code);
    CHECK(K.at(1, 0) == gen_code);
    CHECK(K.at(2, 0) == gen_code + 1.0);
    // V half comes from columns d..2d of layer 0
    CHECK(V.at(0, 0) == ctrl_code + 4e-3);

    // layer 1 slices the next 2d block
    auto [K1, V1] = materialize(bank, slots({1}), AttentionClass::E, 1);
    CHECK(K1.at(0, 0) == ctrl_code + 8e-3);
    CHECK(V1.at(0, 0) == ctrl_code + 12e-3);
}

TEST_CASE("materialize with zero attributes reduces to the general prefix") {
    ModelConfig cfg = cfg_with(4, 1, 2, 4);
    PrefixBank bank = PrefixBank::init(cfg, AttributeSchema{}, 7);
    fold(bank);
    stamp(bank);
    auto [K, V] = materialize(bank, ResolvedGuidance{}, AttentionClass::Dm, 0);
    CHECK(K.rows() == 2);
    CHECK(K.at(0, 0) == bank.general.mats[2].value.at(0, 0));
}

TEST_CASE("two attributes concatenate in reverse declaration order") {
    ModelConfig cfg = cfg_with(4, 1, 1, 4);
    PrefixBank bank = PrefixBank::init(cfg, schema2(), 7);
    fold(bank);
    stamp(bank);
    auto [K, V] = materialize(bank, slots({0, 1}), AttentionClass::Dc, 0);
    REQUIRE(K.rows() == 3);  // [C_tone, C_category, P]
    CHECK(K.at(0, 0) == bank.controls[1][1].mats[1].value.at(0, 0));
    CHECK(K.at(1, 0) == bank.controls[0][0].mats[1].value.at(0, 0));
    CHECK(K.at(2, 0) == bank.general.mats[1].value.at(0, 0));
}

TEST_CASE("materialized row count equals rho plus control lengths") {
    ModelConfig cfg = cfg_with(8, 2, 3, 4);
    AttributeSchema s = schema2();
    s.attributes[0].rho_c = 2;
    PrefixBank bank = PrefixBank::init(cfg, s, 9);
    CHECK(bank.rho_total() == 3 + 2 + 1);
    for (auto cls : kAttentionClasses)
        for (int l = 0; l < cfg.L; ++l) {
            auto [K, V] = materialize(bank, slots({1, 0}), cls, l);
            CHECK(K.rows() == size_t(bank.rho_total()));
            CHECK(V.rows() == size_t(bank.rho_total()));
        }
}

TEST_CASE("changing the guidance label changes only the control rows") {
    ModelConfig cfg = cfg_with(4, 1, 2, 4);
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 7);
    fold(bank);
    auto [Ka, Va] = materialize(bank, slots({0}), AttentionClass::E, 0);
    auto [Kb, Vb] = materialize(bank, slots({2}), AttentionClass::E, 0);
    // general rows (the last rho) bit-identical
    for (size_t r = 1; r < 3; ++r)
        for (size_t c = 0; c < 4; ++c) {
            CHECK(Ka.at(r, c) == Kb.at(r, c));
            CHECK(Va.at(r, c) == Vb.at(r, c));
        }
    // control row differs
    double diff = 0.0;
    for (size_t c = 0; c < 4; ++c) diff = std::max(diff, std::fabs(Ka.at(0, c) - Kb.at(0, c)));
    CHECK(diff > 0.0);
}

TEST_CASE("materialize is pure") {
    ModelConfig cfg = cfg_with(4, 2, 1, 4);
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 7);
    auto [Ka, Va] = materialize(bank, slots({1}), AttentionClass::Dm, 1);
    auto [Kb, Vb] = materialize(bank, slots({1}), AttentionClass::Dm, 1);
    CHECK(Ka.data() == Kb.data());
    CHECK(Va.data() == Vb.data());
}

TEST_CASE("OOV slot materializes the attribute's OOV prefix") {
    ModelConfig cfg = cfg_with(4, 1, 0, 4);
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 7);
    fold(bank);
    stamp(bank);
    auto [K, V] = materialize(bank, slots({-1}), AttentionClass::E, 0);
    CHECK(K.rows() == 1);
    CHECK(K.at(0, 0) == bank.controls[0][3].mats[0].value.at(0, 0));

    AttributeSchema no_oov = schema1();
    no_oov.attributes[0].oov_enabled = false;
    PrefixBank bank2 = PrefixBank::init(cfg, no_oov, 7);
    CHECK_THROWS(materialize(bank2, slots({-1}), AttentionClass::E, 0));
}

TEST_CASE("param_count closed forms") {
    // d=16, L=2, rho=1: expanded general prefix = 1*6*16*2 = 192 values
    ModelConfig cfg = cfg_with(16, 2, 1, 8);
    ParamCountReport r = param_count(AttributeSchema{}, cfg);
    CHECK(r.expanded_general == 192);
    CHECK(r.general_compact == 3 * 1 * 16);
    CHECK(r.expanded_controls == 0);

    // adding one label with rho_c=2, d=16: +32 compact values per attention class
    AttributeSchema s;
    Attribute a;
    a.name = "x";
    a.labels = {"l1"};
    a.rho_c = 2;
    s.attributes.push_back(a);
    ParamCountReport r1 = param_count(s, cfg);
    a.labels = {"l1", "l2"};
    s.attributes[0] = a;
    ParamCountReport r2 = param_count(s, cfg);
    CHECK((r2.controls_compact - r1.controls_compact) == 3 * 32);
    CHECK((r2.controls_compact - r1.controls_compact) / 3 == 16 * 2);

    // rho=0, no attributes -> zero prefix parameters
    ModelConfig cfg0 = cfg_with(16, 2, 0, 8);
    ParamCountReport r0 = param_count(AttributeSchema{}, cfg0);
    CHECK(r0.general_compact == 0);
    CHECK(r0.controls_compact == 0);
    CHECK(r0.inference_expanded == 0);

    // the paper-scale configuration: |theta| < |theta~|
    ModelConfig big = cfg_with(1024, 12, 10, 800);
    ParamCountReport rb = param_count(AttributeSchema{}, big);
    CHECK(rb.inference_expanded < rb.trainable_compact);
    CHECK(rb.expanded_general == 10ull * 6 * 1024 * 12);
}

TEST_CASE("param_count matches actually allocated parameters") {
    ModelConfig cfg = cfg_with(8, 2, 2, 4);
    AttributeSchema s = schema2();
    s.attributes[1].rho_c = 3;
    PrefixBank bank = PrefixBank::init(cfg, s, 7);
    ParamCountReport r = param_count(s, cfg);

    uint64_t compact = 0;
    for (Parameter* p : bank.params()) compact += p->value.numel();
    CHECK(compact == r.trainable_compact);

    FoldReport fr = fold(bank);
    CHECK(fr.compact_params == r.trainable_compact);
    CHECK(fr.folded_params == r.inference_expanded);
}

TEST_CASE("fold replaces compact matrices and drops expanders") {
    ModelConfig cfg = cfg_with(4, 2, 2, 4);
    Model m = Model::init(cfg, 1);
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 7);

    std::vector<int> x{4, 5, 6}, y{7, 8};
    ResolvedGuidance rg = slots({2});
    Tensor before = m.forward(x, y, bank, rg);

    FoldReport fr = fold(bank);
    CHECK(bank.folded);
    CHECK(fr.folded_params > 0);
    Tensor after = m.forward(x, y, bank, rg);
    double diff = 0.0;
    for (size_t i = 0; i < before.numel(); ++i)
        diff = std::max(diff, std::fabs(before.data()[i] - after.data()[i]));
    CHECK(diff <= 1e-12);

    CHECK(bank.general.mats[0].value.cols() == size_t(2 * 4 * 2));
    CHECK_THROWS(fold(bank));  // already folded
    for (const auto& e : bank.shared) CHECK(e == nullptr);
}

TEST_CASE("fold with empty control set expands only the general prefix") {
    ModelConfig cfg = cfg_with(4, 1, 2, 4);
    PrefixBank bank = PrefixBank::init(cfg, AttributeSchema{}, 7);
    FoldReport fr = fold(bank);
    CHECK(fr.folded_params == param_count(AttributeSchema{}, cfg).inference_expanded);
}

TEST_CASE("expander sharing check") {
    ModelConfig cfg = cfg_with(4, 1, 1, 4);
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 7);
    CHECK(expander_sharing_check(bank));

    bank.controls[0][0].expanders[1] = bank.shared[1]->clone("reparam.clone", 99);
    CHECK_FALSE(expander_sharing_check(bank));
}

TEST_CASE("exactly three expanders exist regardless of label count") {
    ModelConfig cfg = cfg_with(4, 1, 1, 4);
    PrefixBank bank = PrefixBank::init(cfg, schema2(), 7);
    CHECK(expander_sharing_check(bank));
    std::set<const ClassExpander*> distinct;
    distinct.insert(bank.general.expanders[0].get());
    distinct.insert(bank.general.expanders[1].get());
    distinct.insert(bank.general.expanders[2].get());
    for (const auto& sets : bank.controls)
        for (const auto& s : sets)
            for (const auto& e : s.expanders) distinct.insert(e.get());
    CHECK(distinct.size() == 3);
}

TEST_CASE("expand is row-wise: permuting input rows permutes output rows") {
    ModelConfig cfg = cfg_with(6, 2, 3, 5);
    PrefixBank bank = PrefixBank::init(cfg, AttributeSchema{}, 3);
    auto& e = *bank.shared[0];
    auto rng = named_rng(4, "rows");
    Tensor in(3, 6);
    for (auto& v : in.data()) v = rand_normal(rng);
    Tensor out = e.expand(in);

    Tensor perm(3, 6);
    const std::array<size_t, 3> order{2, 0, 1};
    for (size_t r = 0; r < 3; ++r)
        for (size_t c = 0; c < 6; ++c) perm.at(r, c) = in.at(order[r], c);
    Tensor out_perm = e.expand(perm);
    for (size_t r = 0; r < 3; ++r)
        for (size_t c = 0; c < out.cols(); ++c)
            CHECK(out_perm.at(r, c) == out.at(order[r], c));
}

TEST_CASE("expand shape and zero map") {
    ModelConfig cfg = cfg_with(16, 2, 2, 8);
    auto e = ClassExpander::init(AttentionClass::E, 16, 8, 2, 5);
    Tensor in(2, 16);
    Tensor out = e->expand(in);
    CHECK(out.rows() == 2);
    CHECK(out.cols() == 64);

    for (auto* p : e->params())
        for (auto& v : p->value.data()) v = 0.0;
    Tensor z = e->expand(in);
    for (double v : z.data()) CHECK(v == 0.0);

    Tensor bad(2, 5);
    CHECK_THROWS(e->expand(bad));
}

TEST_CASE("export_rows shape, determinism and duplicate projection") {
    ModelConfig cfg = cfg_with(4, 1, 1, 4);
    PrefixBank bank = PrefixBank::init(cfg, schema1(), 7);
    CHECK_THROWS(export_rows(bank, "category", AttentionClass::Dm));  // not folded
    fold(bank);
    ExportedRows ex = export_rows(bank, "category", AttentionClass::Dm);
    CHECK(ex.labels.size() == 3);
    CHECK(ex.rows.rows() == 3);
    CHECK(ex.rows.cols() == size_t(1 * 2 * 4 * 1));
    CHECK(ex.projection.rows() == 3);
    CHECK(ex.projection.cols() == 2);
    CHECK_THROWS(export_rows(bank, "missing", AttentionClass::Dm));

    // identical control prefixes project to identical points
    const auto src = bank.controls[0][0].mats[2].value.data();
    bank.controls[0][1].mats[2].value.data() = src;
    ExportedRows ex2 = export_rows(bank, "category", AttentionClass::Dm);
    CHECK(ex2.projection.at(0, 0) == doctest::Approx(ex2.projection.at(1, 0)).epsilon(1e-12));
    CHECK(ex2.projection.at(0, 1) == doctest::Approx(ex2.projection.at(1, 1)).epsilon(1e-12));
}

TEST_CASE("pca projection recovers a planted direction") {
    // rows lie on a line: first component must capture it exactly
    Tensor m(5, 3);
    for (size_t r = 0; r < 5; ++r) {
        const double t = double(r) - 2.0;
        m.at(r, 0) = 3.0 * t;
        m.at(r, 1) = -4.0 * t;
        m.at(r, 2) = 0.0;
    }
    Tensor proj = pca_project2(m);
    for (size_t r = 0; r < 5; ++r) {
        const double t = double(r) - 2.0;
        CHECK(std::fabs(proj.at(r, 0)) == doctest::Approx(5.0 * std::fabs(t)).epsilon(1e-9));
        CHECK(proj.at(r, 1) == doctest::Approx(0.0).epsilon(1e-9));
    }
}
