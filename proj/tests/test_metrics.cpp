#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "cpfx/metrics.hpp"

using namespace cpfx;

TEST_CASE("bleu extremes") {
    std::vector<std::vector<int>> same = {{1, 2, 3, 4, 5}, {6, 7, 8, 9}};
    CHECK(bleu(same, same) == doctest::Approx(100.0));

    std::vector<std::vector<int>> hyp = {{1, 2, 3, 4}};
    std::vector<std::vector<int>> ref = {{5, 6, 7, 8}};
    CHECK(bleu(hyp, ref) == 0.0);  // disjoint vocab: raw unigram precision is 0

    CHECK_THROWS(bleu({}, {}));
    CHECK_THROWS(bleu(hyp, same));
}

TEST_CASE("bleu two-sentence fixture matches the hand computation") {
    // hyp1 "the cat sat on the mat" vs ref1 "the cat is on the mat"
    // hyp2 "a dog barks"            vs ref2 "a dog barks loudly"
    // 1-grams: matched 8 of 9 -> 8/9 (raw)
    // 2-grams: matched 5 of 7 -> (5+1)/(7+1) = 0.75   ("the cat", "on the",
    //                                    "the mat", "a dog", "dog barks")
    // 3-grams: matched 2 of 5 -> 3/6 = 0.5   ("on the mat", "a dog barks")
    // 4-grams: matched 0 of 3 -> 1/4 = 0.25
    // brevity: hyp 9 vs ref 10 -> exp(1 - 10/9)
    // BLEU = 100 * exp(-1/9) * (8/9 * 0.75 * 0.5 * 0.25)^(1/4) = 48.078371
    std::vector<std::string> hyps = {"the cat sat on the mat", "a dog barks"};
    std::vector<std::string> refs = {"the cat is on the mat", "a dog barks loudly"};
    CHECK(bleu_text(hyps, refs) == doctest::Approx(48.078371).epsilon(1e-6));
}

TEST_CASE("corpus order permutation leaves bleu unchanged") {
    std::mt19937_64 rng(5);
    std::vector<std::vector<int>> hyps, refs;
    for (int i = 0; i < 12; ++i) {
        std::vector<int> h, r;
        for (int j = 0; j < 6 + i % 4; ++j) {
            h.push_back(int(rng() % 10));
            r.push_back(int(rng() % 10));
        }
        // some overlap so precisions are non-trivial
        std::copy(r.begin(), r.begin() + 3, h.begin());
        hyps.push_back(h);
        refs.push_back(r);
    }
    const double before = bleu(hyps, refs);
    std::vector<size_t> perm(hyps.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 5 + 3) % perm.size();
    std::vector<std::vector<int>> h2, r2;
    for (size_t i : perm) {
        h2.push_back(hyps[i]);
        r2.push_back(refs[i]);
    }
    CHECK(bleu(h2, r2) == doctest::Approx(before).epsilon(1e-12));
    CHECK(before >= 0.0);
    CHECK(before <= 100.0);
}

TEST_CASE("sequence accuracy") {
    std::vector<std::vector<int>> h = {{1, 2}, {3}, {4, 5}};
    std::vector<std::vector<int>> r = {{1, 2}, {3, 3}, {4, 5}};
    CHECK(sequence_accuracy(h, r) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("length compliance recount oracle") {
    std::vector<size_t> out = {5, 10, 3, 12};
    std::vector<size_t> src = {10, 10, 10, 10};
    std::vector<double> tgt = {0.5, 1.0, 0.25, 1.0};
    auto rep = length_compliance(out, src, tgt);
    REQUIRE(rep.realized.size() == 4);
    // independent recount
    for (size_t i = 0; i < 4; ++i)
        CHECK(rep.realized[i] == double(out[i]) / double(src[i]));
    // 0.5->0.5 ok, 1.0->1.0 ok, 0.25->0.3 ok (|diff| = 0.05), 1.0->1.2 not ok
    CHECK(rep.compliance == doctest::Approx(0.75));
    CHECK(rep.histogram.size() == 3);
    CHECK(rep.histogram.at(1.0).size() == 2);

    CHECK_THROWS(length_compliance({1}, {0}, {1.0}));  // zero-length source
    CHECK_THROWS(length_compliance({1}, {1, 2}, {1.0}));
}

TEST_CASE("exact target length gives full compliance") {
    std::vector<size_t> src = {8, 12, 9};
    std::vector<double> tgt = {0.5, 0.25, 1.0};
    std::vector<size_t> out;
    for (size_t i = 0; i < src.size(); ++i)
        out.push_back(size_t(tgt[i] * double(src[i])));
    CHECK(length_compliance(out, src, tgt).compliance == doctest::Approx(1.0));
}
