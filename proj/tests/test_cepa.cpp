#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ampse/cepa.hpp"

#include <algorithm>

using namespace ampse;

namespace {

const double kHorizon = 150e-12; // seconds; balances the two classes
const int kFullSamples = 64;

double accuracy(const CepaModel& m, const std::vector<LabeledWaveform>& hold) {
    int ok = 0;
    for (const auto& w : hold) ok += ((m.score(w.prefix) >= 0.5) == w.pass);
    return static_cast<double>(ok) / static_cast<double>(hold.size());
}

CepaModel default_model(const TestbenchSpec& tb, std::uint64_t seed,
                        double window = 0.25) {
    auto corpus = build_cepa_corpus(tb, 400, kHorizon, kFullSamples, window, seed);
    TrainHyper h;
    h.epochs = 200;
    h.patience = 100;
    h.seed = seed;
    return train_classifier(corpus, h, window);
}

} // namespace

TEST_CASE("noiseless-regime corpus trains to high holdout accuracy") {
    TestbenchSpec tb = load_testbench("sar6");
    CepaModel m = default_model(tb, 5);
    auto hold = build_cepa_corpus(tb, 400, kHorizon, kFullSamples, 0.25, 900);
    CHECK(accuracy(m, hold) >= 0.95);
}

TEST_CASE("shuffled labels leave nothing to learn") {
    TestbenchSpec tb = load_testbench("sar6");
    auto corpus = build_cepa_corpus(tb, 400, kHorizon, kFullSamples, 0.25, 5);
    // random relabeling destroys the waveform/label association
    Rng rng(17);
    for (auto& w : corpus) w.pass = rng.uniform() < 0.5;
    TrainHyper h;
    h.epochs = 200;
    h.patience = 100;
    h.seed = 5;
    CepaModel m = train_classifier(corpus, h);
    auto hold = build_cepa_corpus(tb, 400, kHorizon, kFullSamples, 0.25, 900);
    double a = accuracy(m, hold);
    CHECK(a >= 0.40);
    CHECK(a <= 0.60);
}

TEST_CASE("the full window is at least as informative as a quarter (5 seeds)") {
    TestbenchSpec tb = load_testbench("sar6");
    double quarter = 0.0, full = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto hq = build_cepa_corpus(tb, 400, kHorizon, kFullSamples, 0.25,
                                    derive_seed(900, s));
        auto hf = build_cepa_corpus(tb, 400, kHorizon, kFullSamples, 1.0,
                                    derive_seed(900, s));
        quarter += accuracy(default_model(tb, s, 0.25), hq);
        full += accuracy(default_model(tb, s, 1.0), hf);
    }
    CHECK(full >= quarter - 1e-12);
}

TEST_CASE("decision band rules and purity") {
    TestbenchSpec tb = load_testbench("sar6");
    CepaModel m = default_model(tb, 7);
    auto hold = build_cepa_corpus(tb, 100, kHorizon, kFullSamples, 0.25, 31);
    for (const auto& w : hold) {
        EarlyAssertion a = assert_early(m, w.prefix);
        EarlyAssertion b = assert_early(m, w.prefix); // purity
        CHECK(a.decision == b.decision);
        CHECK(a.score == b.score);
        if (a.score >= 0.9)
            CHECK(a.decision == Assertion::Pass);
        else if (a.score <= 0.1)
            CHECK(a.decision == Assertion::Fail);
        else
            CHECK(a.decision == Assertion::Uncertain);
    }
    Waveform wrong = hold.front().prefix;
    wrong.samples.pop_back();
    CHECK_THROWS_AS(assert_early(m, wrong), LengthMismatch);
}

TEST_CASE("training preconditions and divergence") {
    TestbenchSpec tb = load_testbench("sar6");
    auto corpus = build_cepa_corpus(tb, 60, kHorizon, kFullSamples, 0.25, 5);
    TrainHyper h;
    h.epochs = 20;
    h.seed = 1;

    auto all_pass = corpus;
    for (auto& w : all_pass) w.pass = true;
    CHECK_THROWS_AS(train_classifier(all_pass, h), SingleClassError);

    auto ragged = corpus;
    ragged.back().prefix.samples.pop_back();
    CHECK_THROWS_AS(train_classifier(ragged, h), LengthMismatch);

    TrainHyper bad = h;
    bad.lr = 1e200;
    CHECK_THROWS_AS(train_classifier(corpus, bad), DivergedError);

    CHECK_THROWS_AS(train_classifier(corpus, h, 0.0), OutOfBounds);
    CHECK_THROWS_AS(train_classifier(corpus, h, 0.25, 0.1, 0.9), OutOfBounds);
}

TEST_CASE("training is deterministic per seed") {
    TestbenchSpec tb = load_testbench("sar6");
    CepaModel a = default_model(tb, 3);
    CepaModel b = default_model(tb, 3);
    auto hold = build_cepa_corpus(tb, 50, kHorizon, kFullSamples, 0.25, 77);
    for (const auto& w : hold) CHECK(a.score(w.prefix) == b.score(w.prefix));
}

TEST_CASE("filter_space composes with sampling") {
    TestbenchSpec tb = load_testbench("sar6");
    CepaModel m = default_model(tb, 11);

    std::vector<PortDecl> dims;
    for (const auto& mod : tb.modules)
        for (const auto& d : mod.space.params)
            dims.push_back({mod.id + "." + d.name, d.unit, d.lower, d.upper});
    auto eval = [&tb](const Assignment& p) { return evaluate_system(tb, p); };

    SUBCASE("degenerate band accepting everything changes nothing") {
        CepaModel open = m;
        open.pass_above = 1.1;
        open.fail_below = -0.1;
        PointFilter f = filter_space(open, tb, kHorizon, kFullSamples, 99);
        Dataset a = sample_dataset(dims, {}, Sampler::Uniform, 30, eval, 13, f);
        Dataset b = sample_dataset(dims, {}, Sampler::Uniform, 30, eval, 13);
        CHECK(a.inputs == b.inputs);
    }
    SUBCASE("fail_below = 1.0 rejects nearly everything") {
        CepaModel closed = m;
        closed.fail_below = 1.0;
        closed.pass_above = 1.0;
        PointFilter f = filter_space(closed, tb, kHorizon, kFullSamples, 99);
        CHECK_THROWS_AS(sample_dataset(dims, {}, Sampler::Uniform, 30, eval, 13, f),
                        FilterStarvation);
    }
    SUBCASE("default band keeps false-fails rare") {
        PointFilter f = filter_space(m, tb, kHorizon, kFullSamples, 99);
        Rng rng(41);
        int rejected = 0, false_fail = 0;
        for (int i = 0; i < 300; ++i) {
            Assignment p;
            for (const auto& d : dims) p[d.name] = rng.uniform(d.lower, d.upper);
            if (!f(p)) {
                ++rejected;
                if (label_waveform(tb, p, kHorizon)) ++false_fail;
            }
        }
        CHECK(rejected > 60); // a meaningful share of the space is pruned
        CHECK(static_cast<double>(false_fail) / 300.0 <= 0.02);
    }
}

TEST_CASE("waveform corpus round-trips through text") {
    TestbenchSpec tb = load_testbench("sar6");
    auto corpus = build_cepa_corpus(tb, 20, kHorizon, kFullSamples, 0.25, 5);
    auto back = parse_corpus(serialize_corpus(corpus));
    REQUIRE(back.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(back[i].pass == corpus[i].pass);
        CHECK(back[i].prefix.dt == corpus[i].prefix.dt);
        CHECK(back[i].params_hash == corpus[i].params_hash);
        CHECK(back[i].prefix.samples == corpus[i].prefix.samples);
    }
    CHECK_THROWS_AS(parse_corpus("garbage"), ParseError);
}
