#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ampse/oracle.hpp"
#include "ampse/rng.hpp"

#include <cmath>

using namespace ampse;

namespace {

Assignment random_sar6_point(Rng& rng, const TestbenchSpec& tb) {
    Assignment p;
    for (const auto& m : tb.modules)
        for (const auto& d : m.space.params)
            p[m.id + "." + d.name] = rng.uniform(d.lower, d.upper);
    return p;
}

} // namespace

TEST_CASE("sar6 package loads with the documented shape") {
    TestbenchSpec tb = load_testbench("sar6");
    CHECK(tb.id == "sar6");
    CHECK(tb.modules.size() == 4);
    int total_params = 0;
    for (const auto& m : tb.modules) total_params += static_cast<int>(m.space.params.size());
    CHECK(total_params == 6);
    CHECK(tb.spec_targets.entries.size() == 5);
    CHECK(tb.spec_targets.objective().name == "P_total");
}

TEST_CASE("testbench package rejects malformed input") {
    std::string text = builtin_testbench_text("sar6");

    SUBCASE("doubly bound consumer port") {
        std::string dup = text;
        dup.insert(dup.find("spec ENOB"), "bind driver.R_drv -> trackhold_dac.R_drv\n");
        CHECK_THROWS_AS(parse_testbench(dup), BindingError);
    }
    SUBCASE("unknown formula id") {
        std::string bad = text;
        auto pos = bad.find("sar6_th");
        bad.replace(pos, 7, "nope___");
        CHECK_THROWS_AS(parse_testbench(bad), UnknownFormula);
    }
    SUBCASE("garbage line") {
        CHECK_THROWS_AS(parse_testbench("ampse-tb/1\nbananas\n"), ParseError);
    }
    SUBCASE("unbound consumer port") {
        std::string unbound = text;
        auto pos = unbound.find("bind driver.R_drv -> trackhold_dac.R_drv\n");
        unbound.erase(pos, std::string("bind driver.R_drv -> trackhold_dac.R_drv\n").size());
        CHECK_THROWS_AS(parse_testbench(unbound), BindingError);
    }
}

TEST_CASE("testbench serialization round-trips") {
    TestbenchSpec tb = load_testbench("sar6");
    TestbenchSpec back = parse_testbench(serialize_testbench(tb));
    CHECK(serialize_testbench(back) == serialize_testbench(tb));
    CHECK(back.content_hash() == tb.content_hash());
}

TEST_CASE("trackhold_dac reference formulas") {
    TestbenchSpec tb = load_testbench("sar6");
    ModuleResult r = evaluate_module(tb, "trackhold_dac", {{"c_u", 1.0}, {"w_sw", 2.0}},
                                     {{"R_drv", 0.1}, {"C_cmp", 1.0}});
    CHECK(r.metrics.at("C_samp") == doctest::Approx(65.0).epsilon(1e-12));
    CHECK(r.metrics.at("t_settle") == doctest::Approx(110.36).epsilon(1e-3));
    CHECK(r.metrics.at("v_ktc") == doctest::Approx(2.524e-4).epsilon(1e-3));

    // C_dac = 2^n c_u is linear in c_u
    ModuleResult r2 = evaluate_module(tb, "trackhold_dac", {{"c_u", 2.0}, {"w_sw", 2.0}},
                                      {{"R_drv", 0.1}, {"C_cmp", 1.0}});
    double c_dac1 = r.metrics.at("C_samp") - 1.0;
    double c_dac2 = r2.metrics.at("C_samp") - 1.0;
    CHECK(c_dac1 == doctest::Approx(64.0));
    CHECK(c_dac2 == doctest::Approx(128.0));
}

TEST_CASE("comparator reference formulas") {
    TestbenchSpec tb = load_testbench("sar6");
    ModuleResult r = evaluate_module(tb, "comparator", {{"w_in", 25.0}, {"i_tail", 1.0}},
                                     {{"v_ktc", 0.0}});
    CHECK(r.metrics.at("t_cmp") == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(r.metrics.at("v_cmp") == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.interface_out.at("C_cmp") == doctest::Approx(6.25).epsilon(1e-12));
}

TEST_CASE("evaluate_module validates inputs") {
    TestbenchSpec tb = load_testbench("sar6");
    CHECK_THROWS_AS(evaluate_module(tb, "comparator", {{"w_in", 99.0}, {"i_tail", 1.0}},
                                    {{"v_ktc", 0.0}}),
                    OutOfBounds);
    CHECK_THROWS_AS(
        evaluate_module(tb, "trackhold_dac", {{"c_u", 1.0}, {"w_sw", 2.0}}, {{"R_drv", 0.1}}),
        MissingPort);
    CHECK_THROWS_AS(evaluate_module(tb, "comparator", {{"w_in", 2.0}}, {{"v_ktc", 0.0}}),
                    MissingInput);
}

TEST_CASE("gridded parameters are enforced") {
    std::string text = builtin_testbench_text("toy1");
    auto pos = text.find("param blob p 1 0 8");
    text.replace(pos, std::string("param blob p 1 0 8").size(), "param blob p 1 0 8 0.5");
    TestbenchSpec tb = parse_testbench(text);
    CHECK_NOTHROW(evaluate_module(tb, "blob", {{"p", 2.5}}, {}));
    CHECK_THROWS_AS(evaluate_module(tb, "blob", {{"p", 2.3}}, {}), OutOfBounds);
}

TEST_CASE("system evaluation at the midpoint matches the golden fixture") {
    TestbenchSpec tb = load_testbench("sar6");
    Assignment specs = evaluate_system(tb, space_midpoint(tb));
    // frozen once from a hand evaluation of the composed closed forms:
    // mid: c_u=4.25, w_sw=8.5, w_in=16.5, i_tail=1.025, d=4.25, w_drv=32.5
    // C_cmp=4.125, R_drv=1/32.5, C_samp=276.125, R_total=0.08958...
    // t_settle=120.0105..., t_cmp=6.0771..., t_logic=1.8824..., T=167.767...
    CHECK(specs.at("f_s_max") == doctest::Approx(5.9603148).epsilon(1e-6));
    CHECK(specs.at("P_total") == doctest::Approx(2.425).epsilon(1e-9));
    CHECK(specs.at("v_noise_total") == doctest::Approx(1.7362236e-4).epsilon(1e-6));
    CHECK(specs.at("ENOB") == doctest::Approx(5.9996814).epsilon(1e-6));
    CHECK(specs.at("area_proxy") == doctest::Approx(357.75).epsilon(1e-12));
}

TEST_CASE("oracle is pure and monotone in the documented directions") {
    TestbenchSpec tb = load_testbench("sar6");
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        Assignment p = random_sar6_point(rng, tb);
        Assignment a = evaluate_system(tb, p);
        Assignment b = evaluate_system(tb, p);
        REQUIRE(a == b); // bit-exact repeatability

        Assignment q = p;
        q["comparator.w_in"] = std::min(32.0, p["comparator.w_in"] * 1.1 + 0.1);
        Assignment pm = evaluate_module(tb, "comparator",
                                        {{"w_in", p["comparator.w_in"]}, {"i_tail", 1.0}},
                                        {{"v_ktc", 0.0}})
                            .metrics;
        Assignment qm = evaluate_module(tb, "comparator",
                                        {{"w_in", q["comparator.w_in"]}, {"i_tail", 1.0}},
                                        {{"v_ktc", 0.0}})
                            .metrics;
        REQUIRE(qm.at("v_cmp") < pm.at("v_cmp")); // larger w_in, less comparator noise

        Assignment r = p;
        r["trackhold_dac.c_u"] = std::min(8.0, p["trackhold_dac.c_u"] * 1.1 + 0.01);
        Assignment ra = evaluate_system(tb, r);
        REQUIRE(ra.at("v_noise_total") <= a.at("v_noise_total")); // more C, less kT/C

        Assignment s = p;
        s["driver.w_drv"] = std::min(64.0, p["driver.w_drv"] + 1.0);
        Assignment sa = evaluate_system(tb, s);
        REQUIRE(sa.at("P_total") > a.at("P_total"));
        REQUIRE(sa.at("f_s_max") >= a.at("f_s_max")); // lower R_drv settles faster
    }
}

TEST_CASE("layout stage perturbs capacitive and resistive terms") {
    TestbenchSpec tb = load_testbench("sar6");
    TestbenchSpec laid = apply_stage(tb, Stage::Layout, 42);
    CHECK(tb.perturbation.stage == Stage::Schematic); // input unchanged

    ModuleResult r = evaluate_module(laid, "trackhold_dac", {{"c_u", 1.0}, {"w_sw", 2.0}},
                                     {{"R_drv", 0.1}, {"C_cmp", 1.0}});
    CHECK(r.metrics.at("C_samp") == doctest::Approx(65.0 * 1.15 + 2.0).epsilon(1e-12));

    // schematic stage is the identity
    TestbenchSpec sch = apply_stage(tb, Stage::Schematic, 99);
    ModuleResult a = evaluate_module(tb, "trackhold_dac", {{"c_u", 1.0}, {"w_sw", 2.0}},
                                     {{"R_drv", 0.1}, {"C_cmp", 1.0}});
    ModuleResult b = evaluate_module(sch, "trackhold_dac", {{"c_u", 1.0}, {"w_sw", 2.0}},
                                     {{"R_drv", 0.1}, {"C_cmp", 1.0}});
    CHECK(a.metrics == b.metrics);

    // t_settle strictly increases at any fixed parameters
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        Assignment p = random_sar6_point(rng, tb);
        Assignment sch_m = evaluate_system(tb, p);
        double t0 = 1000.0 / sch_m.at("f_s_max");
        double t1 = 1000.0 / evaluate_system(laid, p).at("f_s_max");
        REQUIRE(t1 > t0);
    }
}

TEST_CASE("silicon stage is deterministic per (stage, seed)") {
    TestbenchSpec tb = load_testbench("sar6");
    TestbenchSpec s1 = apply_stage(tb, Stage::Silicon, 123);
    TestbenchSpec s2 = apply_stage(tb, Stage::Silicon, 123);
    TestbenchSpec s3 = apply_stage(tb, Stage::Silicon, 124);
    Rng rng(3);
    bool any_diff = false;
    for (int i = 0; i < 50; ++i) {
        Assignment p = random_sar6_point(rng, tb);
        Assignment a = evaluate_system(s1, p);
        Assignment b = evaluate_system(s2, p);
        REQUIRE(a == b);
        if (evaluate_system(s3, p) != a) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("transient settling waveform") {
    TestbenchSpec tb = load_testbench("sar6");
    Assignment p = space_midpoint(tb);
    Assignment specs = evaluate_system(tb, p);
    double tau = 1e-12 * (1000.0 / specs.at("f_s_max") -
                          6.0 * (25.0 / std::sqrt(16.5 * 1.025) + 8.0 / 4.25)) /
                 (0.693 * 7.0);

    Waveform w = simulate_transient(tb, p, 10.0 * tau, tau * std::log(2.0), 5);
    Waveform w2 = simulate_transient(tb, p, 10.0 * tau, tau * std::log(2.0), 5);
    CHECK(w.samples == w2.samples); // bit-identical per seed

    // noise sigma is ~1.7e-4; the exponential identity holds to that scale
    CHECK(w.samples.at(1) == doctest::Approx(0.5).epsilon(2e-2));
    CHECK(std::abs(w.samples.at(0)) < 2e-3);

    CHECK_THROWS_AS(simulate_transient(tb, p, 1.0, -1.0, 0), OutOfBounds);
    CHECK_THROWS_AS(simulate_transient(tb, p, 0.5, 1.0, 0), OutOfBounds);
}

TEST_CASE("noiseless bench hits the exponential identity exactly") {
    // toy1 has zero transient noise and tau = 1 ps
    TestbenchSpec tb = load_testbench("toy1");
    Assignment p{{"blob.p", 1.0}};
    double tau = 1e-12;
    Waveform w = simulate_transient(tb, p, 10.0 * tau, tau * std::log(2.0), 0);
    CHECK(w.samples.at(0) == 0.0);
    CHECK(w.samples.at(1) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("full-horizon labels follow the settling criterion") {
    TestbenchSpec tb = load_testbench("sar6");
    Assignment p = space_midpoint(tb);
    Assignment specs = evaluate_system(tb, p);
    double tau_ps = (1000.0 / specs.at("f_s_max") -
                     6.0 * (25.0 / std::sqrt(16.5 * 1.025) + 8.0 / 4.25)) /
                    (0.693 * 7.0);
    double tau = tau_ps * 1e-12;
    CHECK(label_waveform(tb, p, 10.0 * tau));            // e^-10 < 2^-7
    CHECK_FALSE(label_waveform(tb, p, tau));             // e^-1 >= 2^-7
    CHECK_FALSE(label_waveform(tb, p, tau * 7.0 * std::log(2.0))); // boundary: fail
}
