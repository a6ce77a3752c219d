#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ampse/mlg.hpp"
#include "ampse/rng.hpp"

#include <algorithm>

using namespace ampse;

namespace {

const char* kTwoCycle = R"(ampse-tb/1
testbench cyc
system sum
module a relay
param a g 1 0 1
in a x 1 0 10
out a y 1
metric a y 1
module b relay
param b g 1 0 1
in b x 1 0 10
out b y 1
metric b y 1
bind a.y -> b.x
bind b.y -> a.x
stage schematic
seed 1
layout 0.15 0.1 2
silicon 0.05 0.01
spec total min 0 1
)";

const char* kEdgeless = R"(ampse-tb/1
testbench pair
system sum
module a toy_bowl
param a p 1 0 8
metric a y 1
module b toy_bowl
param b p 1 0 8
metric b y 1
stage schematic
seed 1
layout 0.15 0.1 2
silicon 0.05 0.01
spec total min 0 1
)";

} // namespace

TEST_CASE("sar6 graph has the reference vertices and edges") {
    TestbenchSpec tb = load_testbench("sar6");
    Mlg g = build_graph(tb);
    REQUIRE(g.vertices.size() == 4);
    REQUIRE(g.edges.size() == 3);
    auto has_edge = [&g](const std::string& fm, const std::string& fp,
                         const std::string& tm, const std::string& tp) {
        return std::any_of(g.edges.begin(), g.edges.end(), [&](const Binding& e) {
            return e.from_module == fm && e.from_port == fp && e.to_module == tm &&
                   e.to_port == tp;
        });
    };
    CHECK(has_edge("driver", "R_drv", "trackhold_dac", "R_drv"));
    CHECK(has_edge("comparator", "C_cmp", "trackhold_dac", "C_cmp"));
    CHECK(has_edge("trackhold_dac", "v_ktc", "comparator", "v_ktc"));

    // dependency order: producers of consumed ports come first
    auto pos = [&g](const std::string& id) {
        return std::find(g.order.begin(), g.order.end(), id) - g.order.begin();
    };
    CHECK(pos("driver") < pos("trackhold_dac"));
    CHECK(pos("comparator") < pos("trackhold_dac"));
}

TEST_CASE("edgeless testbench yields an edgeless graph") {
    TestbenchSpec tb = parse_testbench(kEdgeless);
    Mlg g = build_graph(tb);
    CHECK(g.edges.empty());
    CHECK(g.order.size() == 2);
}

TEST_CASE("a two-cycle of consumed ports is rejected") {
    TestbenchSpec tb = parse_testbench(kTwoCycle);
    CHECK_THROWS_AS(build_graph(tb), CycleError);
}

TEST_CASE("validate reports machine-readable diagnostics") {
    TestbenchSpec tb = load_testbench("sar6");
    Mlg g = build_graph(tb);
    CHECK(validate(g, tb).empty());

    SUBCASE("unit mismatch") {
        TestbenchSpec bad = tb;
        for (auto& m : bad.modules)
            if (m.id == "trackhold_dac")
                for (auto& d : m.interface_in)
                    if (d.name == "R_drv") d.unit = "fF";
        auto diags = validate(g, bad);
        REQUIRE(diags.size() == 1);
        CHECK(diags[0].code == "UnitMismatch");
    }
    SUBCASE("dangling port") {
        Mlg broken = g;
        broken.edges.push_back({"driver", "nope", "trackhold_dac", "R_drv"});
        auto diags = validate(broken, tb);
        bool found = std::any_of(diags.begin(), diags.end(),
                                 [](const Diagnostic& d) { return d.code == "UnknownPort"; });
        CHECK(found);
    }
    SUBCASE("cycle") {
        TestbenchSpec cyc = parse_testbench(kTwoCycle);
        Mlg hand;
        hand.vertices = {"a", "b"};
        hand.edges = cyc.bindings;
        auto diags = validate(hand, cyc);
        bool found = std::any_of(diags.begin(), diags.end(),
                                 [](const Diagnostic& d) { return d.code == "CycleError"; });
        CHECK(found);
    }
}

TEST_CASE("edge list export") {
    Mlg g = build_graph(load_testbench("sar6"));
    std::string text = export_edge_list(g);
    CHECK(text.find("driver.R_drv -> trackhold_dac.R_drv") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("oracle-backed composition equals evaluate_system") {
    TestbenchSpec tb = load_testbench("sar6");
    Mlg g = build_graph(tb);
    OracleEvaluator th(tb, "trackhold_dac"), cmp(tb, "comparator"), lg(tb, "sar_logic"),
        drv(tb, "driver");
    EvaluatorMap evals{{"trackhold_dac", &th}, {"comparator", &cmp},
                       {"sar_logic", &lg},    {"driver", &drv}};
    Rng rng(21);
    for (int i = 0; i < 100; ++i) {
        Assignment p;
        for (const auto& m : tb.modules)
            for (const auto& d : m.space.params)
                p[m.id + "." + d.name] = rng.uniform(d.lower, d.upper);
        Assignment a = compose_evaluate(g, tb, evals, p);
        Assignment b = evaluate_system(tb, p);
        REQUIRE(a == b); // same arithmetic path, bit-exact
    }
}

TEST_CASE("single-vertex composition is the lone evaluator") {
    TestbenchSpec tb = load_testbench("toy1");
    Mlg g = build_graph(tb);
    OracleEvaluator blob(tb, "blob");
    EvaluatorMap evals{{"blob", &blob}};
    Assignment specs = compose_evaluate(g, tb, evals, {{"blob.p", 5.0}});
    CHECK(specs.at("total") == 4.0);
    CHECK_THROWS_AS(compose_evaluate(g, tb, {}, {{"blob.p", 5.0}}), NoModels);
    EvaluatorMap wrong{{"zzz", &blob}};
    CHECK_THROWS_AS(compose_evaluate(g, tb, wrong, {{"blob.p", 5.0}}), MissingEvaluator);
}

TEST_CASE("edgeless two-module graph has block-diagonal masks") {
    TestbenchSpec tb = parse_testbench(kEdgeless);
    Mlg g = build_graph(tb);
    ConnectivityMask cm = connectivity_mask(g, tb, {8, 8}, {{"a", 4}, {"b", 4}});
    REQUIRE(cm.layer_masks.size() == 3);
    // first hidden layer: units of a see only a.p, units of b only b.p
    const auto& m0 = cm.layer_masks[0];
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 2; ++c)
            CHECK(m0(r, c) == ((cm.hidden_groups[0][r] == cm.input_group[c]) ? 1.0 : 0.0));
    const auto& m1 = cm.layer_masks[1];
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            CHECK(m1(r, c) == ((cm.hidden_groups[1][r] == cm.hidden_groups[0][c]) ? 1.0 : 0.0));
    CHECK(cm.density() < 1.0);
}

TEST_CASE("complete connectivity yields all-ones masks") {
    // both modules in each other's upstream closure
    TestbenchSpec tb = parse_testbench(kTwoCycle);
    Mlg g;
    g.vertices = {"a", "b"};
    g.edges = tb.bindings;
    ConnectivityMask cm = connectivity_mask(g, tb, {8}, {{"a", 4}, {"b", 4}});
    for (const auto& m : cm.layer_masks) CHECK(m.minCoeff() == 1.0);
    CHECK(cm.density() == 1.0);
}

TEST_CASE("sar6 CCI mask blinds comparator units to sar_logic parameters") {
    TestbenchSpec tb = load_testbench("sar6");
    Mlg g = build_graph(tb);
    ConnectivityMask cm = connectivity_mask(g, tb, {32, 32},
                                            {{"trackhold_dac", 8}, {"comparator", 8},
                                             {"sar_logic", 8}, {"driver", 8}});
    CHECK(cm.density() < 1.0);
    int cmp_group = -1, logic_group = -1;
    for (std::size_t i = 0; i < cm.group_order.size(); ++i) {
        if (cm.group_order[i] == "comparator") cmp_group = static_cast<int>(i);
        if (cm.group_order[i] == "sar_logic") logic_group = static_cast<int>(i);
    }
    int d_col = -1;
    for (std::size_t c = 0; c < cm.input_names.size(); ++c)
        if (cm.input_names[c] == "sar_logic.d") d_col = static_cast<int>(c);
    REQUIRE(d_col >= 0);
    for (int r = 0; r < 32; ++r)
        if (cm.hidden_groups[0][r] == cmp_group)
            CHECK(cm.layer_masks[0](r, d_col) == 0.0);
    (void)logic_group;
}

TEST_CASE("default group sizes are proportional with a floor of four") {
    TestbenchSpec tb = load_testbench("sar6");
    auto sizes = default_group_sizes(tb, 32);
    int total = 0;
    for (const auto& [id, s] : sizes) {
        CHECK(s >= 4);
        total += s;
    }
    CHECK(total == 32);
    CHECK(sizes.at("trackhold_dac") >= sizes.at("driver"));
    CHECK_THROWS_AS(default_group_sizes(tb, 8), ShapeError);
}

TEST_CASE("mask construction validates shapes") {
    TestbenchSpec tb = load_testbench("sar6");
    Mlg g = build_graph(tb);
    CHECK_THROWS_AS(connectivity_mask(g, tb, {31, 32},
                                      {{"trackhold_dac", 8}, {"comparator", 8},
                                       {"sar_logic", 8}, {"driver", 8}}),
                    ShapeError);
    CHECK_THROWS_AS(connectivity_mask(g, tb, {32}, {{"trackhold_dac", 32}}), ShapeError);
}
