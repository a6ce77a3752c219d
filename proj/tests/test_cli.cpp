#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ampse/config.hpp"
#include "ampse/package.hpp"
#include "ampse/pipeline.hpp"
#include "ampse/textio.hpp"
#include "ampse/transfer.hpp"

#include <filesystem>
#include <sstream>

using namespace ampse;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config(const std::string& out_dir) {
    PipelineConfig cfg;
    cfg.testbench = "sar6";
    cfg.out_dir = out_dir;
    cfg.samples_per_module = 60;
    cfg.hidden = {8, 8};
    cfg.epochs = 120;
    cfg.patience = 120;
    cfg.n_starts = 4;
    cfg.max_iters = 40;
    cfg.keep_top_k = 3;
    cfg.oracle_budget = 40;
    cfg.seed = 7;
    return cfg;
}

PipelineSteps refine_steps() {
    PipelineSteps s;
    s.gen_data = s.train = s.search = s.refine = true;
    return s;
}

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("ampse_cli_" + name);
    fs::remove_all(p);
    return p;
}

SurrogateModel tiny_model(std::uint64_t seed) {
    TestbenchSpec tb = load_testbench("sar6");
    Dataset ds = sample_module_dataset(tb, "driver", Sampler::LatinHypercube, 60, seed);
    TrainHyper hy;
    hy.lr = 3e-3;
    hy.epochs = 100;
    hy.patience = 100;
    hy.seed = seed;
    return train(ds, {8}, hy);
}

} // namespace

TEST_CASE("config: minimal text applies all defaults") {
    PipelineConfig cfg = parse_config_text("testbench = sar6\n");
    PipelineConfig def;
    CHECK(cfg.testbench == "sar6");
    CHECK(cfg.samples_per_module == def.samples_per_module);
    CHECK(cfg.hidden == def.hidden);
    CHECK(cfg.lr == def.lr);
    CHECK(cfg.stage == Stage::Schematic);
    CHECK(cfg.sweep_bits == def.sweep_bits);
    CHECK_FALSE(cfg.cepa_enabled);
    // comments and blank lines are ignored
    PipelineConfig cfg2 = parse_config_text("# header\n\n  testbench = sar6  # tail\n");
    CHECK(cfg2.testbench == "sar6");
}

TEST_CASE("config: strict parsing rejects unknown and malformed keys") {
    CHECK_THROWS_AS(parse_config_text("n_startz = 20\n"), UnknownKey);
    CHECK_THROWS_AS(parse_config_text("just a line\n"), ParseError);
    CHECK_THROWS_AS(parse_config_text("epochs = soon\n"), ParseError);
    CHECK_THROWS_AS(parse_config_text("stage = fabbed\n"), ParseError);
    CHECK_THROWS_AS(parse_config_text("sweep_bits = \n"), ParseError);
    // line numbers surface in the message
    try {
        parse_config_text("testbench = sar6\nbogus_key = 1\n");
        FAIL("expected UnknownKey");
    } catch (const UnknownKey& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("config: parse -> serialize -> parse is a fixpoint") {
    PipelineConfig cfg = tiny_config("somewhere");
    cfg.stage = Stage::Layout;
    cfg.cepa_enabled = true;
    cfg.sweep_rates = {0.25, 1.5};
    std::string text = serialize_config(cfg);
    PipelineConfig back = parse_config_text(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.stage == Stage::Layout);
    CHECK(back.sweep_rates == cfg.sweep_rates);
    CHECK(back.keep_top_k == 3);
}

TEST_CASE("package: export -> import predict parity on 100 probes") {
    TestbenchSpec tb = load_testbench("sar6");
    ModelPackage pkg;
    pkg.testbench_id = tb.id;
    pkg.testbench_hash = tb.content_hash();
    pkg.seed = 11;
    pkg.models.emplace("driver", tiny_model(11));

    std::string text = serialize_package(pkg);
    ModelPackage back = parse_package(text);
    CHECK(back.testbench_id == "sar6");
    CHECK(back.testbench_hash == tb.content_hash());
    CHECK(back.seed == 11);
    const SurrogateModel& a = pkg.models.at("driver");
    const SurrogateModel& b = back.models.at("driver");
    CHECK(a.weights_hash() == b.weights_hash());

    Dataset probes =
        sample_module_dataset(tb, "driver", Sampler::LatinHypercube, 100, 99);
    for (Eigen::Index i = 0; i < probes.size(); ++i) {
        Eigen::VectorXd x = probes.inputs.row(i);
        Eigen::VectorXd ya = a.predict_vec(x), yb = b.predict_vec(x);
        for (Eigen::Index j = 0; j < ya.size(); ++j)
            CHECK(std::abs(ya(j) - yb(j)) <= 1e-12 * std::max(1.0, std::abs(ya(j))));
    }
    // serialization itself is stable
    CHECK(serialize_package(back) == text);
}

TEST_CASE("package: TL section round-trips and keeps the base frozen") {
    TestbenchSpec tb = load_testbench("sar6");
    TlModel tl = attach_adapters(tiny_model(13), Stage::Layout);
    tl.b_in.setConstant(0.01); // make the adapters visibly non-identity
    tl.A_out(0, 0) = 1.25;
    ModelPackage pkg;
    pkg.testbench_id = tb.id;
    pkg.testbench_hash = tb.content_hash();
    pkg.stage = Stage::Layout;
    pkg.tl_models.emplace("driver", tl);

    ModelPackage back = parse_package(serialize_package(pkg));
    REQUIRE(back.tl_models.count("driver") == 1);
    const TlModel& bt = back.tl_models.at("driver");
    CHECK(bt.stage == Stage::Layout);
    CHECK(bt.base.weights_hash() == tl.base.weights_hash());
    CHECK(bt.A_out(0, 0) == 1.25);
    // model_for prefers the TL variant
    CHECK(&back.model_for("driver") == &bt);
    CHECK_THROWS_AS(back.model_for("comparator"), MissingEvaluator);

    Dataset probes =
        sample_module_dataset(tb, "driver", Sampler::LatinHypercube, 100, 98);
    for (Eigen::Index i = 0; i < probes.size(); ++i) {
        Eigen::VectorXd x = probes.inputs.row(i);
        Eigen::VectorXd ya = tl.predict_vec(x), yb = bt.predict_vec(x);
        for (Eigen::Index j = 0; j < ya.size(); ++j)
            CHECK(std::abs(ya(j) - yb(j)) <= 1e-12 * std::max(1.0, std::abs(ya(j))));
    }
}

TEST_CASE("package: tampering, truncation and future versions are rejected") {
    ModelPackage pkg;
    pkg.testbench_id = "sar6";
    pkg.models.emplace("driver", tiny_model(17));
    std::string text = serialize_package(pkg);

    // flip one byte inside the weights blob
    std::string tampered = text;
    auto pos = tampered.find("W 0 0 ");
    REQUIRE(pos != std::string::npos);
    tampered[pos + 6] = tampered[pos + 6] == '5' ? '6' : '5';
    CHECK_THROWS_AS(parse_package(tampered), HashMismatch);

    std::string v2 = text;
    v2.replace(v2.find("ampse-model/1"), 13, "ampse-model/2");
    CHECK_THROWS_AS(parse_package(v2), VersionUnsupported);

    CHECK_THROWS_AS(parse_package("ampse-model/1"), ParseError);
    CHECK_THROWS_AS(parse_package("not a package\nat all\n"), ParseError);
}

TEST_CASE("package: import flags TL when the local testbench hash differs") {
    TestbenchSpec schematic = load_testbench("sar6");
    TestbenchSpec layout = apply_stage(schematic, Stage::Layout, 1);
    ModelPackage pkg;
    pkg.testbench_id = schematic.id;
    pkg.testbench_hash = schematic.content_hash();
    pkg.models.emplace("driver", tiny_model(19));

    fs::path dir = temp_dir("import");
    fs::create_directories(dir);
    fs::path file = dir / "models.ampse";
    export_package(pkg, file.string());

    ModelPackage same = import_package(file.string(), &schematic);
    CHECK_FALSE(same.tl_required);
    ModelPackage shifted = import_package(file.string(), &layout);
    CHECK(shifted.tl_required);
    ModelPackage blind = import_package(file.string());
    CHECK_FALSE(blind.tl_required);
}

TEST_CASE("pipeline: reruns are byte-identical and artifacts are complete") {
    fs::path d1 = temp_dir("run1"), d2 = temp_dir("run2");
    std::ostringstream log1, log2;
    CHECK(run_pipeline(tiny_config(d1.string()), refine_steps(), log1) == 0);
    CHECK(run_pipeline(tiny_config(d2.string()), refine_steps(), log2) == 0);
    // config.resolved is excluded: it embeds the (different) output directory
    for (std::string f : {"candidates.tsv", "candidates_pred.tsv", "models.ampse",
                          "summary.json", "mlg.edges"}) {
        INFO("artifact " << f);
        REQUIRE(fs::exists(d1 / f));
        CHECK(read_file(d1 / f) == read_file(d2 / f));
    }
    CHECK(fs::exists(d1 / "data" / "comparator.tsv"));

    // the resolved-config echo reparses to the same run configuration
    PipelineConfig echo = parse_config(( d1 / "config.resolved").string());
    CHECK(serialize_config(echo) == serialize_config(tiny_config(d1.string())));

    // candidate table round-trips through the parser
    TestbenchSpec tb = load_testbench("sar6");
    auto cands = parse_candidates(read_file(d1 / "candidates.tsv"), tb);
    REQUIRE(cands.size() == 3);
    CHECK(cands.front().oracle_specs.has_value());
    CHECK(serialize_candidates(cands, tb) == read_file(d1 / "candidates.tsv"));

    // verify step consumes the table and agrees with the stored verdicts
    PipelineSteps v;
    v.verify = true;
    std::ostringstream vlog;
    CHECK(run_pipeline(tiny_config(d1.string()), v, vlog) == 0);
    std::string verify = read_file(d1 / "verify.tsv");
    for (std::size_t i = 0; i < cands.size(); ++i) {
        std::string row = std::to_string(i + 1) + "\t" +
                          (*cands[i].feasible_oracle ? "1" : "0");
        CHECK(verify.find(row) != std::string::npos);
    }
}

TEST_CASE("pipeline: zero oracle budget completes in evaluate-only mode") {
    fs::path dir = temp_dir("budget0");
    PipelineConfig cfg = tiny_config(dir.string());
    cfg.oracle_budget = 0;
    std::ostringstream log;
    CHECK(run_pipeline(cfg, refine_steps(), log) == 0);
    CHECK(log.str().find("evaluate-only") != std::string::npos);
    TestbenchSpec tb = load_testbench("sar6");
    auto cands = parse_candidates(read_file(dir / "candidates.tsv"), tb);
    REQUIRE_FALSE(cands.empty());
    for (const auto& c : cands) CHECK(c.oracle_specs.has_value());
}

TEST_CASE("pipeline: stage failures return 3 with a stage-tagged diagnostic") {
    fs::path dir = temp_dir("fail");
    PipelineConfig cfg = tiny_config(dir.string());
    cfg.testbench = "no_such_bench";
    std::ostringstream log;
    CHECK(run_pipeline(cfg, refine_steps(), log) == 3);
    CHECK(log.str().find("[load]") != std::string::npos);

    // verify without a candidate table is a stage failure, not a crash
    PipelineConfig cfg2 = tiny_config(temp_dir("fail2").string());
    PipelineSteps v;
    v.verify = true;
    std::ostringstream log2;
    CHECK(run_pipeline(cfg2, v, log2) == 3);
    CHECK(log2.str().find("[verify]") != std::string::npos);
}

TEST_CASE("pipeline: transfer path trains adapters on the staged bench") {
    fs::path dir = temp_dir("tl");
    PipelineConfig cfg = tiny_config(dir.string());
    cfg.stage = Stage::Layout;
    cfg.tl_enabled = true;
    cfg.tl_samples = 40;
    cfg.tl_epochs = 120;
    PipelineSteps s;
    s.gen_data = s.train = true;
    std::ostringstream log;
    REQUIRE(run_pipeline(cfg, s, log) == 0);

    ModelPackage pkg = import_package((dir / "models.ampse").string());
    CHECK(pkg.stage == Stage::Layout);
    CHECK(pkg.models.empty());
    CHECK(pkg.tl_models.size() == 4);
    // a schematic-stage local bench flags the package as needing transfer
    TestbenchSpec schematic = load_testbench("sar6");
    CHECK(import_package((dir / "models.ampse").string(), &schematic).tl_required);
}
