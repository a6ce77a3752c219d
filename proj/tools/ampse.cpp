// Command-line front-end for the parameter-search pipeline.
//
// Exit codes: 0 success, 2 configuration error (bad flags, unparsable or
// invalid config file), 3 stage failure (a pipeline stage aborted; completed
// artifacts are preserved).

#include "ampse/pipeline.hpp"
#include "ampse/textio.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string stage;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "Pipeline configuration file");
    cmd->add_option("--seed", f.seed, "Override the global seed");
    cmd->add_option("--out", f.out_dir, "Override the output directory");
    cmd->add_option("--stage", f.stage, "Override the perturbation stage")
        ->check(CLI::IsMember({"schematic", "layout", "silicon"}));
}

// Returns the resolved config, or exits with code 2 on any config problem.
ampse::PipelineConfig resolve_config(const CommonFlags& f) {
    ampse::PipelineConfig cfg;
    if (!f.config_path.empty()) cfg = ampse::parse_config(f.config_path);
    if (f.seed) cfg.seed = *f.seed;
    if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
    if (!f.stage.empty()) cfg.stage = ampse::parse_stage(f.stage);
    return cfg;
}

int run_steps(const CommonFlags& f, ampse::PipelineSteps steps,
              bool cepa_if_enabled, bool sweep_if_enabled) {
    ampse::PipelineConfig cfg;
    try {
        cfg = resolve_config(f);
    } catch (const ampse::Error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }
    if (cepa_if_enabled && cfg.cepa_enabled) steps.cepa = true;
    if (sweep_if_enabled && cfg.sweep_enabled) steps.sweep = true;
    return ampse::run_pipeline(cfg, steps, std::cerr);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Surrogate-based analog parameter search pipeline"};
    app.require_subcommand(1);

    struct Sub {
        CLI::App* cmd;
        CommonFlags flags;
        ampse::PipelineSteps steps;
    };
    std::vector<std::unique_ptr<Sub>> subs;
    auto add = [&](const char* name, const char* desc, ampse::PipelineSteps s) {
        auto sub = std::make_unique<Sub>();
        sub->cmd = app.add_subcommand(name, desc);
        sub->steps = s;
        add_common(sub->cmd, sub->flags);
        subs.push_back(std::move(sub));
        return subs.back().get();
    };

    using Steps = ampse::PipelineSteps;
    add("gen-data", "Sample and persist per-module training datasets",
        Steps{.gen_data = true});
    add("train", "Train per-module surrogates and export the model package",
        Steps{.gen_data = true, .train = true});
    add("cepa-train", "Train the early performance assertion classifier",
        Steps{.cepa = true});
    add("search", "Global surrogate-space search (predictions only)",
        Steps{.gen_data = true, .train = true, .search = true});
    add("refine", "Search plus oracle-in-the-loop refinement and ranking",
        Steps{.gen_data = true, .train = true, .search = true, .refine = true});
    add("sweep", "Bits-versus-rate feasibility sweep",
        Steps{.sweep = true});
    add("verify", "Re-verify an existing candidate table against the oracle",
        Steps{.verify = true});
    Sub* exp = add("export", "Train and export a shareable model package",
                   Steps{.gen_data = true, .train = true});
    std::string export_path;
    exp->cmd->add_option("--package", export_path,
                         "Also copy the package to this path");
    Sub* run = add("run", "Full pipeline per the configuration file",
                   Steps{.gen_data = true, .train = true, .search = true,
                         .refine = true});

    CLI::App* imp = app.add_subcommand(
        "import", "Load a model package and report whether transfer is needed");
    CommonFlags imp_flags;
    add_common(imp, imp_flags);
    std::string import_path;
    imp->add_option("--package", import_path, "Package file to import")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (imp->parsed()) {
        ampse::PipelineConfig cfg;
        try {
            cfg = resolve_config(imp_flags);
        } catch (const ampse::Error& e) {
            std::cerr << "config error: " << e.what() << '\n';
            return 2;
        }
        try {
            ampse::TestbenchSpec tb = ampse::load_testbench(cfg.testbench);
            if (cfg.stage != ampse::Stage::Schematic)
                tb = ampse::apply_stage(tb, cfg.stage, cfg.stage_seed);
            ampse::ModelPackage pkg = ampse::import_package(import_path, &tb);
            std::cout << "testbench " << pkg.testbench_id << '\n'
                      << "stage " << ampse::stage_name(pkg.stage) << '\n'
                      << "models " << pkg.models.size() << '\n'
                      << "tl_models " << pkg.tl_models.size() << '\n'
                      << "tl_required " << (pkg.tl_required ? "true" : "false")
                      << '\n';
            return 0;
        } catch (const ampse::Error& e) {
            std::cerr << "[import] " << e.what() << '\n';
            return 3;
        }
    }

    for (const auto& sub : subs) {
        if (!sub->cmd->parsed()) continue;
        bool is_run = sub.get() == run;
        int code = run_steps(sub->flags, sub->steps,
                             /*cepa_if_enabled=*/sub->steps.train,
                             /*sweep_if_enabled=*/is_run);
        if (code == 0 && sub.get() == exp && !export_path.empty()) {
            try {
                ampse::PipelineConfig cfg = resolve_config(sub->flags);
                std::string src = cfg.out_dir + "/models.ampse";
                ampse::atomic_write(export_path, ampse::read_file(src));
            } catch (const ampse::Error& e) {
                std::cerr << "[export] " << e.what() << '\n';
                return 3;
            }
        }
        return code;
    }
    return 2;
}
