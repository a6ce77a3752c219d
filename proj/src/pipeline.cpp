#include "ampse/pipeline.hpp"

#include "ampse/textio.hpp"
#include "ampse/transfer.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <ostream>
#include <sstream>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace ampse {

namespace {

constexpr std::uint64_t kSampleTag = 0x73616d70; // "samp"
constexpr std::uint64_t kTrainTag = 0x7472616e;  // "tran"
constexpr std::uint64_t kHoldTag = 0x686f6c64;   // "hold"
constexpr std::uint64_t kTlTag = 0x746c5f5f;     // "tl__"
constexpr std::uint64_t kCepaTag = 0x63657061;   // "cepa"
constexpr std::uint64_t kNoiseTag = 0x6e6f6973;  // "nois"
constexpr std::uint64_t kSystemTag = 0x73797374; // "syst"

std::string param_unit(const TestbenchSpec& tb, const std::string& qualified) {
    auto dot = qualified.find('.');
    if (dot == std::string::npos) return "";
    const ModuleSpec& m = tb.module(qualified.substr(0, dot));
    const ParamDecl* d = m.space.find(qualified.substr(dot + 1));
    return d ? d->unit : "";
}

std::string opt_real(const std::optional<Assignment>& specs, const std::string& name) {
    if (!specs) return "-";
    auto it = specs->find(name);
    return it == specs->end() ? "-" : format_real(it->second);
}

} // namespace

int worker_count() {
    const char* env = std::getenv("AMPSE_WORKERS");
    if (!env || !*env) return 1;
    try {
        int n = static_cast<int>(parse_int(env, "AMPSE_WORKERS"));
        return n > 0 ? n : 1;
    } catch (const Error&) {
        return 1;
    }
}

std::string serialize_candidates(const std::vector<Candidate>& cs,
                                 const TestbenchSpec& tb) {
    std::ostringstream os;
    os << "rank\tstart\titerations\tfeasible_pred\tfeasible_oracle";
    for (const auto& e : tb.spec_targets.entries)
        os << "\tpred." << e.name << ':' << e.unit;
    for (const auto& e : tb.spec_targets.entries)
        os << "\toracle." << e.name << ':' << e.unit;
    if (!cs.empty())
        for (const auto& [k, v] : cs.front().params)
            os << "\tparam." << k << ':' << param_unit(tb, k);
    os << '\n';
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const Candidate& c = cs[i];
        os << (i + 1) << '\t' << c.start_index << '\t' << c.iterations << '\t'
           << (c.feasible_pred ? 1 : 0) << '\t';
        if (c.feasible_oracle)
            os << (*c.feasible_oracle ? 1 : 0);
        else
            os << '-';
        for (const auto& e : tb.spec_targets.entries) {
            auto it = c.predicted_specs.find(e.name);
            os << '\t' << (it == c.predicted_specs.end() ? "-" : format_real(it->second));
        }
        for (const auto& e : tb.spec_targets.entries)
            os << '\t' << opt_real(c.oracle_specs, e.name);
        for (const auto& [k, v] : c.params) os << '\t' << format_real(v);
        os << '\n';
    }
    return os.str();
}

std::vector<Candidate> parse_candidates(const std::string& text,
                                        const TestbenchSpec& tb) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw ParseError("empty candidate table");
    auto header = split_char(line, '\t');
    std::vector<Candidate> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split_char(line, '\t');
        if (cells.size() != header.size())
            throw ParseError("candidate row has " + std::to_string(cells.size()) +
                             " cells, header has " + std::to_string(header.size()));
        Candidate c;
        Assignment oracle;
        for (std::size_t i = 0; i < header.size(); ++i) {
            const std::string& h = header[i];
            const std::string& v = cells[i];
            auto name_of = [&h] {
                auto dot = h.find('.');
                auto colon = h.rfind(':');
                return h.substr(dot + 1, colon - dot - 1);
            };
            if (h == "start") c.start_index = static_cast<int>(parse_int(v, h));
            else if (h == "iterations") c.iterations = static_cast<int>(parse_int(v, h));
            else if (h == "feasible_pred") c.feasible_pred = v == "1";
            else if (h == "feasible_oracle" && v != "-") c.feasible_oracle = v == "1";
            else if (h.rfind("param.", 0) == 0) c.params[name_of()] = parse_real(v, h);
            else if (h.rfind("pred.", 0) == 0 && v != "-")
                c.predicted_specs[name_of()] = parse_real(v, h);
            else if (h.rfind("oracle.", 0) == 0 && v != "-")
                oracle[name_of()] = parse_real(v, h);
        }
        if (!oracle.empty()) c.oracle_specs = oracle;
        c.loss = penalty_loss(c.predicted_specs.empty() && c.oracle_specs
                                  ? *c.oracle_specs
                                  : c.predicted_specs,
                              tb.spec_targets, 10.0);
        out.push_back(std::move(c));
    }
    return out;
}

std::string render_feasibility_svg(const FeasibilityMap& fm) {
    const int cell = 72, pad = 64;
    int w = pad + cell * static_cast<int>(fm.bits.size()) + 16;
    int h = pad + cell * static_cast<int>(fm.rates.size()) + 16;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
       << h << "\" font-family=\"monospace\" font-size=\"11\">\n";
    os << "<text x=\"" << pad << "\" y=\"16\">resolution (bits) vs sample rate (GS/s);"
          " shaded = oracle-verified feasible, label = min power (mW)</text>\n";
    for (std::size_t bi = 0; bi < fm.bits.size(); ++bi)
        os << "<text x=\"" << (pad + cell * static_cast<int>(bi) + cell / 2 - 6)
           << "\" y=\"" << (h - 6) << "\">" << fm.bits[bi] << "</text>\n";
    for (std::size_t ri = 0; ri < fm.rates.size(); ++ri)
        os << "<text x=\"4\" y=\""
           << (h - pad - cell * static_cast<int>(ri) - cell / 2 + 4) << "\">"
           << format_real(fm.rates[ri]) << "</text>\n";
    for (const auto& c : fm.cells) {
        std::size_t bi = 0, ri = 0;
        for (std::size_t i = 0; i < fm.bits.size(); ++i)
            if (fm.bits[i] == c.bits) bi = i;
        for (std::size_t i = 0; i < fm.rates.size(); ++i)
            if (fm.rates[i] == c.rate) ri = i;
        int x = pad + cell * static_cast<int>(bi);
        int y = h - pad - cell * static_cast<int>(ri + 1);
        os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell
           << "\" height=\"" << cell << "\" fill=\""
           << (c.feasible ? "#7fc97f" : "#eeeeee") << "\" stroke=\"#444444\"/>\n";
        if (c.feasible && c.min_power) {
            std::ostringstream label;
            label.precision(3);
            label << *c.min_power;
            os << "<text x=\"" << (x + 6) << "\" y=\"" << (y + cell / 2 + 4) << "\">"
               << label.str() << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

namespace {

struct CepaReport {
    int holdout = 0;
    double accuracy = 0.0, false_fail = 0.0, uncertain = 0.0;
};

CepaReport evaluate_classifier(const CepaModel& m,
                               const std::vector<LabeledWaveform>& holdout) {
    CepaReport r;
    r.holdout = static_cast<int>(holdout.size());
    int correct = 0, false_fail = 0, uncertain = 0;
    for (const auto& lw : holdout) {
        EarlyAssertion a = assert_early(m, lw.prefix);
        if (a.decision == Assertion::Uncertain) {
            ++uncertain;
            ++correct; // resolved by full evaluation, never wrong
        } else {
            bool said_pass = a.decision == Assertion::Pass;
            if (said_pass == lw.pass) ++correct;
            if (!said_pass && lw.pass) ++false_fail;
        }
    }
    r.accuracy = static_cast<double>(correct) / r.holdout;
    r.false_fail = static_cast<double>(false_fail) / r.holdout;
    r.uncertain = static_cast<double>(uncertain) / r.holdout;
    return r;
}

} // namespace

int run_pipeline(const PipelineConfig& cfg, const PipelineSteps& steps,
                 std::ostream& log) {
    std::string stage_tag = "init";
    try {
        fs::path out(cfg.out_dir);
        fs::create_directories(out);
        atomic_write(out / "config.resolved", serialize_config(cfg));
        int workers = worker_count();
        log << "[init] workers=" << workers
            << " (execution is sequential; per-point counter-derived seeds make"
               " results worker-count independent)\n";

        stage_tag = "load";
        TestbenchSpec tb0 = load_testbench(cfg.testbench);
        TestbenchSpec tb = cfg.stage == Stage::Schematic
                               ? tb0
                               : apply_stage(tb0, cfg.stage, cfg.stage_seed);
        log << "[load] testbench " << tb.id << " stage " << stage_name(cfg.stage)
            << " hash " << hex64(tb.content_hash()) << '\n';

        stage_tag = "mlg";
        Mlg g = build_graph(tb);
        auto diags = validate(g, tb);
        if (!diags.empty()) {
            for (const auto& d : diags)
                log << "[mlg] " << d.code << ": " << d.message << '\n';
            return 3;
        }
        atomic_write(out / "mlg.edges", export_edge_list(g));

        ordered_json summary;
        summary["testbench"] = tb.id;
        summary["testbench_hash"] = hex64(tb.content_hash());
        summary["stage"] = stage_name(cfg.stage);
        summary["seed"] = cfg.seed;
        summary["workers"] = workers;

        // --- early performance assertion -------------------------------
        std::optional<CepaModel> classifier;
        double horizon = cfg.cepa_horizon_ps * 1e-12;
        if (steps.cepa) {
            stage_tag = "cepa";
            auto corpus = build_cepa_corpus(tb, cfg.cepa_samples, horizon,
                                            cfg.cepa_full_samples,
                                            cfg.cepa_window_fraction,
                                            derive_seed(cfg.seed, kCepaTag, 1));
            atomic_write(out / "cepa.corpus", serialize_corpus(corpus));
            TrainHyper ch;
            ch.lr = 1e-3;
            ch.epochs = 200;
            ch.batch = 32;
            ch.patience = 100;
            ch.seed = derive_seed(cfg.seed, kCepaTag, 2);
            classifier = train_classifier(corpus, ch, cfg.cepa_window_fraction,
                                          cfg.cepa_pass_above, cfg.cepa_fail_below);
            auto holdout = build_cepa_corpus(
                tb, std::max(100, cfg.cepa_samples / 2), horizon,
                cfg.cepa_full_samples, cfg.cepa_window_fraction,
                derive_seed(cfg.seed, kCepaTag, 3));
            CepaReport rep = evaluate_classifier(*classifier, holdout);
            std::ostringstream cr;
            cr << "holdout " << rep.holdout << '\n'
               << "accuracy " << format_real(rep.accuracy) << '\n'
               << "false_fail " << format_real(rep.false_fail) << '\n'
               << "uncertain " << format_real(rep.uncertain) << '\n';
            atomic_write(out / "cepa_report.txt", cr.str());
            summary["cepa"] = {{"holdout", rep.holdout},
                               {"accuracy", rep.accuracy},
                               {"false_fail", rep.false_fail},
                               {"uncertain", rep.uncertain}};
            log << "[cepa] accuracy " << rep.accuracy << " false_fail "
                << rep.false_fail << " uncertain " << rep.uncertain << '\n';
        }

        // --- sampling + training ---------------------------------------
        bool tl_path = cfg.tl_enabled && cfg.stage != Stage::Schematic;
        const TestbenchSpec& tb_base = tl_path ? tb0 : tb;
        std::map<std::string, Dataset> module_ds;
        if (steps.gen_data || steps.train) {
            stage_tag = "gen-data";
            fs::create_directories(out / "data");
            for (const auto& m : tb.modules) {
                Dataset ds = sample_module_dataset(
                    tb_base, m.id, cfg.sampler, cfg.samples_per_module,
                    derive_seed(cfg.seed, kSampleTag, fnv1a(m.id)));
                atomic_write(out / "data" / (m.id + ".tsv"), serialize_dataset(ds));
                module_ds.emplace(m.id, std::move(ds));
            }
            log << "[gen-data] " << tb.modules.size() << " module datasets, "
                << cfg.samples_per_module << " samples each\n";
        }

        ModelPackage pkg;
        if (steps.train) {
            stage_tag = "train";
            pkg.testbench_id = tb.id;
            pkg.testbench_hash = tb.content_hash();
            pkg.stage = cfg.stage;
            pkg.seed = cfg.seed;
            ordered_json mods;
            for (const auto& m : tb.modules) {
                TrainHyper hy = cfg.train_hyper();
                hy.seed = derive_seed(cfg.seed, kTrainTag, fnv1a(m.id));
                SurrogateModel base = train(module_ds.at(m.id), cfg.hidden, hy);
                const RegressionModel* effective = nullptr;
                if (tl_path) {
                    Dataset small = sample_module_dataset(
                        tb, m.id, cfg.sampler, cfg.tl_samples,
                        derive_seed(cfg.seed, kTlTag, fnv1a(m.id)));
                    TlModel adapted = attach_adapters(base, cfg.stage);
                    TrainHyper th = cfg.train_hyper();
                    th.lr = cfg.tl_lr;
                    th.epochs = cfg.tl_epochs;
                    th.patience = cfg.tl_epochs;
                    th.seed = derive_seed(cfg.seed, kTlTag, fnv1a(m.id), 1);
                    adapted = train_adapters(adapted, small, th);
                    auto [it, ok] = pkg.tl_models.emplace(m.id, std::move(adapted));
                    effective = &it->second;
                } else {
                    auto [it, ok] = pkg.models.emplace(m.id, std::move(base));
                    effective = &it->second;
                }
                Dataset hold = sample_module_dataset(
                    tb, m.id, cfg.sampler, 100,
                    derive_seed(cfg.seed, kHoldTag, fnv1a(m.id)));
                double nrmse = evaluate_model(*effective, hold).at("aggregate");
                mods[m.id] = {{"samples", cfg.samples_per_module},
                              {"holdout_nrmse", nrmse},
                              {"transfer_adapted", tl_path}};
                log << "[train] " << m.id << " holdout NRMSE " << nrmse << '\n';
            }
            if (cfg.system_cci) {
                PointFilter filter;
                if (classifier)
                    filter = filter_space(*classifier, tb, horizon,
                                          cfg.cepa_full_samples,
                                          derive_seed(cfg.seed, kNoiseTag));
                Dataset sys = sample_system_dataset(
                    tb, cfg.sampler, cfg.system_samples,
                    derive_seed(cfg.seed, kSampleTag, kSystemTag), filter);
                atomic_write(out / "data" / "system.tsv", serialize_dataset(sys));
                ConnectivityMask mask = connectivity_mask(
                    g, tb, cfg.hidden, default_group_sizes(tb, cfg.hidden.front()));
                TrainHyper hy = cfg.train_hyper();
                hy.seed = derive_seed(cfg.seed, kTrainTag, kSystemTag);
                SurrogateModel sys_model = train(sys, cfg.hidden, hy, mask);
                Dataset hold = sample_system_dataset(
                    tb, cfg.sampler, 100, derive_seed(cfg.seed, kHoldTag, kSystemTag));
                double nrmse = evaluate_model(sys_model, hold).at("aggregate");
                mods["system"] = {{"samples", cfg.system_samples},
                                  {"holdout_nrmse", nrmse},
                                  {"model_kind", sys_model.model_kind}};
                log << "[train] system (cci) holdout NRMSE " << nrmse << '\n';
                pkg.models.emplace("system", std::move(sys_model));
            }
            summary["modules"] = mods;
            export_package(pkg, (out / "models.ampse").string());
            log << "[train] package written to " << (out / "models.ampse").string()
                << '\n';
        }

        // --- search + refinement ---------------------------------------
        if (steps.search) {
            stage_tag = "search";
            std::vector<std::unique_ptr<ModelEvaluator>> owned;
            EvaluatorMap emap;
            for (const auto& m : tb.modules) {
                owned.push_back(std::make_unique<ModelEvaluator>(
                    pkg.model_for(m.id), formula_set(m.formula_id).reads()));
                emap[m.id] = owned.back().get();
            }
            SearchConfig scfg = cfg.search_config();
            auto cands = global_search(g, tb, emap, tb.spec_targets, scfg);
            atomic_write(out / "candidates_pred.tsv",
                         serialize_candidates(cands, tb));
            log << "[search] " << cands.size() << " candidates kept\n";

            if (steps.refine) {
                stage_tag = "refine";
                if (scfg.oracle_budget == 0)
                    log << "[refine] oracle_budget=0: evaluate-only, no"
                           " coordinate descent\n";
                std::vector<Candidate> refined;
                for (const auto& c : cands)
                    refined.push_back(local_refine(c, tb, g, emap,
                                                   tb.spec_targets, scfg));
                refined = rank_candidates(std::move(refined), tb.spec_targets);
                atomic_write(out / "candidates.tsv",
                             serialize_candidates(refined, tb));
                int feasible = 0;
                for (const auto& c : refined)
                    if (c.feasible_oracle && *c.feasible_oracle) ++feasible;
                ordered_json sj;
                sj["candidates"] = refined.size();
                sj["oracle_feasible"] = feasible;
                sj["evaluate_only"] = scfg.oracle_budget == 0;
                if (!refined.empty()) {
                    const Candidate& best = refined.front();
                    ordered_json bj;
                    bj["feasible_oracle"] =
                        best.feasible_oracle && *best.feasible_oracle;
                    const std::string& obj = tb.spec_targets.objective().name;
                    if (best.oracle_specs && best.oracle_specs->count(obj))
                        bj["objective"] = best.oracle_specs->at(obj);
                    ordered_json pj;
                    for (const auto& [k, v] : best.params) pj[k] = v;
                    bj["params"] = pj;
                    if (best.oracle_specs) {
                        ordered_json oj;
                        for (const auto& [k, v] : *best.oracle_specs) oj[k] = v;
                        bj["oracle_specs"] = oj;
                    }
                    sj["best"] = bj;
                }
                summary["search"] = sj;
                log << "[refine] " << feasible << '/' << refined.size()
                    << " oracle-feasible after refinement\n";
            }
        }

        // --- standalone verification ------------------------------------
        if (steps.verify) {
            stage_tag = "verify";
            fs::path table = out / "candidates.tsv";
            if (!fs::exists(table)) table = out / "candidates_pred.tsv";
            if (!fs::exists(table))
                throw IoError("verify: no candidate table under " + cfg.out_dir);
            auto cands = parse_candidates(read_file(table), tb);
            std::ostringstream vs;
            vs << "rank\tfeasible_oracle";
            for (const auto& e : tb.spec_targets.entries)
                vs << "\toracle." << e.name << ':' << e.unit;
            vs << '\n';
            int feasible = 0;
            for (std::size_t i = 0; i < cands.size(); ++i) {
                Assignment specs = evaluate_system(tb, cands[i].params);
                bool ok = all_constraints_met(specs, tb.spec_targets);
                feasible += ok ? 1 : 0;
                vs << (i + 1) << '\t' << (ok ? 1 : 0);
                for (const auto& e : tb.spec_targets.entries)
                    vs << '\t' << format_real(specs.at(e.name));
                vs << '\n';
            }
            atomic_write(out / "verify.tsv", vs.str());
            summary["verify"] = {{"candidates", cands.size()},
                                 {"oracle_feasible", feasible}};
            log << "[verify] " << feasible << '/' << cands.size()
                << " oracle-feasible\n";
        }

        // --- bits-versus-rate sweep --------------------------------------
        if (steps.sweep) {
            stage_tag = "sweep";
            FeasibilityMap fm = feasibility_sweep(
                tb, cfg.sweep_bits, cfg.sweep_rates, cfg.search_config(),
                cfg.train_hyper(), cfg.sweep_samples);
            atomic_write(out / "feasibility.tsv", serialize_feasibility(fm));
            atomic_write(out / "feasibility.svg", render_feasibility_svg(fm));
            int feasible = 0;
            for (const auto& c : fm.cells) feasible += c.feasible ? 1 : 0;
            summary["sweep"] = {{"cells", fm.cells.size()},
                                {"feasible_cells", feasible}};
            log << "[sweep] " << feasible << '/' << fm.cells.size()
                << " cells feasible\n";
        }

        atomic_write(out / "summary.json", summary.dump(2) + "\n");
        return 0;
    } catch (const Error& e) {
        log << '[' << stage_tag << "] " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        log << '[' << stage_tag << "] error: " << e.what() << '\n';
        return 3;
    }
}

} // namespace ampse
