#include "ampse/config.hpp"

#include "ampse/textio.hpp"

#include <functional>
#include <map>
#include <sstream>

namespace ampse {

TrainHyper PipelineConfig::train_hyper() const {
    TrainHyper h;
    h.lr = lr;
    h.lr_decay = lr_decay;
    h.epochs = epochs;
    h.batch = batch;
    h.patience = patience;
    h.weight_decay = weight_decay;
    h.seed = seed;
    return h;
}

SearchConfig PipelineConfig::search_config() const {
    SearchConfig c;
    c.n_starts = n_starts;
    c.max_iters = max_iters;
    c.step = step;
    c.lambda = lambda;
    c.keep_top_k = keep_top_k;
    c.oracle_budget = oracle_budget;
    c.prune_keep_m = prune_keep_m;
    c.seed = seed;
    return c;
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    for (const auto& tok : split_char(v, ','))
        out.push_back(static_cast<int>(parse_int(tok, "key '" + key + "'")));
    if (out.empty()) throw ParseError("key '" + key + "': empty list");
    return out;
}

std::vector<double> parse_real_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    for (const auto& tok : split_char(v, ','))
        out.push_back(parse_real(tok, "key '" + key + "'"));
    if (out.empty()) throw ParseError("key '" + key + "': empty list");
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string join_reals(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
    return s;
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    auto u64 = [](std::uint64_t PipelineConfig::* f) {
        return [f](PipelineConfig& c, const std::string& v, const std::string& k) {
            c.*f = parse_u64(v, "key '" + k + "'");
        };
    };
    auto integer = [](int PipelineConfig::* f) {
        return [f](PipelineConfig& c, const std::string& v, const std::string& k) {
            c.*f = static_cast<int>(parse_int(v, "key '" + k + "'"));
        };
    };
    auto real = [](double PipelineConfig::* f) {
        return [f](PipelineConfig& c, const std::string& v, const std::string& k) {
            c.*f = parse_real(v, "key '" + k + "'");
        };
    };
    auto boolean = [](bool PipelineConfig::* f) {
        return [f](PipelineConfig& c, const std::string& v, const std::string& k) {
            c.*f = parse_bool(v, k);
        };
    };
    static const std::map<std::string, Setter> m = {
        {"testbench", [](PipelineConfig& c, const std::string& v,
                         const std::string&) { c.testbench = v; }},
        {"stage", [](PipelineConfig& c, const std::string& v,
                     const std::string&) { c.stage = parse_stage(v); }},
        {"stage_seed", u64(&PipelineConfig::stage_seed)},
        {"seed", u64(&PipelineConfig::seed)},
        {"out", [](PipelineConfig& c, const std::string& v,
                   const std::string&) { c.out_dir = v; }},
        {"sampler", [](PipelineConfig& c, const std::string& v,
                       const std::string&) { c.sampler = parse_sampler(v); }},
        {"samples_per_module", integer(&PipelineConfig::samples_per_module)},
        {"hidden", [](PipelineConfig& c, const std::string& v,
                      const std::string& k) { c.hidden = parse_int_list(v, k); }},
        {"lr", real(&PipelineConfig::lr)},
        {"lr_decay", real(&PipelineConfig::lr_decay)},
        {"epochs", integer(&PipelineConfig::epochs)},
        {"batch", integer(&PipelineConfig::batch)},
        {"patience", integer(&PipelineConfig::patience)},
        {"weight_decay", real(&PipelineConfig::weight_decay)},
        {"system_cci", boolean(&PipelineConfig::system_cci)},
        {"system_samples", integer(&PipelineConfig::system_samples)},
        {"cepa_enabled", boolean(&PipelineConfig::cepa_enabled)},
        {"cepa_window_fraction", real(&PipelineConfig::cepa_window_fraction)},
        {"cepa_pass_above", real(&PipelineConfig::cepa_pass_above)},
        {"cepa_fail_below", real(&PipelineConfig::cepa_fail_below)},
        {"cepa_samples", integer(&PipelineConfig::cepa_samples)},
        {"cepa_horizon_ps", real(&PipelineConfig::cepa_horizon_ps)},
        {"cepa_full_samples", integer(&PipelineConfig::cepa_full_samples)},
        {"tl_enabled", boolean(&PipelineConfig::tl_enabled)},
        {"tl_samples", integer(&PipelineConfig::tl_samples)},
        {"tl_lr", real(&PipelineConfig::tl_lr)},
        {"tl_epochs", integer(&PipelineConfig::tl_epochs)},
        {"n_starts", integer(&PipelineConfig::n_starts)},
        {"max_iters", integer(&PipelineConfig::max_iters)},
        {"step", real(&PipelineConfig::step)},
        {"lambda", real(&PipelineConfig::lambda)},
        {"keep_top_k", integer(&PipelineConfig::keep_top_k)},
        {"oracle_budget", integer(&PipelineConfig::oracle_budget)},
        {"prune_keep_m", integer(&PipelineConfig::prune_keep_m)},
        {"sweep_enabled", boolean(&PipelineConfig::sweep_enabled)},
        {"sweep_bits", [](PipelineConfig& c, const std::string& v,
                          const std::string& k) { c.sweep_bits = parse_int_list(v, k); }},
        {"sweep_rates",
         [](PipelineConfig& c, const std::string& v, const std::string& k) {
             c.sweep_rates = parse_real_list(v, k);
         }},
        {"sweep_samples", integer(&PipelineConfig::sweep_samples)},
    };
    return m;
}

} // namespace

PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string_view sv(line);
        auto hash = sv.find('#');
        if (hash != std::string_view::npos) sv = sv.substr(0, hash);
        while (!sv.empty() && (sv.front() == ' ' || sv.front() == '\t')) sv.remove_prefix(1);
        while (!sv.empty() && (sv.back() == ' ' || sv.back() == '\t' || sv.back() == '\r'))
            sv.remove_suffix(1);
        if (sv.empty()) continue;
        auto eq = sv.find('=');
        if (eq == std::string_view::npos)
            throw ParseError("line " + std::to_string(lineno) + ": expected 'key = value'");
        auto trim = [](std::string_view s) {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
            while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
            return std::string(s);
        };
        std::string key = trim(sv.substr(0, eq));
        std::string value = trim(sv.substr(eq + 1));
        auto it = setters().find(key);
        if (it == setters().end())
            throw UnknownKey("line " + std::to_string(lineno) + ": unknown key '" + key +
                             "'");
        try {
            it->second(cfg, value, key);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

PipelineConfig parse_config(const std::string& path) {
    return parse_config_text(read_file(path));
}

std::string serialize_config(const PipelineConfig& c) {
    std::ostringstream os;
    os << "testbench = " << c.testbench << '\n'
       << "stage = " << stage_name(c.stage) << '\n'
       << "stage_seed = " << c.stage_seed << '\n'
       << "seed = " << c.seed << '\n'
       << "out = " << c.out_dir << '\n'
       << "sampler = " << sampler_name(c.sampler) << '\n'
       << "samples_per_module = " << c.samples_per_module << '\n'
       << "hidden = " << join_ints(c.hidden) << '\n'
       << "lr = " << format_real(c.lr) << '\n'
       << "lr_decay = " << format_real(c.lr_decay) << '\n'
       << "epochs = " << c.epochs << '\n'
       << "batch = " << c.batch << '\n'
       << "patience = " << c.patience << '\n'
       << "weight_decay = " << format_real(c.weight_decay) << '\n'
       << "system_cci = " << (c.system_cci ? "true" : "false") << '\n'
       << "system_samples = " << c.system_samples << '\n'
       << "cepa_enabled = " << (c.cepa_enabled ? "true" : "false") << '\n'
       << "cepa_window_fraction = " << format_real(c.cepa_window_fraction) << '\n'
       << "cepa_pass_above = " << format_real(c.cepa_pass_above) << '\n'
       << "cepa_fail_below = " << format_real(c.cepa_fail_below) << '\n'
       << "cepa_samples = " << c.cepa_samples << '\n'
       << "cepa_horizon_ps = " << format_real(c.cepa_horizon_ps) << '\n'
       << "cepa_full_samples = " << c.cepa_full_samples << '\n'
       << "tl_enabled = " << (c.tl_enabled ? "true" : "false") << '\n'
       << "tl_samples = " << c.tl_samples << '\n'
       << "tl_lr = " << format_real(c.tl_lr) << '\n'
       << "tl_epochs = " << c.tl_epochs << '\n'
       << "n_starts = " << c.n_starts << '\n'
       << "max_iters = " << c.max_iters << '\n'
       << "step = " << format_real(c.step) << '\n'
       << "lambda = " << format_real(c.lambda) << '\n'
       << "keep_top_k = " << c.keep_top_k << '\n'
       << "oracle_budget = " << c.oracle_budget << '\n'
       << "prune_keep_m = " << c.prune_keep_m << '\n'
       << "sweep_enabled = " << (c.sweep_enabled ? "true" : "false") << '\n'
       << "sweep_bits = " << join_ints(c.sweep_bits) << '\n'
       << "sweep_rates = " << join_reals(c.sweep_rates) << '\n'
       << "sweep_samples = " << c.sweep_samples << '\n';
    return os.str();
}

} // namespace ampse
