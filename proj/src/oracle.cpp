#include "ampse/oracle.hpp"

#include "ampse/rng.hpp"
#include "ampse/textio.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace ampse {

namespace {

constexpr double kLn2 = 0.693; // settling constant used by the reference formulas
constexpr double kKtc = 4.14e-6; // kT/C noise numerator, V^2 * fF

double get(const Assignment& a, const std::string& key, const std::string& ctx) {
    auto it = a.find(key);
    if (it == a.end()) throw MissingInput("missing '" + key + "' in " + ctx);
    return it->second;
}

} // namespace

// ---------------------------------------------------------------------------
// Basic types

const ParamDecl* ParameterSpace::find(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

void ParameterSpace::validate(const std::string& owner) const {
    std::set<std::string> seen;
    for (const auto& p : params) {
        if (!seen.insert(p.name).second)
            throw ParseError("duplicate parameter '" + p.name + "' in module " + owner);
        if (!(p.lower < p.upper))
            throw ParseError("parameter '" + p.name + "' in " + owner + " needs lower < upper");
        if (p.grid) {
            double step = *p.grid;
            if (!(step > 0.0))
                throw ParseError("grid step of '" + p.name + "' must be positive");
            double k = (p.upper - p.lower) / step;
            if (std::abs(k - std::round(k)) > 1e-9 * std::max(1.0, k))
                throw ParseError("span of '" + p.name + "' is not a multiple of its grid step");
        }
    }
}

const SpecEntry& SpecSet::objective() const {
    for (const auto& e : entries)
        if (e.dir == SpecEntry::Direction::Minimize) return e;
    throw ParseError("spec set has no minimize objective");
}

std::vector<SpecEntry> SpecSet::constraints() const {
    std::vector<SpecEntry> out;
    for (const auto& e : entries)
        if (e.dir != SpecEntry::Direction::Minimize) out.push_back(e);
    return out;
}

void SpecSet::validate() const {
    std::set<std::string> seen;
    int n_min = 0;
    for (const auto& e : entries) {
        if (!seen.insert(e.name).second)
            throw ParseError("duplicate spec entry '" + e.name + "'");
        if (e.dir == SpecEntry::Direction::Minimize) ++n_min;
    }
    if (n_min != 1)
        throw ParseError("spec set must contain exactly one minimize entry, found " +
                         std::to_string(n_min));
}

Stage parse_stage(const std::string& s) {
    if (s == "schematic") return Stage::Schematic;
    if (s == "layout") return Stage::Layout;
    if (s == "silicon") return Stage::Silicon;
    throw ParseError("unknown stage '" + s + "'");
}

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::Schematic: return "schematic";
        case Stage::Layout: return "layout";
        case Stage::Silicon: return "silicon";
    }
    return "?";
}

const ModuleSpec& TestbenchSpec::module(const std::string& mid) const {
    for (const auto& m : modules)
        if (m.id == mid) return m;
    throw MissingPort("unknown module '" + mid + "' in testbench " + id);
}

bool TestbenchSpec::has_module(const std::string& mid) const {
    for (const auto& m : modules)
        if (m.id == mid) return true;
    return false;
}

double TestbenchSpec::config(const std::string& key) const {
    auto it = configs.find(key);
    if (it == configs.end())
        throw MissingInput("testbench " + id + " lacks config '" + key + "'");
    return it->second;
}

std::uint64_t TestbenchSpec::content_hash() const {
    return fnv1a(serialize_testbench(*this));
}

StageCtx stage_ctx(const PerturbationSpec& p) {
    StageCtx st;
    st.stage = p.stage;
    if (p.stage != Stage::Schematic) {
        st.cap_scale = p.cap_scale;
        st.cap_offset = p.cap_offset;
        st.res_scale = p.res_scale;
    }
    return st;
}

// ---------------------------------------------------------------------------
// Built-in formula sets

namespace {

class TrackHoldDacFormula final : public FormulaSet {
public:
    std::string id() const override { return "sar6_th"; }
    std::vector<PortDecl> param_decls() const override {
        return {{"c_u", "fF", 0.5, 8.0}, {"w_sw", "1", 1.0, 16.0}};
    }
    std::vector<PortDecl> input_decls() const override {
        return {{"R_drv", "kOhm", 0.01, 1.2}, {"C_cmp", "fF", 0.2, 12.0}};
    }
    std::vector<PortDecl> output_decls() const override {
        return {{"C_samp", "fF", 0, 0}, {"t_settle", "ps", 0, 0}, {"v_ktc", "V", 0, 0}};
    }
    std::set<std::string> reads() const override { return {"R_drv", "C_cmp"}; }
    Assignment eval(const Assignment& p, const Assignment& in,
                    const std::map<std::string, double>& cfg,
                    const StageCtx& st) const override {
        double n = cfg.at("n");
        double c_dac = std::exp2(n) * p.at("c_u");
        double c_samp = st.cap(c_dac + in.at("C_cmp"));
        double r_total = st.res(in.at("R_drv") + 0.5 / p.at("w_sw"));
        double tau = r_total * c_samp; // kOhm * fF = ps
        Assignment out;
        out["C_samp"] = c_samp;
        out["t_settle"] = kLn2 * (n + 1.0) * tau;
        out["v_ktc"] = std::sqrt(kKtc / c_samp);
        return out;
    }
};

class ComparatorFormula final : public FormulaSet {
public:
    std::string id() const override { return "sar6_cmp"; }
    std::vector<PortDecl> param_decls() const override {
        return {{"w_in", "1", 1.0, 32.0}, {"i_tail", "mA", 0.05, 2.0}};
    }
    std::vector<PortDecl> input_decls() const override {
        // kT/C noise context from the sampling network; carried on the MLG
        // but not consumed by any comparator metric.
        return {{"v_ktc", "V", 0.0, 0.01}};
    }
    std::vector<PortDecl> output_decls() const override {
        return {{"C_cmp", "fF", 0, 0}, {"t_cmp", "ps", 0, 0},
                {"v_cmp", "mV", 0, 0}, {"P_cmp", "mW", 0, 0}};
    }
    std::set<std::string> reads() const override { return {}; }
    Assignment eval(const Assignment& p, const Assignment&,
                    const std::map<std::string, double>& cfg,
                    const StageCtx& st) const override {
        double n = cfg.at("n");
        double f_s = cfg.at("f_s");
        double w_in = p.at("w_in");
        double i_tail = p.at("i_tail");
        Assignment out;
        out["C_cmp"] = st.cap(0.25 * w_in);
        out["t_cmp"] = 25.0 / std::sqrt(w_in * i_tail);
        out["v_cmp"] = 0.5 / std::sqrt(w_in);
        out["P_cmp"] = 0.05 * n * i_tail * f_s;
        return out;
    }
};

class SarLogicFormula final : public FormulaSet {
public:
    std::string id() const override { return "sar6_logic"; }
    std::vector<PortDecl> param_decls() const override {
        return {{"d", "1", 0.5, 8.0}};
    }
    std::vector<PortDecl> input_decls() const override { return {}; }
    std::vector<PortDecl> output_decls() const override {
        return {{"t_logic", "ps", 0, 0}, {"P_logic", "mW", 0, 0}};
    }
    std::set<std::string> reads() const override { return {}; }
    Assignment eval(const Assignment& p, const Assignment&,
                    const std::map<std::string, double>& cfg,
                    const StageCtx&) const override {
        double n = cfg.at("n");
        double f_s = cfg.at("f_s");
        double d = p.at("d");
        Assignment out;
        out["t_logic"] = 8.0 / d;
        out["P_logic"] = 0.01 * n * d * f_s;
        return out;
    }
};

class DriverFormula final : public FormulaSet {
public:
    std::string id() const override { return "sar6_drv"; }
    std::vector<PortDecl> param_decls() const override {
        return {{"w_drv", "1", 1.0, 64.0}};
    }
    std::vector<PortDecl> input_decls() const override { return {}; }
    std::vector<PortDecl> output_decls() const override {
        return {{"R_drv", "kOhm", 0, 0}, {"P_drv", "mW", 0, 0}};
    }
    std::set<std::string> reads() const override { return {}; }
    Assignment eval(const Assignment& p, const Assignment&,
                    const std::map<std::string, double>& cfg,
                    const StageCtx& st) const override {
        double f_s = cfg.at("f_s");
        double w_drv = p.at("w_drv");
        Assignment out;
        out["R_drv"] = st.res(1.0 / w_drv);
        out["P_drv"] = 0.02 * w_drv * f_s;
        return out;
    }
};

// 1-D toy bench for search unit tests: a single module with a quadratic bowl.
class ToyBowlFormula final : public FormulaSet {
public:
    std::string id() const override { return "toy_bowl"; }
    std::vector<PortDecl> param_decls() const override {
        return {{"p", "1", 0.0, 8.0}};
    }
    std::vector<PortDecl> input_decls() const override { return {}; }
    std::vector<PortDecl> output_decls() const override {
        return {{"y", "1", 0, 0}};
    }
    std::set<std::string> reads() const override { return {}; }
    Assignment eval(const Assignment& p, const Assignment&,
                    const std::map<std::string, double>&,
                    const StageCtx&) const override {
        double x = p.at("p") - 3.0;
        return {{"y", x * x}};
    }
};

// Pass-through relay used by graph tests (reads its input).
class RelayFormula final : public FormulaSet {
public:
    std::string id() const override { return "relay"; }
    std::vector<PortDecl> param_decls() const override {
        return {{"g", "1", 0.0, 1.0}};
    }
    std::vector<PortDecl> input_decls() const override {
        return {{"x", "1", 0.0, 10.0}};
    }
    std::vector<PortDecl> output_decls() const override {
        return {{"y", "1", 0, 0}};
    }
    std::set<std::string> reads() const override { return {"x"}; }
    Assignment eval(const Assignment& p, const Assignment& in,
                    const std::map<std::string, double>&,
                    const StageCtx&) const override {
        return {{"y", in.at("x") + p.at("g")}};
    }
};

// Source relay: no inputs, emits its parameter.
class SourceFormula final : public FormulaSet {
public:
    std::string id() const override { return "source"; }
    std::vector<PortDecl> param_decls() const override {
        return {{"g", "1", 0.0, 1.0}};
    }
    std::vector<PortDecl> input_decls() const override { return {}; }
    std::vector<PortDecl> output_decls() const override {
        return {{"y", "1", 0, 0}};
    }
    std::set<std::string> reads() const override { return {}; }
    Assignment eval(const Assignment& p, const Assignment&,
                    const std::map<std::string, double>&,
                    const StageCtx&) const override {
        return {{"y", p.at("g")}};
    }
};

const std::vector<const FormulaSet*>& formula_registry() {
    static const TrackHoldDacFormula th;
    static const ComparatorFormula cmp;
    static const SarLogicFormula logic;
    static const DriverFormula drv;
    static const ToyBowlFormula bowl;
    static const RelayFormula relay;
    static const SourceFormula source;
    static const std::vector<const FormulaSet*> regs = {&th, &cmp, &logic,
                                                        &drv, &bowl, &relay, &source};
    return regs;
}

} // namespace

const FormulaSet& formula_set(const std::string& id) {
    for (const auto* f : formula_registry())
        if (f->id() == id) return *f;
    throw UnknownFormula("no built-in formula set '" + id + "'");
}

bool has_formula_set(const std::string& id) {
    for (const auto* f : formula_registry())
        if (f->id() == id) return true;
    return false;
}

// ---------------------------------------------------------------------------
// System reductions

namespace {

class Sar6Reduction final : public SystemReduction {
public:
    std::string id() const override { return "sar6"; }

    std::vector<PortDecl> spec_decls() const override {
        // each spec is additive across modules in its declared domain:
        // noise power 2^(-2 ENOB), total delay 1/f_s_max, power sum,
        // squared noise voltage, and the area sum itself
        return {{"ENOB", "bit", 0, 0, "bits"},
                {"f_s_max", "GS/s", 0, 0, "recip"},
                {"P_total", "mW", 0, 0, "linear"},
                {"v_noise_total", "V", 0, 0, "sq"},
                {"area_proxy", "1", 0, 0, "linear"}};
    }

    std::vector<std::string> spec_owners(const std::string& spec) const override {
        if (spec == "ENOB" || spec == "v_noise_total")
            return {"trackhold_dac", "comparator"};
        if (spec == "f_s_max") return {"trackhold_dac", "comparator", "sar_logic"};
        if (spec == "P_total") return {"comparator", "sar_logic", "driver"};
        if (spec == "area_proxy")
            return {"trackhold_dac", "comparator", "sar_logic", "driver"};
        throw MissingInput("unknown spec '" + spec + "'");
    }

    Assignment eval(const std::map<std::string, double>& cfg,
                    const Assignment& m, const Assignment& p) const override {
        Core c = core(cfg, m, p);
        return {{"ENOB", c.enob}, {"f_s_max", c.fsmax}, {"P_total", c.ptotal},
                {"v_noise_total", c.vnoise}, {"area_proxy", c.area}};
    }

    std::map<std::string, Assignment>
    partials(const std::map<std::string, double>& cfg,
             const Assignment& m, const Assignment& p) const override {
        Core c = core(cfg, m, p);
        double n = cfg.at("n");
        std::map<std::string, Assignment> d;

        // v_noise_total = sqrt(v_ktc^2 + (1e-3 v_cmp)^2); v_cmp arrives in mV.
        double vk = m.at("trackhold_dac.v_ktc");
        double vc = 1e-3 * m.at("comparator.v_cmp");
        d["v_noise_total"]["trackhold_dac.v_ktc"] = vk / c.vnoise;
        d["v_noise_total"]["comparator.v_cmp"] = 1e-3 * vc / c.vnoise;

        // ENOB via SNDR = 10 log10(q / den), den = vnoise^2 + LSB^2/12.
        double k = 10.0 / (std::log(10.0) * 6.02);
        d["ENOB"]["trackhold_dac.v_ktc"] = -k * 2.0 * vk / c.den;
        d["ENOB"]["comparator.v_cmp"] = -k * 2.0 * vc * 1e-3 / c.den;

        double dfdT = -1000.0 / (c.T * c.T);
        d["f_s_max"]["trackhold_dac.t_settle"] = dfdT;
        d["f_s_max"]["comparator.t_cmp"] = dfdT * n;
        d["f_s_max"]["sar_logic.t_logic"] = dfdT * n;

        d["P_total"]["comparator.P_cmp"] = 1.0;
        d["P_total"]["sar_logic.P_logic"] = 1.0;
        d["P_total"]["driver.P_drv"] = 1.0;

        d["area_proxy"]["trackhold_dac.c_u"] = std::exp2(n);
        d["area_proxy"]["comparator.w_in"] = 1.0;
        d["area_proxy"]["driver.w_drv"] = 2.0;
        d["area_proxy"]["sar_logic.d"] = 1.0;
        return d;
    }

    void transient_params(const std::map<std::string, double>& cfg,
                          const Assignment& m, double& tau_ps,
                          double& noise_v) const override {
        double n = cfg.at("n");
        tau_ps = m.at("trackhold_dac.t_settle") / (kLn2 * (n + 1.0));
        double vk = m.at("trackhold_dac.v_ktc");
        double vc = 1e-3 * m.at("comparator.v_cmp");
        noise_v = std::sqrt(vk * vk + vc * vc);
    }

private:
    struct Core {
        double vnoise, den, enob, T, fsmax, ptotal, area;
    };

    Core core(const std::map<std::string, double>& cfg, const Assignment& m,
              const Assignment& p) const {
        double n = cfg.at("n");
        double v_fs = cfg.at("V_FS");
        Core c;
        double vk = get(m, "trackhold_dac.v_ktc", "sar6 reduction");
        double vc = 1e-3 * get(m, "comparator.v_cmp", "sar6 reduction");
        c.vnoise = std::sqrt(vk * vk + vc * vc);
        double lsb = v_fs / std::exp2(n);
        c.den = c.vnoise * c.vnoise + lsb * lsb / 12.0;
        double sndr = 10.0 * std::log10((v_fs * v_fs / 8.0) / c.den);
        c.enob = (sndr - 1.76) / 6.02;
        c.T = get(m, "trackhold_dac.t_settle", "sar6 reduction") +
              n * (get(m, "comparator.t_cmp", "sar6 reduction") +
                   get(m, "sar_logic.t_logic", "sar6 reduction"));
        c.fsmax = 1000.0 / c.T; // ps -> GS/s
        c.ptotal = get(m, "comparator.P_cmp", "sar6 reduction") +
                   get(m, "sar_logic.P_logic", "sar6 reduction") +
                   get(m, "driver.P_drv", "sar6 reduction");
        c.area = std::exp2(n) * get(p, "trackhold_dac.c_u", "sar6 reduction") +
                 get(p, "comparator.w_in", "sar6 reduction") +
                 2.0 * get(p, "driver.w_drv", "sar6 reduction") +
                 get(p, "sar_logic.d", "sar6 reduction");
        return c;
    }
};

// Sums every module metric into one minimized "total" spec; serves the toy
// and relay benches used in tests.
class SumReduction final : public SystemReduction {
public:
    std::string id() const override { return "sum"; }
    std::vector<PortDecl> spec_decls() const override {
        return {{"total", "1", 0, 0}};
    }
    std::vector<std::string> spec_owners(const std::string&) const override {
        return {}; // resolved as "all modules" by callers
    }
    Assignment eval(const std::map<std::string, double>&, const Assignment& m,
                    const Assignment&) const override {
        double s = 0.0;
        for (const auto& [k, v] : m) s += v;
        return {{"total", s}};
    }
    std::map<std::string, Assignment>
    partials(const std::map<std::string, double>&, const Assignment& m,
             const Assignment&) const override {
        Assignment d;
        for (const auto& [k, v] : m) d[k] = 1.0;
        return {{"total", d}};
    }
    void transient_params(const std::map<std::string, double>&, const Assignment&,
                          double& tau_ps, double& noise_v) const override {
        tau_ps = 1.0;
        noise_v = 0.0;
    }
};

} // namespace

const SystemReduction& system_reduction(const std::string& id) {
    static const Sar6Reduction sar6;
    static const SumReduction sum;
    if (id == sar6.id()) return sar6;
    if (id == sum.id()) return sum;
    throw UnknownFormula("no built-in system reduction '" + id + "'");
}

// ---------------------------------------------------------------------------
// Package text format

std::string builtin_testbench_text(const std::string& name) {
    if (name == "sar6") {
        return R"(ampse-tb/1
testbench sar6
system sar6
config n 6
config f_s 2
config V_FS 1
module trackhold_dac sar6_th
param trackhold_dac c_u fF 0.5 8
param trackhold_dac w_sw 1 1 16
in trackhold_dac R_drv kOhm 0.01 1.2
in trackhold_dac C_cmp fF 0.2 12
out trackhold_dac v_ktc V
metric trackhold_dac C_samp fF
metric trackhold_dac t_settle ps
metric trackhold_dac v_ktc V
module comparator sar6_cmp
param comparator w_in 1 1 32
param comparator i_tail mA 0.05 2
in comparator v_ktc V 0 0.01
out comparator C_cmp fF
metric comparator C_cmp fF
metric comparator t_cmp ps
metric comparator v_cmp mV
metric comparator P_cmp mW
module sar_logic sar6_logic
param sar_logic d 1 0.5 8
metric sar_logic t_logic ps
metric sar_logic P_logic mW
module driver sar6_drv
param driver w_drv 1 1 64
out driver R_drv kOhm
metric driver R_drv kOhm
metric driver P_drv mW
bind driver.R_drv -> trackhold_dac.R_drv
bind comparator.C_cmp -> trackhold_dac.C_cmp
bind trackhold_dac.v_ktc -> comparator.v_ktc
spec ENOB ge 5.5 bit
spec f_s_max ge 2 GS/s
spec v_noise_total le 0.001 V
spec area_proxy le 300 1
spec P_total min 0 mW
stage schematic
seed 1
layout 0.15 0.1 2
silicon 0.05 0.01
)";
    }
    if (name == "toy1") {
        return R"(ampse-tb/1
testbench toy1
system sum
module blob toy_bowl
param blob p 1 0 8
metric blob y 1
spec total min 0 1
stage schematic
seed 1
layout 0.15 0.1 2
silicon 0.05 0.01
)";
    }
    throw ParseError("no built-in testbench named '" + name + "'");
}

namespace {

PortDecl find_decl(const std::vector<PortDecl>& decls, const std::string& name,
                   const std::string& ctx) {
    for (const auto& d : decls)
        if (d.name == name) return d;
    throw ParseError("'" + name + "' is not declared by " + ctx);
}

void validate_against_formula(const ModuleSpec& m) {
    const FormulaSet& f = formula_set(m.formula_id);
    auto expect_names = [](const std::vector<PortDecl>& v) {
        std::set<std::string> s;
        for (const auto& d : v) s.insert(d.name);
        return s;
    };
    std::set<std::string> want = expect_names(f.param_decls());
    std::set<std::string> got;
    for (const auto& p : m.space.params) got.insert(p.name);
    if (want != got)
        throw ParseError("module " + m.id + " parameters do not match formula '" +
                         m.formula_id + "'");
    want = expect_names(f.input_decls());
    got = expect_names(m.interface_in);
    if (want != got)
        throw ParseError("module " + m.id + " interface inputs do not match formula '" +
                         m.formula_id + "'");
    std::set<std::string> outs = expect_names(f.output_decls());
    for (const auto& d : m.interface_out)
        if (!outs.count(d.name))
            throw ParseError("module " + m.id + " exports unknown port '" + d.name + "'");
    for (const auto& d : m.metrics)
        if (!outs.count(d.name))
            throw ParseError("module " + m.id + " declares unknown metric '" + d.name + "'");
    // interface_out / metric names must stay disjoint from interface_in
    for (const auto& d : m.interface_in)
        if (outs.count(d.name))
            throw ParseError("module " + m.id + " reuses input name '" + d.name +
                             "' as an output");
}

} // namespace

TestbenchSpec parse_testbench(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    TestbenchSpec tb;
    bool saw_version = false;

    auto module_ref = [&tb](const std::string& mid, int ln) -> ModuleSpec& {
        for (auto& m : tb.modules)
            if (m.id == mid) return m;
        throw ParseError("line " + std::to_string(ln) + ": unknown module '" + mid + "'");
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!saw_version) {
            if (line != "ampse-tb/1")
                throw ParseError("expected header 'ampse-tb/1', got '" + line + "'");
            saw_version = true;
            continue;
        }
        auto tok = split_ws(line);
        const std::string ctx = "line " + std::to_string(lineno);
        const std::string& kw = tok[0];
        if (kw == "testbench" && tok.size() == 2) {
            tb.id = tok[1];
        } else if (kw == "system" && tok.size() == 2) {
            tb.system_id = tok[1];
        } else if (kw == "config" && tok.size() == 3) {
            tb.configs[tok[1]] = parse_real(tok[2], ctx);
        } else if (kw == "module" && tok.size() == 3) {
            if (!has_formula_set(tok[2]))
                throw UnknownFormula("module " + tok[1] + " references formula '" +
                                     tok[2] + "'");
            ModuleSpec m;
            m.id = tok[1];
            m.formula_id = tok[2];
            for (const auto& e : tb.modules)
                if (e.id == m.id) throw ParseError(ctx + ": duplicate module " + m.id);
            tb.modules.push_back(std::move(m));
        } else if (kw == "param" && (tok.size() == 6 || tok.size() == 7)) {
            ParamDecl p;
            p.name = tok[2];
            p.unit = tok[3];
            p.lower = parse_real(tok[4], ctx);
            p.upper = parse_real(tok[5], ctx);
            if (tok.size() == 7) p.grid = parse_real(tok[6], ctx);
            module_ref(tok[1], lineno).space.params.push_back(std::move(p));
        } else if (kw == "in" && tok.size() == 6) {
            module_ref(tok[1], lineno).interface_in.push_back(
                {tok[2], tok[3], parse_real(tok[4], ctx), parse_real(tok[5], ctx)});
        } else if (kw == "out" && tok.size() == 4) {
            module_ref(tok[1], lineno).interface_out.push_back({tok[2], tok[3], 0, 0});
        } else if (kw == "metric" && tok.size() == 4) {
            module_ref(tok[1], lineno).metrics.push_back({tok[2], tok[3], 0, 0});
        } else if (kw == "bind" && tok.size() == 4 && tok[2] == "->") {
            auto from = split_char(tok[1], '.');
            auto to = split_char(tok[3], '.');
            if (from.size() != 2 || to.size() != 2)
                throw ParseError(ctx + ": bindings use module.port -> module.port");
            tb.bindings.push_back({from[0], from[1], to[0], to[1]});
        } else if (kw == "spec" && tok.size() == 5) {
            SpecEntry e;
            e.name = tok[1];
            if (tok[2] == "ge")
                e.dir = SpecEntry::Direction::GreaterEq;
            else if (tok[2] == "le")
                e.dir = SpecEntry::Direction::LessEq;
            else if (tok[2] == "min")
                e.dir = SpecEntry::Direction::Minimize;
            else
                throw ParseError(ctx + ": spec direction must be ge, le, or min");
            e.target = parse_real(tok[3], ctx);
            e.unit = tok[4];
            tb.spec_targets.entries.push_back(std::move(e));
        } else if (kw == "stage" && tok.size() == 2) {
            tb.perturbation.stage = parse_stage(tok[1]);
        } else if (kw == "seed" && tok.size() == 2) {
            tb.perturbation.seed = parse_u64(tok[1], ctx);
        } else if (kw == "layout" && tok.size() == 4) {
            tb.perturbation.cap_scale = parse_real(tok[1], ctx);
            tb.perturbation.res_scale = parse_real(tok[2], ctx);
            tb.perturbation.cap_offset = parse_real(tok[3], ctx);
        } else if (kw == "silicon" && tok.size() == 3) {
            tb.perturbation.metric_scale_sigma = parse_real(tok[1], ctx);
            tb.perturbation.metric_offset_sigma = parse_real(tok[2], ctx);
        } else {
            throw ParseError(ctx + ": unrecognized directive '" + line + "'");
        }
    }
    if (!saw_version) throw ParseError("empty testbench package");
    if (tb.id.empty()) throw ParseError("package lacks a 'testbench' line");
    if (tb.system_id.empty()) throw ParseError("package lacks a 'system' line");
    system_reduction(tb.system_id);

    for (const auto& m : tb.modules) {
        m.space.validate(m.id);
        validate_against_formula(m);
    }
    tb.spec_targets.validate();

    // every binding endpoint must resolve; every interface input exactly once
    std::map<std::string, int> bound;
    for (const auto& b : tb.bindings) {
        if (!tb.has_module(b.from_module) || !tb.has_module(b.to_module))
            throw BindingError("binding references unknown module: " + b.from_module +
                               " -> " + b.to_module);
        const ModuleSpec& src = tb.module(b.from_module);
        const ModuleSpec& dst = tb.module(b.to_module);
        bool src_ok = false;
        for (const auto& d : src.interface_out) src_ok |= (d.name == b.from_port);
        if (!src_ok)
            throw BindingError(b.from_module + " has no interface output '" +
                               b.from_port + "'");
        bool dst_ok = false;
        for (const auto& d : dst.interface_in) dst_ok |= (d.name == b.to_port);
        if (!dst_ok)
            throw BindingError(b.to_module + " has no interface input '" + b.to_port + "'");
        ++bound[b.to_module + "." + b.to_port];
    }
    for (const auto& m : tb.modules)
        for (const auto& d : m.interface_in) {
            int n = bound.count(m.id + "." + d.name) ? bound[m.id + "." + d.name] : 0;
            if (n != 1)
                throw BindingError("input " + m.id + "." + d.name + " bound " +
                                   std::to_string(n) + " times (must be exactly once)");
        }
    return tb;
}

std::string serialize_testbench(const TestbenchSpec& tb) {
    std::ostringstream out;
    out << "ampse-tb/1\n";
    out << "testbench " << tb.id << "\n";
    out << "system " << tb.system_id << "\n";
    for (const auto& [k, v] : tb.configs) out << "config " << k << ' ' << format_real(v) << "\n";
    for (const auto& m : tb.modules) {
        out << "module " << m.id << ' ' << m.formula_id << "\n";
        for (const auto& p : m.space.params) {
            out << "param " << m.id << ' ' << p.name << ' ' << p.unit << ' '
                << format_real(p.lower) << ' ' << format_real(p.upper);
            if (p.grid) out << ' ' << format_real(*p.grid);
            out << "\n";
        }
        for (const auto& d : m.interface_in)
            out << "in " << m.id << ' ' << d.name << ' ' << d.unit << ' '
                << format_real(d.lower) << ' ' << format_real(d.upper) << "\n";
        for (const auto& d : m.interface_out)
            out << "out " << m.id << ' ' << d.name << ' ' << d.unit << "\n";
        for (const auto& d : m.metrics)
            out << "metric " << m.id << ' ' << d.name << ' ' << d.unit << "\n";
    }
    for (const auto& b : tb.bindings)
        out << "bind " << b.from_module << '.' << b.from_port << " -> " << b.to_module
            << '.' << b.to_port << "\n";
    for (const auto& e : tb.spec_targets.entries) {
        const char* dir = e.dir == SpecEntry::Direction::GreaterEq ? "ge"
                          : e.dir == SpecEntry::Direction::LessEq  ? "le"
                                                                   : "min";
        out << "spec " << e.name << ' ' << dir << ' ' << format_real(e.target) << ' '
            << e.unit << "\n";
    }
    out << "stage " << stage_name(tb.perturbation.stage) << "\n";
    out << "seed " << tb.perturbation.seed << "\n";
    out << "layout " << format_real(tb.perturbation.cap_scale) << ' '
        << format_real(tb.perturbation.res_scale) << ' '
        << format_real(tb.perturbation.cap_offset) << "\n";
    out << "silicon " << format_real(tb.perturbation.metric_scale_sigma) << ' '
        << format_real(tb.perturbation.metric_offset_sigma) << "\n";
    return out.str();
}

TestbenchSpec load_testbench(const std::string& path_or_builtin) {
    namespace fs = std::filesystem;
    if (fs::exists(path_or_builtin)) return parse_testbench(read_file(path_or_builtin));
    if (path_or_builtin == "sar6" || path_or_builtin == "toy1")
        return parse_testbench(builtin_testbench_text(path_or_builtin));
    throw IoError("no such testbench package: " + path_or_builtin);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

void check_params(const ModuleSpec& m, const Assignment& params) {
    for (const auto& [k, v] : params)
        if (!m.space.find(k))
            throw OutOfBounds("module " + m.id + " has no parameter '" + k + "'");
    for (const auto& p : m.space.params) {
        auto it = params.find(p.name);
        if (it == params.end())
            throw MissingInput("module " + m.id + " parameter '" + p.name + "' unset");
        double v = it->second;
        if (!(v >= p.lower && v <= p.upper))
            throw OutOfBounds(m.id + "." + p.name + " = " + format_real(v) +
                              " outside [" + format_real(p.lower) + ", " +
                              format_real(p.upper) + "]");
        if (p.grid) {
            double k = (v - p.lower) / *p.grid;
            if (std::abs(k - std::round(k)) > 1e-9 * std::max(1.0, std::abs(k)))
                throw OutOfBounds(m.id + "." + p.name + " = " + format_real(v) +
                                  " is off the grid (step " + format_real(*p.grid) + ")");
        }
    }
}

Assignment nominal_inputs(const ModuleSpec& m) {
    Assignment in;
    for (const auto& d : m.interface_in) in[d.name] = 0.5 * (d.lower + d.upper);
    return in;
}

Assignment nominal_params(const ModuleSpec& m) {
    Assignment p;
    for (const auto& d : m.space.params) p[d.name] = 0.5 * (d.lower + d.upper);
    return p;
}

// Raw evaluation: only the formula's read inputs are required; silicon-stage
// metric noise is applied here so every caller shares the exact same path.
Assignment eval_module_raw(const TestbenchSpec& tb, const ModuleSpec& m,
                           const Assignment& params, const Assignment& inputs) {
    const FormulaSet& f = formula_set(m.formula_id);
    for (const auto& port : f.reads())
        if (!inputs.count(port))
            throw MissingPort("module " + m.id + " input '" + port + "' unset");
    StageCtx st = stage_ctx(tb.perturbation);
    Assignment out = f.eval(params, inputs, tb.configs, st);
    if (tb.perturbation.stage == Stage::Silicon) {
        // per-metric factor/offset pinned by (seed, module, metric); offsets
        // are expressed relative to the metric's schematic midpoint magnitude
        StageCtx ident;
        Assignment nominal = f.eval(nominal_params(m), nominal_inputs(m), tb.configs, ident);
        for (auto& [name, v] : out) {
            std::uint64_t h = fnv1a(m.id + "/" + name);
            Rng rf(derive_seed(tb.perturbation.seed, h, 1));
            Rng ro(derive_seed(tb.perturbation.seed, h, 2));
            double factor = 1.0 + tb.perturbation.metric_scale_sigma * rf.normal();
            double offset = tb.perturbation.metric_offset_sigma *
                            std::abs(nominal.at(name)) * ro.normal();
            v = v * factor + offset;
        }
    }
    for (const auto& [name, v] : out)
        if (!std::isfinite(v))
            throw Error("NonFiniteMetric", m.id + "." + name + " is not finite");
    return out;
}

ModuleResult split_result(const ModuleSpec& m, const Assignment& all) {
    ModuleResult r;
    for (const auto& d : m.metrics) r.metrics[d.name] = all.at(d.name);
    for (const auto& d : m.interface_out) r.interface_out[d.name] = all.at(d.name);
    return r;
}

} // namespace

ModuleResult evaluate_module(const TestbenchSpec& tb, const std::string& module_id,
                             const Assignment& params, const Assignment& interface_in) {
    const ModuleSpec& m = tb.module(module_id);
    check_params(m, params);
    for (const auto& d : m.interface_in)
        if (!interface_in.count(d.name))
            throw MissingPort("module " + m.id + " input '" + d.name + "' unset");
    return split_result(m, eval_module_raw(tb, m, params, interface_in));
}

Assignment evaluate_module_outputs(const TestbenchSpec& tb, const std::string& module_id,
                                   const Assignment& params, const Assignment& inputs) {
    const ModuleSpec& m = tb.module(module_id);
    check_params(m, params);
    return eval_module_raw(tb, m, params, inputs);
}

std::vector<std::string> evaluation_order(const TestbenchSpec& tb) {
    // Kahn's algorithm over read-edges: a binding constrains the order only
    // when the consumer's formulas actually use the port. Context-only ports
    // (carried on the MLG for documentation and masking) do not.
    std::map<std::string, std::set<std::string>> succ;
    std::map<std::string, int> indeg;
    for (const auto& m : tb.modules) indeg[m.id] = 0;
    for (const auto& b : tb.bindings) {
        const ModuleSpec& dst = tb.module(b.to_module);
        if (!formula_set(dst.formula_id).reads().count(b.to_port)) continue;
        if (succ[b.from_module].insert(b.to_module).second) ++indeg[b.to_module];
    }
    std::set<std::string> ready;
    for (const auto& [id, d] : indeg)
        if (d == 0) ready.insert(id);
    std::vector<std::string> order;
    while (!ready.empty()) {
        std::string id = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(id);
        for (const auto& s : succ[id])
            if (--indeg[s] == 0) ready.insert(s);
    }
    if (order.size() != tb.modules.size()) {
        std::string cyc;
        for (const auto& [id, d] : indeg)
            if (d > 0) cyc += (cyc.empty() ? "" : ", ") + id;
        throw CycleError("module dependency cycle among: " + cyc);
    }
    return order;
}

namespace {

Assignment module_params_from(const TestbenchSpec& tb, const std::string& mid,
                              const Assignment& full_params) {
    Assignment p;
    const ModuleSpec& m = tb.module(mid);
    for (const auto& d : m.space.params) {
        auto it = full_params.find(mid + "." + d.name);
        if (it == full_params.end())
            throw MissingInput("full parameter set lacks " + mid + "." + d.name);
        p[d.name] = it->second;
    }
    return p;
}

// Walks the bench in dependency order, feeding interface outputs forward.
// Returns qualified metrics; optionally collects qualified parameters.
Assignment collect_system_metrics(const TestbenchSpec& tb, const Assignment& full_params,
                                  Assignment* params_q = nullptr) {
    std::vector<std::string> order = evaluation_order(tb);
    std::map<std::string, Assignment> produced; // module -> interface_out values
    Assignment metrics;
    for (const auto& mid : order) {
        const ModuleSpec& m = tb.module(mid);
        Assignment p = module_params_from(tb, mid, full_params);
        check_params(m, p);
        if (params_q)
            for (const auto& [k, v] : p) (*params_q)[mid + "." + k] = v;
        Assignment in;
        for (const auto& b : tb.bindings)
            if (b.to_module == mid && produced.count(b.from_module)) {
                auto it = produced[b.from_module].find(b.from_port);
                if (it != produced[b.from_module].end()) in[b.to_port] = it->second;
            }
        Assignment all = eval_module_raw(tb, m, p, in);
        ModuleResult r = split_result(m, all);
        produced[mid] = r.interface_out;
        for (const auto& [k, v] : r.metrics) metrics[mid + "." + k] = v;
    }
    return metrics;
}

} // namespace

Assignment evaluate_system(const TestbenchSpec& tb, const Assignment& full_params) {
    Assignment params_q;
    Assignment metrics = collect_system_metrics(tb, full_params, &params_q);
    return system_reduction(tb.system_id).eval(tb.configs, metrics, params_q);
}

Waveform simulate_transient(const TestbenchSpec& tb, const Assignment& full_params,
                            double duration, double dt, std::uint64_t noise_seed) {
    if (!(dt > 0.0)) throw OutOfBounds("dt must be positive");
    if (!(duration >= dt)) throw OutOfBounds("duration must be at least dt");

    Assignment metrics = collect_system_metrics(tb, full_params);
    double tau_ps = 0.0, noise_v = 0.0;
    system_reduction(tb.system_id).transient_params(tb.configs, metrics, tau_ps, noise_v);
    double tau = tau_ps * 1e-12;
    double v_fs = tb.configs.count("V_FS") ? tb.configs.at("V_FS") : 1.0;

    Waveform w;
    w.dt = dt;
    w.label_horizon = duration;
    Rng rng(derive_seed(noise_seed, 0x77617665ULL, 0)); // "wave"
    std::size_t n = static_cast<std::size_t>(std::floor(duration / dt + 1e-12)) + 1;
    w.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) * dt;
        double v = v_fs * (1.0 - std::exp(-t / tau)) + noise_v * rng.normal();
        w.samples.push_back(v);
    }
    return w;
}

bool label_waveform(const TestbenchSpec& tb, const Assignment& full_params,
                    double horizon) {
    if (!(horizon > 0.0)) throw OutOfBounds("horizon must be positive");
    Assignment metrics = collect_system_metrics(tb, full_params);
    double tau_ps = 0.0, noise_v = 0.0;
    system_reduction(tb.system_id).transient_params(tb.configs, metrics, tau_ps, noise_v);
    double tau = tau_ps * 1e-12;
    double n = tb.config("n");
    // pass iff settling error is strictly below LSB/2 on the noiseless curve
    return std::exp(-horizon / tau) < std::exp2(-(n + 1.0));
}

TestbenchSpec apply_stage(const TestbenchSpec& tb, Stage stage, std::uint64_t seed) {
    TestbenchSpec out = tb;
    out.perturbation.stage = stage;
    out.perturbation.seed = seed;
    return out;
}

Assignment space_midpoint(const TestbenchSpec& tb) {
    Assignment p;
    for (const auto& m : tb.modules)
        for (const auto& d : m.space.params)
            p[m.id + "." + d.name] = 0.5 * (d.lower + d.upper);
    return p;
}

} // namespace ampse
