#pragma once

#include "ampse/errors.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ampse {

/// Named real-valued assignment. Ordered map keeps every iteration
/// deterministic.
using Assignment = std::map<std::string, double>;

struct ParamDecl {
    std::string name;
    std::string unit;
    double lower = 0.0;
    double upper = 0.0;
    std::optional<double> grid;
};

struct ParameterSpace {
    std::vector<ParamDecl> params;

    const ParamDecl* find(const std::string& name) const;
    void validate(const std::string& owner) const;
};

struct PortDecl {
    std::string name;
    std::string unit;
    // Sampling bounds; meaningful for parameters and interface inputs.
    double lower = 0.0;
    double upper = 0.0;
    /// Natural regression domain of a target quantity, declared by whoever
    /// defines the bench: "auto" (heuristic), "linear", "log",
    /// "recip" (delays that add as 1/y), "sq" (amplitudes whose powers add),
    /// or "bits" (log-power quantities like ENOB, additive as 2^(-2y)).
    std::string scale = "auto";
};

struct ModuleSpec {
    std::string id;
    ParameterSpace space;
    std::vector<PortDecl> interface_in;
    std::vector<PortDecl> interface_out;
    std::vector<PortDecl> metrics;
    std::string formula_id;
};

struct Binding {
    std::string from_module, from_port;
    std::string to_module, to_port;
};

struct SpecEntry {
    enum class Direction { GreaterEq, LessEq, Minimize };
    std::string name;
    Direction dir = Direction::GreaterEq;
    double target = 0.0;
    std::string unit;
};

struct SpecSet {
    std::vector<SpecEntry> entries;

    const SpecEntry& objective() const; // the unique Minimize entry
    std::vector<SpecEntry> constraints() const;
    void validate() const;
};

enum class Stage { Schematic, Layout, Silicon };

Stage parse_stage(const std::string& s);
std::string stage_name(Stage s);

struct PerturbationSpec {
    Stage stage = Stage::Schematic;
    std::uint64_t seed = 0;
    double cap_scale = 0.15;    // layout alpha
    double res_scale = 0.10;    // layout beta
    double cap_offset = 2.0;    // fF
    double metric_scale_sigma = 0.05; // silicon
    double metric_offset_sigma = 0.01;
};

struct Waveform {
    double dt = 0.0;            // seconds per sample
    std::vector<double> samples;
    double label_horizon = 0.0; // seconds
};

struct TestbenchSpec {
    std::string id;
    std::string system_id; // selects the SystemReduction
    std::vector<ModuleSpec> modules;
    std::vector<Binding> bindings;
    std::map<std::string, double> configs;
    SpecSet spec_targets;
    PerturbationSpec perturbation;

    const ModuleSpec& module(const std::string& id) const;
    bool has_module(const std::string& id) const;
    double config(const std::string& key) const;
    /// Hash of the canonical serialized form; identifies the bench for
    /// model packages (stage and seed included).
    std::uint64_t content_hash() const;
};

// Stage-dependent transforms fed into the closed-form metric functions.
struct StageCtx {
    Stage stage = Stage::Schematic;
    double cap_scale = 0.0, cap_offset = 0.0, res_scale = 0.0;

    double cap(double c) const {
        return stage == Stage::Schematic ? c : c * (1.0 + cap_scale) + cap_offset;
    }
    double res(double r) const {
        return stage == Stage::Schematic ? r : r * (1.0 + res_scale);
    }
};

/// One built-in closed-form metric-function set. Modules reference these by
/// formula_id; the declarations drive load-time validation and tell the
/// scheduler which interface inputs each module actually consumes.
class FormulaSet {
public:
    virtual ~FormulaSet() = default;
    virtual std::string id() const = 0;
    virtual std::vector<PortDecl> param_decls() const = 0;
    virtual std::vector<PortDecl> input_decls() const = 0;
    virtual std::vector<PortDecl> output_decls() const = 0; // interface_out and metrics
    /// Interface inputs that influence at least one output.
    virtual std::set<std::string> reads() const = 0;
    virtual Assignment eval(const Assignment& params, const Assignment& inputs,
                            const std::map<std::string, double>& configs,
                            const StageCtx& st) const = 0;
};

const FormulaSet& formula_set(const std::string& id);
bool has_formula_set(const std::string& id);

/// Maps per-module metrics (plus raw parameters) to the system spec vector.
/// Analytic partials back the end-to-end gradients of the composed search.
class SystemReduction {
public:
    virtual ~SystemReduction() = default;
    virtual std::string id() const = 0;
    virtual std::vector<PortDecl> spec_decls() const = 0;
    /// Modules whose metrics feed a given spec (used for CCI output masks).
    virtual std::vector<std::string> spec_owners(const std::string& spec) const = 0;
    /// Inputs are qualified "module.metric" / "module.param" keys.
    virtual Assignment eval(const std::map<std::string, double>& configs,
                            const Assignment& metrics,
                            const Assignment& params) const = 0;
    /// Partials of every spec w.r.t. every qualified metric/param it reads.
    virtual std::map<std::string, Assignment>
    partials(const std::map<std::string, double>& configs,
             const Assignment& metrics, const Assignment& params) const = 0;
    /// Settling time constant (ps) and noise sigma (V) for transient synthesis.
    virtual void transient_params(const std::map<std::string, double>& configs,
                                  const Assignment& metrics,
                                  double& tau_ps, double& noise_v) const = 0;
};

const SystemReduction& system_reduction(const std::string& id);

struct ModuleResult {
    Assignment metrics;
    Assignment interface_out;
};

/// Loads a testbench package from a file path, or one of the built-in
/// packages by name ("sar6").
TestbenchSpec load_testbench(const std::string& path_or_builtin);
TestbenchSpec parse_testbench(const std::string& text);
std::string serialize_testbench(const TestbenchSpec& tb);
std::string builtin_testbench_text(const std::string& name);

ModuleResult evaluate_module(const TestbenchSpec& tb, const std::string& module_id,
                             const Assignment& params, const Assignment& interface_in);

/// Composition-facing variant: returns the merged output map (interface_out
/// and metrics) and requires only the interface inputs the module's formula
/// set actually reads.
Assignment evaluate_module_outputs(const TestbenchSpec& tb, const std::string& module_id,
                                   const Assignment& params, const Assignment& inputs);

/// Ground-truth system evaluation: modules in dependency order, interface
/// ports propagated, metrics reduced to the system spec vector. Parameter
/// keys are qualified "module.param".
Assignment evaluate_system(const TestbenchSpec& tb, const Assignment& full_params);

/// Dependency order over modules; an edge counts only if the consumer's
/// formula set reads the bound port. Ties broken lexicographically.
std::vector<std::string> evaluation_order(const TestbenchSpec& tb);

Waveform simulate_transient(const TestbenchSpec& tb, const Assignment& full_params,
                            double duration, double dt, std::uint64_t noise_seed);

/// Full-horizon ground truth for CEPA: pass iff the noiseless settling error
/// at `horizon` is strictly below half an LSB.
bool label_waveform(const TestbenchSpec& tb, const Assignment& full_params, double horizon);

TestbenchSpec apply_stage(const TestbenchSpec& tb, Stage stage, std::uint64_t seed);

/// Midpoint of every parameter box, qualified keys.
Assignment space_midpoint(const TestbenchSpec& tb);

StageCtx stage_ctx(const PerturbationSpec& p);

} // namespace ampse
