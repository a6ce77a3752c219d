#pragma once

#include "ampse/oracle.hpp"

#include <Eigen/Core>

#include <map>
#include <set>
#include <string>
#include <vector>

namespace ampse {

/// Module Linking Graph: modules as vertices, bound interface ports as
/// typed directed edges. Immutable after build_graph.
struct Mlg {
    std::vector<std::string> vertices;
    std::vector<Binding> edges;
    /// Dependency order over read-edges (ties broken lexicographically).
    std::vector<std::string> order;

    /// Modules reachable into `id` following edges backwards, plus `id`
    /// itself. Context edges count: connectivity masking follows the full
    /// graph structure even where values are not consumed.
    std::set<std::string> upstream_closure(const std::string& id) const;
};

struct Diagnostic {
    std::string code; // machine readable: CycleError, UnitMismatch, UnknownPort, ...
    std::string message;
};

Mlg build_graph(const TestbenchSpec& tb);

std::vector<Diagnostic> validate(const Mlg& g, const TestbenchSpec& tb);

/// One edge per line, "from.port -> to.port".
std::string export_edge_list(const Mlg& g);

/// Common contract for oracle- and surrogate-backed module evaluation.
/// Outputs carry both interface ports and metrics, unqualified names.
class ModuleEvaluator {
public:
    virtual ~ModuleEvaluator() = default;
    virtual Assignment eval(const Assignment& params, const Assignment& inputs) const = 0;
    /// Interface inputs the evaluator consumes.
    virtual std::set<std::string> reads() const = 0;
    virtual bool differentiable() const { return false; }
    /// Partials of every output w.r.t. parameters and read inputs.
    virtual std::map<std::string, Assignment>
    jacobian(const Assignment& params, const Assignment& inputs) const;
};

/// Exact oracle evaluator for one module (shares the oracle's arithmetic).
class OracleEvaluator final : public ModuleEvaluator {
public:
    OracleEvaluator(const TestbenchSpec& tb, std::string module_id)
        : tb_(&tb), module_id_(std::move(module_id)) {}
    Assignment eval(const Assignment& params, const Assignment& inputs) const override {
        return evaluate_module_outputs(*tb_, module_id_, params, inputs);
    }
    std::set<std::string> reads() const override {
        return formula_set(tb_->module(module_id_).formula_id).reads();
    }

private:
    const TestbenchSpec* tb_;
    std::string module_id_;
};

using EvaluatorMap = std::map<std::string, const ModuleEvaluator*>;

/// Evaluates vertices in dependency order, feeds interface ports forward and
/// reduces metrics to the system spec vector.
Assignment compose_evaluate(const Mlg& g, const TestbenchSpec& tb,
                            const EvaluatorMap& evaluators,
                            const Assignment& full_params);

/// As compose_evaluate; also returns d(spec)/d(qualified param) accumulated
/// by the chain rule across edges. Requires differentiable evaluators.
Assignment compose_evaluate_grad(const Mlg& g, const TestbenchSpec& tb,
                                 const EvaluatorMap& evaluators,
                                 const Assignment& full_params,
                                 std::map<std::string, Assignment>& spec_grads);

/// Binary connectivity masks for a CCI network regressing all qualified
/// parameters onto the system specs.
struct ConnectivityMask {
    std::vector<std::string> group_order;         // module ids, input order
    std::vector<std::string> input_names;         // qualified params, sorted
    std::vector<int> input_group;                 // input index -> group index
    std::vector<std::vector<int>> hidden_groups;  // per hidden layer: unit -> group
    std::vector<std::string> output_names;        // system specs, reduction order
    /// One 0/1 matrix per weight layer (rows = outputs of the layer).
    std::vector<Eigen::MatrixXd> layer_masks;

    double density() const;
};

/// group_sizes: hidden units assigned to each module, identical split in
/// every hidden layer; the per-layer sum must equal that layer's width.
/// The reserved id "<system>" adds a group for the spec reduction treated
/// as a sink vertex: it sees every module's units (and raw parameters) and
/// feeds every spec, hosting cross-module interactions such as rate minima
/// that single-module groups cannot express.
ConnectivityMask connectivity_mask(const Mlg& g, const TestbenchSpec& tb,
                                   const std::vector<int>& hidden_widths,
                                   const std::map<std::string, int>& group_sizes);

/// Default split: proportional to each module's parameter count, at least 4
/// units per group.
std::map<std::string, int> default_group_sizes(const TestbenchSpec& tb, int hidden_width);

} // namespace ampse
