#include "ampse/mlg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ampse {

std::map<std::string, Assignment>
ModuleEvaluator::jacobian(const Assignment&, const Assignment&) const {
    throw MissingEvaluator("evaluator does not expose gradients");
}

std::set<std::string> Mlg::upstream_closure(const std::string& id) const {
    std::set<std::string> closure{id};
    bool grew = true;
    while (grew) {
        grew = false;
        for (const auto& e : edges)
            if (closure.count(e.to_module) && !closure.count(e.from_module)) {
                closure.insert(e.from_module);
                grew = true;
            }
    }
    return closure;
}

Mlg build_graph(const TestbenchSpec& tb) {
    Mlg g;
    for (const auto& m : tb.modules) g.vertices.push_back(m.id);
    std::sort(g.vertices.begin(), g.vertices.end());
    g.edges = tb.bindings;
    g.order = evaluation_order(tb); // throws CycleError with the cycle listed
    return g;
}

namespace {

const PortDecl* find_port(const std::vector<PortDecl>& v, const std::string& name) {
    for (const auto& d : v)
        if (d.name == name) return &d;
    return nullptr;
}

} // namespace

std::vector<Diagnostic> validate(const Mlg& g, const TestbenchSpec& tb) {
    std::vector<Diagnostic> diags;
    for (const auto& v : g.vertices)
        if (!tb.has_module(v))
            diags.push_back({"UnknownModule", "vertex '" + v + "' has no ModuleSpec"});
    std::map<std::string, int> in_count;
    for (const auto& e : g.edges) {
        std::string label = e.from_module + "." + e.from_port + " -> " + e.to_module +
                            "." + e.to_port;
        if (!tb.has_module(e.from_module) || !tb.has_module(e.to_module)) {
            diags.push_back({"UnknownModule", "edge " + label + " names a missing module"});
            continue;
        }
        const PortDecl* src = find_port(tb.module(e.from_module).interface_out, e.from_port);
        const PortDecl* dst = find_port(tb.module(e.to_module).interface_in, e.to_port);
        if (!src) diags.push_back({"UnknownPort", "edge " + label + ": no such output"});
        if (!dst) diags.push_back({"UnknownPort", "edge " + label + ": no such input"});
        if (src && dst && src->unit != dst->unit)
            diags.push_back({"UnitMismatch", "edge " + label + ": " + src->unit +
                                                 " bound to " + dst->unit});
        if (dst) ++in_count[e.to_module + "." + e.to_port];
    }
    for (const auto& [port, n] : in_count)
        if (n > 1)
            diags.push_back({"DuplicateBinding", "input " + port + " bound " +
                                                     std::to_string(n) + " times"});
    try {
        evaluation_order(tb);
    } catch (const CycleError& e) {
        diags.push_back({"CycleError", e.what()});
    }
    return diags;
}

std::string export_edge_list(const Mlg& g) {
    std::ostringstream out;
    for (const auto& e : g.edges)
        out << e.from_module << '.' << e.from_port << " -> " << e.to_module << '.'
            << e.to_port << "\n";
    return out.str();
}

namespace {

Assignment gather_params(const TestbenchSpec& tb, const std::string& mid,
                         const Assignment& full_params) {
    Assignment p;
    for (const auto& d : tb.module(mid).space.params) {
        auto it = full_params.find(mid + "." + d.name);
        if (it == full_params.end())
            throw MissingInput("full parameter set lacks " + mid + "." + d.name);
        p[d.name] = it->second;
    }
    return p;
}

} // namespace

Assignment compose_evaluate(const Mlg& g, const TestbenchSpec& tb,
                            const EvaluatorMap& evaluators,
                            const Assignment& full_params) {
    if (evaluators.empty()) throw NoModels("no evaluators supplied");
    std::map<std::string, Assignment> produced;
    Assignment metrics, params_q;
    for (const auto& mid : g.order) {
        auto ev = evaluators.find(mid);
        if (ev == evaluators.end())
            throw MissingEvaluator("no evaluator for module '" + mid + "'");
        Assignment p = gather_params(tb, mid, full_params);
        for (const auto& [k, v] : p) params_q[mid + "." + k] = v;
        Assignment in;
        for (const auto& e : g.edges)
            if (e.to_module == mid && produced.count(e.from_module)) {
                auto it = produced[e.from_module].find(e.from_port);
                if (it != produced[e.from_module].end()) in[e.to_port] = it->second;
            }
        Assignment all = ev->second->eval(p, in);
        const ModuleSpec& m = tb.module(mid);
        Assignment outs;
        for (const auto& d : m.interface_out) {
            auto it = all.find(d.name);
            if (it == all.end())
                throw ShapeError("evaluator for " + mid + " did not produce '" + d.name + "'");
            outs[d.name] = it->second;
        }
        produced[mid] = outs;
        for (const auto& d : m.metrics) {
            auto it = all.find(d.name);
            if (it == all.end())
                throw ShapeError("evaluator for " + mid + " did not produce '" + d.name + "'");
            metrics[mid + "." + d.name] = it->second;
        }
    }
    return system_reduction(tb.system_id).eval(tb.configs, metrics, params_q);
}

Assignment compose_evaluate_grad(const Mlg& g, const TestbenchSpec& tb,
                                 const EvaluatorMap& evaluators,
                                 const Assignment& full_params,
                                 std::map<std::string, Assignment>& spec_grads) {
    if (evaluators.empty()) throw NoModels("no evaluators supplied");
    std::map<std::string, Assignment> produced;
    // gradient of every produced value (qualified) w.r.t. qualified params
    std::map<std::string, Assignment> vgrad;
    Assignment metrics, params_q;

    for (const auto& mid : g.order) {
        auto ev = evaluators.find(mid);
        if (ev == evaluators.end())
            throw MissingEvaluator("no evaluator for module '" + mid + "'");
        if (!ev->second->differentiable())
            throw MissingEvaluator("evaluator for '" + mid + "' is not differentiable");
        Assignment p = gather_params(tb, mid, full_params);
        for (const auto& [k, v] : p) params_q[mid + "." + k] = v;
        Assignment in;
        std::map<std::string, std::string> input_source; // port -> qualified producer
        for (const auto& e : g.edges)
            if (e.to_module == mid && produced.count(e.from_module)) {
                auto it = produced[e.from_module].find(e.from_port);
                if (it != produced[e.from_module].end()) {
                    in[e.to_port] = it->second;
                    input_source[e.to_port] = e.from_module + "." + e.from_port;
                }
            }
        Assignment all = ev->second->eval(p, in);
        auto jac = ev->second->jacobian(p, in);
        const ModuleSpec& m = tb.module(mid);

        for (const auto& [oname, oval] : all) {
            Assignment grad; // w.r.t. qualified params
            auto jit = jac.find(oname);
            if (jit != jac.end()) {
                for (const auto& [key, partial] : jit->second) {
                    if (m.space.find(key)) {
                        grad[mid + "." + key] += partial;
                    } else if (input_source.count(key)) {
                        const Assignment& up = vgrad[input_source[key]];
                        for (const auto& [fp, gval] : up) grad[fp] += partial * gval;
                    }
                }
            }
            vgrad[mid + "." + oname] = std::move(grad);
        }
        Assignment outs;
        for (const auto& d : m.interface_out) outs[d.name] = all.at(d.name);
        produced[mid] = outs;
        for (const auto& d : m.metrics) metrics[mid + "." + d.name] = all.at(d.name);
    }

    const SystemReduction& red = system_reduction(tb.system_id);
    Assignment specs = red.eval(tb.configs, metrics, params_q);
    auto red_partials = red.partials(tb.configs, metrics, params_q);
    spec_grads.clear();
    for (const auto& [spec, parts] : red_partials) {
        Assignment grad;
        for (const auto& [key, partial] : parts) {
            if (metrics.count(key)) {
                for (const auto& [fp, gval] : vgrad[key]) grad[fp] += partial * gval;
            } else {
                grad[key] += partial; // direct parameter term
            }
        }
        spec_grads[spec] = std::move(grad);
    }
    return specs;
}

double ConnectivityMask::density() const {
    double ones = 0.0, total = 0.0;
    for (const auto& m : layer_masks) {
        ones += m.sum();
        total += static_cast<double>(m.size());
    }
    return total > 0.0 ? ones / total : 0.0;
}

std::map<std::string, int> default_group_sizes(const TestbenchSpec& tb, int hidden_width) {
    const int kMinUnits = 4;
    std::vector<std::pair<std::string, int>> counts;
    int total = 0;
    for (const auto& m : tb.modules) {
        counts.emplace_back(m.id, static_cast<int>(m.space.params.size()));
        total += static_cast<int>(m.space.params.size());
    }
    std::sort(counts.begin(), counts.end());
    int base = kMinUnits * static_cast<int>(counts.size());
    if (hidden_width < base)
        throw ShapeError("hidden width " + std::to_string(hidden_width) +
                         " cannot host " + std::to_string(counts.size()) +
                         " groups of at least " + std::to_string(kMinUnits));
    int extra = hidden_width - base;
    std::map<std::string, int> sizes;
    std::vector<std::pair<double, std::string>> fractions;
    int assigned = 0;
    for (const auto& [id, c] : counts) {
        double share = total > 0 ? extra * static_cast<double>(c) / total : 0.0;
        int whole = static_cast<int>(std::floor(share));
        sizes[id] = kMinUnits + whole;
        assigned += whole;
        fractions.emplace_back(-(share - whole), id); // largest remainder first
    }
    std::sort(fractions.begin(), fractions.end());
    for (int i = 0; i < extra - assigned; ++i) sizes[fractions[i % fractions.size()].second] += 1;
    return sizes;
}

ConnectivityMask connectivity_mask(const Mlg& g, const TestbenchSpec& tb,
                                   const std::vector<int>& hidden_widths,
                                   const std::map<std::string, int>& group_sizes) {
    if (hidden_widths.empty()) throw ShapeError("network needs at least one hidden layer");
    ConnectivityMask cm;
    cm.group_order = g.vertices; // lexicographic
    // the reserved "<system>" group models the spec reduction as a sink
    // vertex: downstream of every module, feeding every spec, so its units
    // may form cross-module interactions the module groups cannot
    const bool has_sys = group_sizes.count("<system>") > 0;
    if (has_sys) cm.group_order.push_back("<system>");

    for (const auto& mid : cm.group_order)
        if (!group_sizes.count(mid))
            throw ShapeError("no hidden group size for module '" + mid + "'");
    int group_total = 0;
    for (const auto& mid : cm.group_order) group_total += group_sizes.at(mid);
    for (int w : hidden_widths)
        if (w != group_total)
            throw ShapeError("group sizes sum to " + std::to_string(group_total) +
                             " but hidden layer width is " + std::to_string(w));

    std::map<std::string, int> group_index;
    for (std::size_t i = 0; i < cm.group_order.size(); ++i)
        group_index[cm.group_order[i]] = static_cast<int>(i);

    for (const auto& mid : cm.group_order) {
        if (mid == "<system>") continue; // no parameters of its own
        for (const auto& p : tb.module(mid).space.params)
            cm.input_names.push_back(mid + "." + p.name);
    }
    std::sort(cm.input_names.begin(), cm.input_names.end());
    for (const auto& name : cm.input_names) {
        std::string mid = name.substr(0, name.find('.'));
        cm.input_group.push_back(group_index.at(mid));
    }

    for (std::size_t l = 0; l < hidden_widths.size(); ++l) {
        std::vector<int> groups;
        for (const auto& mid : cm.group_order)
            groups.insert(groups.end(), group_sizes.at(mid), group_index.at(mid));
        cm.hidden_groups.push_back(std::move(groups));
    }

    // allowed[g] = closure of modules whose information group g may see
    std::vector<std::set<int>> allowed(cm.group_order.size());
    for (std::size_t i = 0; i < cm.group_order.size(); ++i) {
        if (cm.group_order[i] == "<system>") {
            for (std::size_t j = 0; j < cm.group_order.size(); ++j)
                allowed[i].insert(static_cast<int>(j)); // sink: sees everything
            continue;
        }
        for (const auto& up : g.upstream_closure(cm.group_order[i]))
            allowed[i].insert(group_index.at(up));
    }

    const int d_in = static_cast<int>(cm.input_names.size());
    Eigen::MatrixXd m0 = Eigen::MatrixXd::Zero(hidden_widths[0], d_in);
    for (int r = 0; r < hidden_widths[0]; ++r)
        for (int c = 0; c < d_in; ++c)
            if (allowed[cm.hidden_groups[0][r]].count(cm.input_group[c])) m0(r, c) = 1.0;
    cm.layer_masks.push_back(std::move(m0));

    for (std::size_t l = 1; l < hidden_widths.size(); ++l) {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(hidden_widths[l], hidden_widths[l - 1]);
        for (int r = 0; r < hidden_widths[l]; ++r)
            for (int c = 0; c < hidden_widths[l - 1]; ++c)
                if (allowed[cm.hidden_groups[l][r]].count(cm.hidden_groups[l - 1][c]))
                    m(r, c) = 1.0;
        cm.layer_masks.push_back(std::move(m));
    }

    const SystemReduction& red = system_reduction(tb.system_id);
    for (const auto& d : red.spec_decls()) cm.output_names.push_back(d.name);
    Eigen::MatrixXd mo =
        Eigen::MatrixXd::Zero(static_cast<int>(cm.output_names.size()), hidden_widths.back());
    for (std::size_t s = 0; s < cm.output_names.size(); ++s) {
        std::vector<std::string> owners = red.spec_owners(cm.output_names[s]);
        if (owners.empty()) owners = cm.group_order; // unattributed: all modules
        // a spec reads its owning modules' units directly; upstream
        // information already reaches those units through the hidden-layer
        // closure, so widening the output row would only dilute the prior
        std::set<int> vis;
        for (const auto& o : owners) {
            if (o == "<system>") continue;
            vis.insert(group_index.at(o));
        }
        if (has_sys) vis.insert(group_index.at("<system>"));
        for (int c = 0; c < hidden_widths.back(); ++c)
            if (vis.count(cm.hidden_groups.back()[c])) mo(static_cast<int>(s), c) = 1.0;
    }
    cm.layer_masks.push_back(std::move(mo));
    return cm;
}

} // namespace ampse
