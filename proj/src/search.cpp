#include "ampse/search.hpp"

#include "ampse/textio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace ampse {

void SearchConfig::validate(int dims) const {
    if (n_starts < 1) throw OutOfBounds("n_starts must be >= 1");
    if (max_iters < 1) throw OutOfBounds("max_iters must be >= 1");
    if (!(step > 0.0)) throw OutOfBounds("step must be positive");
    if (lambda < 0.0) throw OutOfBounds("lambda must be >= 0");
    if (keep_top_k < 1 || keep_top_k > n_starts)
        throw OutOfBounds("keep_top_k must be in [1, n_starts]");
    if (oracle_budget < 0) throw OutOfBounds("oracle_budget must be >= 0");
    if (prune_keep_m < 1 || prune_keep_m > dims)
        throw OutOfBounds("prune_keep_m must be in [1, D]");
}

double constraint_violation(const SpecEntry& e, double value) {
    double scale = std::max(std::abs(e.target), 1e-9);
    switch (e.dir) {
    case SpecEntry::Direction::GreaterEq: return (e.target - value) / scale;
    case SpecEntry::Direction::LessEq: return (value - e.target) / scale;
    default: return 0.0; // the objective carries no slack
    }
}

double penalty_loss(const Assignment& spec_values, const SpecSet& specs, double lambda) {
    double loss = spec_values.at(specs.objective().name);
    for (const auto& e : specs.constraints()) {
        double v = std::max(0.0, constraint_violation(e, spec_values.at(e.name)));
        loss += lambda * v * v;
    }
    return loss;
}

bool all_constraints_met(const Assignment& spec_values, const SpecSet& specs) {
    for (const auto& e : specs.constraints())
        if (constraint_violation(e, spec_values.at(e.name)) > 0.0) return false;
    return true;
}

namespace {

struct Dim {
    std::string name; // qualified
    double lower = 0.0, upper = 0.0;
    std::optional<double> grid;
};

std::vector<Dim> search_dims(const TestbenchSpec& tb) {
    std::vector<Dim> dims;
    for (const auto& m : tb.modules)
        for (const auto& p : m.space.params)
            dims.push_back({m.id + "." + p.name, p.lower, p.upper, p.grid});
    std::sort(dims.begin(), dims.end(),
              [](const Dim& a, const Dim& b) { return a.name < b.name; });
    return dims;
}

double snap(const Dim& d, double v) {
    v = std::min(d.upper, std::max(d.lower, v));
    if (d.grid) {
        double steps = std::round((v - d.lower) / *d.grid);
        v = std::min(d.upper, std::max(d.lower, d.lower + steps * *d.grid));
    }
    return v;
}

Assignment denorm(const std::vector<Dim>& dims, const Eigen::VectorXd& u) {
    Assignment p;
    for (std::size_t i = 0; i < dims.size(); ++i)
        p[dims[i].name] = dims[i].lower +
                          u(static_cast<Eigen::Index>(i)) * (dims[i].upper - dims[i].lower);
    return p;
}

// loss and d(loss)/d(normalized coordinate) through the composed surrogates
double loss_and_grad(const Mlg& g, const TestbenchSpec& tb, const EvaluatorMap& models,
                     const SpecSet& specs, const std::vector<Dim>& dims,
                     const Eigen::VectorXd& u, double lambda, Assignment& spec_values,
                     Eigen::VectorXd* grad_u) {
    Assignment p = denorm(dims, u);
    if (!grad_u) {
        spec_values = compose_evaluate(g, tb, models, p);
        return penalty_loss(spec_values, specs, lambda);
    }
    std::map<std::string, Assignment> spec_grads;
    spec_values = compose_evaluate_grad(g, tb, models, p, spec_grads);
    double loss = penalty_loss(spec_values, specs, lambda);

    Assignment dldp = spec_grads.at(specs.objective().name);
    for (const auto& e : specs.constraints()) {
        double v = constraint_violation(e, spec_values.at(e.name));
        if (v <= 0.0) continue;
        double scale = std::max(std::abs(e.target), 1e-9);
        double outer = 2.0 * lambda * v *
                       (e.dir == SpecEntry::Direction::GreaterEq ? -1.0 : 1.0) / scale;
        for (const auto& [k, gval] : spec_grads.at(e.name)) dldp[k] += outer * gval;
    }
    grad_u->resize(static_cast<Eigen::Index>(dims.size()));
    for (std::size_t i = 0; i < dims.size(); ++i) {
        auto it = dldp.find(dims[i].name);
        (*grad_u)(static_cast<Eigen::Index>(i)) =
            (it != dldp.end() ? it->second : 0.0) * (dims[i].upper - dims[i].lower);
    }
    return loss;
}

Eigen::VectorXd clamp01(Eigen::VectorXd u) {
    for (Eigen::Index i = 0; i < u.size(); ++i)
        u(i) = std::min(1.0, std::max(0.0, u(i)));
    return u;
}

} // namespace

std::vector<Candidate> global_search(const Mlg& g, const TestbenchSpec& tb,
                                     const EvaluatorMap& models, const SpecSet& specs,
                                     const SearchConfig& cfg) {
    if (models.empty()) throw NoModels("global_search needs surrogate models");
    std::vector<Dim> dims = search_dims(tb);
    cfg.validate(static_cast<int>(dims.size()));
    specs.validate();
    const Eigen::Index D = static_cast<Eigen::Index>(dims.size());

    // Latin hypercube of start points: one stratum per start in each dim
    Rng start_rng(derive_seed(cfg.seed, 0x73746172ULL)); // "star"
    std::vector<std::vector<Eigen::Index>> perms(dims.size());
    for (auto& perm : perms) {
        perm.resize(static_cast<std::size_t>(cfg.n_starts));
        std::iota(perm.begin(), perm.end(), 0);
        start_rng.shuffle(perm);
    }
    Eigen::MatrixXd starts(cfg.n_starts, D);
    for (int s = 0; s < cfg.n_starts; ++s)
        for (Eigen::Index j = 0; j < D; ++j)
            starts(s, j) = (static_cast<double>(perms[static_cast<std::size_t>(j)]
                                                     [static_cast<std::size_t>(s)]) +
                            start_rng.uniform()) /
                           static_cast<double>(cfg.n_starts);

    std::vector<Candidate> out;
    for (int s = 0; s < cfg.n_starts; ++s) {
        Eigen::VectorXd u = starts.row(s).transpose();
        Eigen::VectorXd grad(D);
        Assignment spec_values;
        Eigen::VectorXd best_u = u;
        double best_loss = std::numeric_limits<double>::infinity();
        int iters = 0;
        for (int t = 0; t < cfg.max_iters; ++t) {
            double loss = loss_and_grad(g, tb, models, specs, dims, u, cfg.lambda,
                                        spec_values, &grad);
            if (!std::isfinite(loss))
                throw NonFiniteLoss("non-finite penalty loss at start " +
                                    std::to_string(s));
            if (loss < best_loss) {
                best_loss = loss;
                best_u = u;
            }
            double gn = grad.norm();
            if (gn < 1e-14) break;
            double alpha = cfg.step / (1.0 + 4.0 * static_cast<double>(t) /
                                                 static_cast<double>(cfg.max_iters));
            u = clamp01(u - (alpha / gn) * grad);
            ++iters;
        }

        // snap gridded dims, then a +-1 grid-step polish per gridded dim
        Assignment p = denorm(dims, best_u);
        for (const auto& d : dims) p[d.name] = snap(d, p[d.name]);
        Assignment vals = compose_evaluate(g, tb, models, p);
        double loss = penalty_loss(vals, specs, cfg.lambda);
        bool changed = true;
        int passes = 0;
        while (changed && passes++ < 3) {
            changed = false;
            for (const auto& d : dims) {
                if (!d.grid) continue;
                for (double dir : {1.0, -1.0}) {
                    Assignment q = p;
                    double moved = snap(d, p[d.name] + dir * *d.grid);
                    if (moved == p[d.name]) continue;
                    q[d.name] = moved;
                    Assignment qv = compose_evaluate(g, tb, models, q);
                    double ql = penalty_loss(qv, specs, cfg.lambda);
                    if (ql < loss) {
                        p = q;
                        vals = qv;
                        loss = ql;
                        changed = true;
                        break;
                    }
                }
            }
        }
        if (!std::isfinite(loss)) throw NonFiniteLoss("non-finite loss after polish");

        Candidate c;
        c.params = p;
        c.predicted_specs = vals;
        c.loss = loss;
        c.feasible_pred = all_constraints_met(vals, specs);
        c.start_index = s;
        c.iterations = iters;
        out.push_back(std::move(c));
    }

    const std::string obj = specs.objective().name;
    std::stable_sort(out.begin(), out.end(), [&obj](const Candidate& a, const Candidate& b) {
        if (a.feasible_pred != b.feasible_pred) return a.feasible_pred;
        return a.predicted_specs.at(obj) < b.predicted_specs.at(obj);
    });
    if (static_cast<int>(out.size()) > cfg.keep_top_k) out.resize(cfg.keep_top_k);
    return out;
}

Candidate local_refine(const Candidate& c, const TestbenchSpec& tb, const Mlg& g,
                       const EvaluatorMap& models, const SpecSet& specs,
                       const SearchConfig& cfg) {
    std::vector<Dim> dims = search_dims(tb);
    cfg.validate(static_cast<int>(dims.size()));

    Candidate out = c;
    Assignment specs_now = evaluate_system(tb, out.params);
    double loss_now = penalty_loss(specs_now, specs, cfg.lambda);
    out.oracle_specs = specs_now;
    out.feasible_oracle = all_constraints_met(specs_now, specs);
    if (cfg.oracle_budget == 0) return out;

    // surrogate gradient magnitudes pick the parameters worth refining
    std::map<std::string, Assignment> spec_grads;
    Assignment pred = compose_evaluate_grad(g, tb, models, out.params, spec_grads);
    Assignment dldp = spec_grads.at(specs.objective().name);
    for (const auto& e : specs.constraints()) {
        double v = constraint_violation(e, pred.at(e.name));
        if (v <= 0.0) continue;
        double scale = std::max(std::abs(e.target), 1e-9);
        double outer = 2.0 * cfg.lambda * v *
                       (e.dir == SpecEntry::Direction::GreaterEq ? -1.0 : 1.0) / scale;
        for (const auto& [k, gval] : spec_grads.at(e.name)) dldp[k] += outer * gval;
    }
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& d : dims) {
        auto it = dldp.find(d.name);
        double mag = it != dldp.end() ? std::abs(it->second * (d.upper - d.lower)) : 0.0;
        ranked.emplace_back(-mag, d.name); // descending magnitude, lexicographic ties
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<Dim> active;
    for (int i = 0; i < cfg.prune_keep_m; ++i)
        for (const auto& d : dims)
            if (d.name == ranked[static_cast<std::size_t>(i)].second) active.push_back(d);
    std::sort(active.begin(), active.end(),
              [](const Dim& a, const Dim& b) { return a.name < b.name; });

    std::map<std::string, double> delta;
    for (const auto& d : active) {
        double dd = 0.1 * (d.upper - d.lower);
        if (d.grid) dd = std::max(*d.grid, std::round(dd / *d.grid) * *d.grid);
        delta[d.name] = dd;
    }

    int used = 0, steps = 0;
    while (used < cfg.oracle_budget) {
        bool improved = false;
        for (const auto& d : active) {
            if (used >= cfg.oracle_budget) break;
            for (double dir : {1.0, -1.0}) {
                if (used >= cfg.oracle_budget) break;
                double moved = snap(d, out.params.at(d.name) + dir * delta.at(d.name));
                if (moved == out.params.at(d.name)) continue;
                Assignment q = out.params;
                q[d.name] = moved;
                Assignment qs = evaluate_system(tb, q);
                ++used;
                double ql = penalty_loss(qs, specs, cfg.lambda);
                if (ql < loss_now) { // incumbent only ever improves
                    out.params = std::move(q);
                    specs_now = std::move(qs);
                    loss_now = ql;
                    improved = true;
                    ++steps;
                    break;
                }
            }
        }
        if (!improved) {
            bool can_shrink = false;
            for (const auto& d : active) {
                double floor_d = d.grid ? *d.grid : 1e-6 * (d.upper - d.lower);
                if (delta.at(d.name) > floor_d) {
                    delta[d.name] = std::max(floor_d, 0.5 * delta.at(d.name));
                    can_shrink = true;
                }
            }
            if (!can_shrink) break; // converged before the budget ran out
        }
    }

    out.oracle_specs = specs_now;
    out.feasible_oracle = all_constraints_met(specs_now, specs);
    out.iterations = c.iterations + steps;
    return out;
}

std::vector<Candidate> rank_candidates(std::vector<Candidate> cs, const SpecSet& specs) {
    for (const auto& c : cs)
        if (!c.oracle_specs)
            throw MissingOracleSpecs("rank_candidates requires oracle-verified specs");
    const std::string obj = specs.objective().name;
    std::stable_sort(cs.begin(), cs.end(), [&](const Candidate& a, const Candidate& b) {
        bool fa = all_constraints_met(*a.oracle_specs, specs);
        bool fb = all_constraints_met(*b.oracle_specs, specs);
        if (fa != fb) return fa;
        return a.oracle_specs->at(obj) < b.oracle_specs->at(obj);
    });
    return cs;
}

const FeasibilityCell& FeasibilityMap::cell(int b, double r) const {
    for (const auto& c : cells)
        if (c.bits == b && c.rate == r) return c;
    throw OutOfBounds("no sweep cell for the requested bits/rate");
}

namespace {

// the reference bench's per-cell spec set: rate target follows the cell and
// the resolution target tracks the bit count (half an LSB of slack)
SpecSet cell_specs(const SpecSet& base, int bits, double rate) {
    SpecSet s = base;
    for (auto& e : s.entries) {
        if (e.name == "f_s_max") e.target = rate;
        if (e.name == "ENOB") e.target = static_cast<double>(bits) - 0.5;
    }
    return s;
}

} // namespace

FeasibilityMap feasibility_sweep(const TestbenchSpec& tb, const std::vector<int>& bits,
                                 const std::vector<double>& rates,
                                 const SearchConfig& cfg, const TrainHyper& hyper,
                                 int samples_per_bits) {
    if (bits.empty() || rates.empty())
        throw OutOfBounds("sweep needs non-empty bits and rate ranges");
    FeasibilityMap fm;
    fm.bits = bits;
    fm.rates = rates;
    std::sort(fm.bits.begin(), fm.bits.end());
    std::sort(fm.rates.begin(), fm.rates.end());

    std::vector<Assignment> witness_pool; // oracle-feasible params, any cell
    int per_module = std::max(32, samples_per_bits / std::max(1, static_cast<int>(tb.modules.size())));

    for (int n : fm.bits) {
        TestbenchSpec tb_n = tb;
        tb_n.configs["n"] = static_cast<double>(n);
        tb_n.configs["f_s"] = 1.0; // metrics scale linearly in f_s; see below
        Mlg g = build_graph(tb_n);

        // one surrogate set per bit count, shared across all rates: every
        // constraint metric is rate-independent and power scales linearly
        std::map<std::string, SurrogateModel> models;
        std::map<std::string, ModelEvaluator> wraps;
        EvaluatorMap evals;
        for (const auto& mod : tb_n.modules) {
            TrainHyper h = hyper;
            h.seed = derive_seed(hyper.seed, fnv1a(mod.id), static_cast<std::uint64_t>(n));
            Dataset ds = sample_module_dataset(tb_n, mod.id, Sampler::LatinHypercube,
                                               per_module, derive_seed(h.seed, 0x647321ULL));
            models.emplace(mod.id, train(ds, {32, 32}, h));
        }
        for (const auto& mod : tb_n.modules) {
            wraps.emplace(mod.id, ModelEvaluator(models.at(mod.id),
                                                 formula_set(mod.formula_id).reads()));
            evals[mod.id] = &wraps.at(mod.id);
        }

        for (double r : fm.rates) {
            TestbenchSpec tb_cell = tb_n;
            tb_cell.configs["f_s"] = r;
            SpecSet specs = cell_specs(tb.spec_targets, n, r);

            FeasibilityCell cell;
            cell.bits = n;
            cell.rate = r;

            auto consider = [&](const Assignment& p) {
                Assignment s = evaluate_system(tb_cell, p);
                if (!all_constraints_met(s, specs)) return false;
                double power = s.at(specs.objective().name);
                if (!cell.feasible || power < *cell.min_power) {
                    cell.min_power = power;
                    cell.witness = p;
                }
                cell.feasible = true;
                return true;
            };

            for (const auto& w : witness_pool) consider(w);

            SearchConfig cell_cfg = cfg;
            cell_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(n),
                                        fnv1a(format_real(r)));
            auto cands = global_search(g, tb_n, evals, specs, cell_cfg);
            for (const auto& c : cands)
                if (consider(c.params)) witness_pool.push_back(c.params);

            fm.cells.push_back(std::move(cell));
        }

        // downward propagation: a witness at a higher rate also certifies
        // every lower rate (the rate constraint only tightens upward)
        std::size_t row = fm.cells.size() - fm.rates.size();
        for (std::size_t i = fm.rates.size(); i-- > 1;) {
            const FeasibilityCell& hi = fm.cells[row + i];
            FeasibilityCell& lo = fm.cells[row + i - 1];
            if (hi.feasible && !lo.feasible) {
                TestbenchSpec tb_cell = tb_n;
                tb_cell.configs["f_s"] = lo.rate;
                Assignment s = evaluate_system(tb_cell, hi.witness);
                lo.feasible = true;
                lo.min_power = s.at(tb.spec_targets.objective().name);
                lo.witness = hi.witness;
            }
        }
    }

    // final pass: any witness found anywhere may certify a still-infeasible
    // cell (a higher-bit witness often satisfies the looser resolution target
    // of a lower bit count); every claim is re-verified by the oracle under
    // the cell's own configuration
    for (auto& cell : fm.cells) {
        if (cell.feasible) continue;
        TestbenchSpec tb_cell = tb;
        tb_cell.configs["n"] = static_cast<double>(cell.bits);
        tb_cell.configs["f_s"] = cell.rate;
        SpecSet specs = cell_specs(tb.spec_targets, cell.bits, cell.rate);
        for (const auto& w : witness_pool) {
            Assignment s = evaluate_system(tb_cell, w);
            if (!all_constraints_met(s, specs)) continue;
            double power = s.at(specs.objective().name);
            if (!cell.feasible || power < *cell.min_power) {
                cell.min_power = power;
                cell.witness = w;
            }
            cell.feasible = true;
        }
    }
    return fm;
}

std::string serialize_feasibility(const FeasibilityMap& fm) {
    std::ostringstream os;
    os << "bits:1\trate:GS/s\tfeasible:1\tmin_power:mW\n";
    for (const auto& c : fm.cells) {
        os << c.bits << '\t' << format_real(c.rate) << '\t' << (c.feasible ? 1 : 0)
           << '\t' << (c.min_power ? format_real(*c.min_power) : std::string("-"))
           << '\n';
    }
    return os.str();
}

} // namespace ampse
