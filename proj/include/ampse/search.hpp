#pragma once

#include "ampse/mlg.hpp"
#include "ampse/surrogate.hpp"

#include <optional>

namespace ampse {

struct SearchConfig {
    int n_starts = 20;
    int max_iters = 200;
    double step = 0.05;    // initial step length in the normalized unit box
    double lambda = 10.0;  // quadratic hinge weight per normalized constraint
    int keep_top_k = 10;
    int oracle_budget = 200;  // oracle evaluations granted to local_refine
    int prune_keep_m = 3;     // parameters kept active during refinement
    std::uint64_t seed = 0;

    void validate(int dims) const;
};

struct Candidate {
    Assignment params; // qualified, on grid where gridded
    Assignment predicted_specs;
    std::optional<Assignment> oracle_specs;
    double loss = 0.0; // penalty loss under predicted specs
    bool feasible_pred = false;
    std::optional<bool> feasible_oracle;
    int start_index = 0;
    int iterations = 0;
};

struct FeasibilityCell {
    int bits = 0;
    double rate = 0.0; // GS/s
    bool feasible = false;
    std::optional<double> min_power; // mW, oracle-verified
    Assignment witness;              // the verifying parameter point
};

struct FeasibilityMap {
    std::vector<int> bits;
    std::vector<double> rates;
    std::vector<FeasibilityCell> cells; // bits-major, rates ascending

    const FeasibilityCell& cell(int bits, double rate) const;
};

/// Signed, target-normalized constraint slack: positive means violated.
double constraint_violation(const SpecEntry& e, double value);
/// objective + lambda * sum of squared hinge violations.
double penalty_loss(const Assignment& spec_values, const SpecSet& specs, double lambda);
bool all_constraints_met(const Assignment& spec_values, const SpecSet& specs);

/// Multi-start projected gradient descent through the composed surrogates on
/// the penalty loss; Latin-hypercube starts, grid snap + neighborhood polish,
/// results sorted (feasible first, then ascending objective), top-k kept.
std::vector<Candidate> global_search(const Mlg& g, const TestbenchSpec& tb,
                                     const EvaluatorMap& models, const SpecSet& specs,
                                     const SearchConfig& cfg);

/// Oracle-in-the-loop coordinate descent on the prune_keep_m parameters with
/// the largest surrogate gradient magnitude; the incumbent's oracle loss
/// never increases; stops when oracle_budget is exhausted.
Candidate local_refine(const Candidate& c, const TestbenchSpec& tb, const Mlg& g,
                       const EvaluatorMap& models, const SpecSet& specs,
                       const SearchConfig& cfg);

/// Stable lexicographic order: oracle-feasible first, then ascending oracle
/// objective. Every candidate must carry oracle_specs.
std::vector<Candidate> rank_candidates(std::vector<Candidate> cs, const SpecSet& specs);

/// Bits-versus-rate sweep: per-bits surrogates trained once on a shared
/// sample budget, reduced search per cell, oracle verification of every
/// verdict, and downward witness propagation so the frontier is monotone.
FeasibilityMap feasibility_sweep(const TestbenchSpec& tb, const std::vector<int>& bits,
                                 const std::vector<double>& rates,
                                 const SearchConfig& cfg, const TrainHyper& hyper,
                                 int samples_per_bits = 500);

std::string serialize_feasibility(const FeasibilityMap& fm);

} // namespace ampse
