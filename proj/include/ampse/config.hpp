#pragma once

#include "ampse/nn.hpp"
#include "ampse/oracle.hpp"
#include "ampse/search.hpp"
#include "ampse/surrogate.hpp"

#include <string>
#include <vector>

namespace ampse {

/// Strict `key = value` configuration for the whole pipeline. Every field
/// has a default; unknown keys are rejected; parse -> serialize -> parse is
/// a fixpoint.
struct PipelineConfig {
    // oracle / stage
    std::string testbench = "sar6"; // path or built-in name
    Stage stage = Stage::Schematic;
    std::uint64_t stage_seed = 1;
    std::uint64_t seed = 0; // global seed, split per stage of the pipeline
    std::string out_dir = "out";

    // sampling + per-module training
    Sampler sampler = Sampler::LatinHypercube;
    int samples_per_module = 400;
    std::vector<int> hidden = {32, 32};
    double lr = 3e-3;
    double lr_decay = 1.0;
    int epochs = 2000;
    int batch = 32;
    int patience = 400;
    double weight_decay = 0.0;
    bool system_cci = false; // also train a masked system-level regressor
    int system_samples = 400;

    // early assertion
    bool cepa_enabled = false;
    double cepa_window_fraction = 0.25;
    double cepa_pass_above = 0.9;
    double cepa_fail_below = 0.1;
    int cepa_samples = 400;
    double cepa_horizon_ps = 150.0;
    int cepa_full_samples = 64;

    // transfer learning (used when stage != schematic)
    bool tl_enabled = false;
    int tl_samples = 40;
    double tl_lr = 3e-2;
    int tl_epochs = 500;

    // search / refinement
    int n_starts = 20;
    int max_iters = 150;
    double step = 0.05;
    double lambda = 10.0;
    int keep_top_k = 10;
    int oracle_budget = 200;
    int prune_keep_m = 3;

    // feasibility sweep
    bool sweep_enabled = false;
    std::vector<int> sweep_bits = {4, 5, 6, 7, 8, 9, 10};
    std::vector<double> sweep_rates = {0.5, 1.0, 2.0, 4.0, 8.0};
    int sweep_samples = 500;

    TrainHyper train_hyper() const;
    SearchConfig search_config() const;
};

PipelineConfig parse_config(const std::string& path);
PipelineConfig parse_config_text(const std::string& text);
std::string serialize_config(const PipelineConfig& cfg);

} // namespace ampse
