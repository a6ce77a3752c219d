#pragma once

#include "ampse/cepa.hpp"
#include "ampse/config.hpp"
#include "ampse/package.hpp"
#include "ampse/search.hpp"

#include <iosfwd>
#include <string>

namespace ampse {

/// Which pipeline stages a CLI subcommand activates. Later stages imply
/// their in-memory inputs (the driver trains models before searching).
struct PipelineSteps {
    bool gen_data = false;
    bool cepa = false;
    bool train = false;
    bool search = false;
    bool refine = false;
    bool sweep = false;
    bool verify = false;
};

/// Executes the selected stages in order, persisting every artifact under
/// cfg.out_dir (atomic write-then-rename). Returns a process exit code:
/// 0 on success, 3 on a stage failure (a stage-tagged diagnostic is written
/// to `log` and completed artifacts are preserved).
int run_pipeline(const PipelineConfig& cfg, const PipelineSteps& steps,
                 std::ostream& log);

/// Number of workers requested via the AMPSE_WORKERS environment variable
/// (defaults to 1; results never depend on it — all sub-seeds are
/// counter-derived per point/module/start).
int worker_count();

/// Ranked candidate table (tab-separated, unit-annotated header).
std::string serialize_candidates(const std::vector<Candidate>& cs,
                                 const TestbenchSpec& tb);
std::vector<Candidate> parse_candidates(const std::string& text,
                                        const TestbenchSpec& tb);

/// Bits-versus-rate feasibility chart as a standalone SVG.
std::string render_feasibility_svg(const FeasibilityMap& fm);

} // namespace ampse
