#pragma once

#include "ampse/transfer.hpp"

#include <map>
#include <optional>

namespace ampse {

/// Self-describing "ampse-model/1" package: per-module surrogates (plus
/// optional transfer-adapted variants), the originating testbench identity,
/// and an integrity hash over the whole body.
struct ModelPackage {
    std::string testbench_id;
    std::uint64_t testbench_hash = 0;
    Stage stage = Stage::Schematic;
    std::uint64_t seed = 0; // provenance
    std::map<std::string, SurrogateModel> models;
    std::map<std::string, TlModel> tl_models; // keyed by module, overrides base

    /// Set by import_package when a local testbench hash differs from the
    /// package's: the models must be routed through transfer before search.
    bool tl_required = false;

    /// The model to use for a module (the TL variant when present).
    const RegressionModel& model_for(const std::string& module_id) const;
};

std::string serialize_package(const ModelPackage& pkg);
ModelPackage parse_package(const std::string& text);

void export_package(const ModelPackage& pkg, const std::string& path);
ModelPackage import_package(const std::string& path,
                            const TestbenchSpec* local_tb = nullptr);

} // namespace ampse
