#pragma once

#include "ampse/mlg.hpp"
#include "ampse/nn.hpp"
#include "ampse/oracle.hpp"

#include <functional>
#include <optional>

namespace ampse {

enum class Sampler { Uniform, LatinHypercube };

Sampler parse_sampler(const std::string& s);
std::string sampler_name(Sampler s);

/// Regression domain of one target column; see PortDecl::scale. Auto picks
/// Log for strictly positive targets and Linear otherwise.
enum class OutScale { Auto, Linear, Log, Recip, Square, Bits };

OutScale parse_out_scale(const std::string& s);
std::string out_scale_name(OutScale s);

/// Forward transform t(y) into the training domain.
double scale_fwd(OutScale s, double y);
/// Inverse t^{-1}(v) back to raw units (positivity-requiring inverses clamp
/// v away from zero so extrapolated predictions stay finite).
double scale_inv(OutScale s, double v);
/// Chain factor dy/dv evaluated at the raw value y.
double scale_dinv(OutScale s, double y);

struct Dataset {
    std::vector<std::string> input_names, input_units;
    std::vector<std::string> target_names, target_units;
    std::vector<std::string> target_scales; // "auto" when empty
    Eigen::MatrixXd inputs;  // raw values, one sample per row
    Eigen::MatrixXd targets; // raw values
    Eigen::VectorXd in_mean, in_std, out_mean, out_std;
    std::string provenance;

    Eigen::Index size() const { return inputs.rows(); }
    void compute_norm_stats();
    Eigen::MatrixXd normalized_inputs() const;
    Eigen::MatrixXd normalized_targets() const;
    /// First n rows / remaining rows.
    Dataset head(Eigen::Index n) const;
    Dataset tail(Eigen::Index n) const;
};

using PointFilter = std::function<bool(const Assignment&)>;
using PointEval = std::function<Assignment(const Assignment&)>;

/// Draws N accepted points over `dims` and evaluates them. Latin hypercube
/// stratifies each dimension into N bins with one sample per bin; points a
/// filter rejects are replaced by fresh draws within a 10x total budget.
Dataset sample_dataset(const std::vector<PortDecl>& dims,
                       const std::vector<PortDecl>& target_decls, Sampler sampler,
                       int n, const PointEval& eval, std::uint64_t seed,
                       const PointFilter& filter = nullptr);

std::string serialize_dataset(const Dataset& ds);
Dataset parse_dataset(const std::string& text);

/// Value-and-Jacobian regression surface over named raw inputs/outputs.
class RegressionModel {
public:
    virtual ~RegressionModel() = default;
    virtual const std::vector<std::string>& input_names() const = 0;
    virtual const std::vector<std::string>& output_names() const = 0;
    virtual Eigen::VectorXd predict_vec(const Eigen::VectorXd& raw_x) const = 0;
    /// d(raw output)/d(raw input), rows = outputs.
    virtual Eigen::MatrixXd jacobian_vec(const Eigen::VectorXd& raw_x) const = 0;

    Assignment predict(const Assignment& x) const;
    std::map<std::string, Assignment> jacobian(const Assignment& x) const;

    /// Packs named inputs into the model's column order.
    Eigen::VectorXd to_vec(const Assignment& x) const;
};

struct SurrogateModel final : public RegressionModel {
    std::vector<std::string> inputs, input_units;
    std::vector<std::string> outputs, output_units;
    Mlp net;
    std::optional<ConnectivityMask> mask;
    Eigen::VectorXd in_mean, in_std, out_mean, out_std;
    /// Resolved regression domain per output (never Auto): the network is
    /// trained on scale_fwd(target) — so normalization statistics live in
    /// that domain — and predictions apply scale_inv. Declared scales come
    /// from the dataset; undeclared positive targets default to Log, whose
    /// wide dynamic range (e.g. 1/sqrt corners) is near-linear there.
    std::vector<OutScale> out_scale;
    std::vector<TrainLogEntry> training_log;
    std::string model_kind = "fully_connected"; // or "cci"

    OutScale scale_of(std::size_t i) const {
        return i < out_scale.size() ? out_scale[i] : OutScale::Linear;
    }

    const std::vector<std::string>& input_names() const override { return inputs; }
    const std::vector<std::string>& output_names() const override { return outputs; }
    Eigen::VectorXd predict_vec(const Eigen::VectorXd& raw_x) const override;
    Eigen::MatrixXd jacobian_vec(const Eigen::VectorXd& raw_x) const override;

    std::uint64_t weights_hash() const;
};

/// Trains on normalized targets, returns the best-validation checkpoint.
/// Masked variant keeps masked weights exactly zero after every step.
SurrogateModel train(const Dataset& ds, const std::vector<int>& hidden,
                     const TrainHyper& hyper,
                     const std::optional<ConnectivityMask>& mask = std::nullopt);

Assignment predict(const SurrogateModel& m, const Assignment& x);

/// M x D Jacobian of raw outputs w.r.t. raw inputs (column order =
/// m.inputs, row order = m.outputs).
Eigen::MatrixXd gradient(const SurrogateModel& m, const Assignment& x);

/// Per-target NRMSE (RMSE / target std on the holdout) plus "aggregate".
std::map<std::string, double> evaluate_model(const RegressionModel& m,
                                             const Dataset& holdout);

/// Adapts a RegressionModel to the MLG evaluation contract for one module.
class ModelEvaluator final : public ModuleEvaluator {
public:
    ModelEvaluator(const RegressionModel& model, std::set<std::string> reads)
        : model_(&model), reads_(std::move(reads)) {}
    Assignment eval(const Assignment& params, const Assignment& inputs) const override;
    std::set<std::string> reads() const override { return reads_; }
    bool differentiable() const override { return true; }
    std::map<std::string, Assignment>
    jacobian(const Assignment& params, const Assignment& inputs) const override;

private:
    Assignment merged(const Assignment& params, const Assignment& inputs) const;
    const RegressionModel* model_;
    std::set<std::string> reads_;
};

/// Module-level sampling helper: inputs are the module's parameters plus the
/// interface ports its formulas read; targets are its interface outputs and
/// metrics, evaluated by the oracle of `tb`.
Dataset sample_module_dataset(const TestbenchSpec& tb, const std::string& module_id,
                              Sampler sampler, int n, std::uint64_t seed,
                              const PointFilter& filter = nullptr);

/// System-level sampling: qualified parameters to system specs.
Dataset sample_system_dataset(const TestbenchSpec& tb, Sampler sampler, int n,
                              std::uint64_t seed, const PointFilter& filter = nullptr);

} // namespace ampse
