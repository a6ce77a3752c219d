#pragma once

#include "ampse/surrogate.hpp"

namespace ampse {

/// A frozen base surrogate with trainable affine adapters: A_in/b_in act on
/// the normalized input, A_out/b_out on the raw (denormalized) base
/// prediction, so y = A_out * base(x) + b_out with identity adapters being
/// the base itself. Stage shifts are affine in raw units, which the output
/// adapter captures exactly; base weights and normalization statistics are
/// never touched.
struct TlModel final : public RegressionModel {
    SurrogateModel base;
    Eigen::MatrixXd A_in, A_out; // D x D and M x M
    Eigen::VectorXd b_in, b_out;
    Stage stage = Stage::Layout;
    std::vector<TrainLogEntry> adapter_log;

    const std::vector<std::string>& input_names() const override { return base.inputs; }
    const std::vector<std::string>& output_names() const override { return base.outputs; }
    Eigen::VectorXd predict_vec(const Eigen::VectorXd& raw_x) const override;
    Eigen::MatrixXd jacobian_vec(const Eigen::VectorXd& raw_x) const override;
};

/// Identity-initialized adapters: the fresh TlModel reproduces the base
/// exactly. Attaching on top of an existing TlModel is refused.
TlModel attach_adapters(const SurrogateModel& base, Stage stage);
TlModel attach_adapters(const TlModel&, Stage); // throws NestedAdapter

/// Trains only the four adapter slots on `ds_small`: a closed-form
/// least-squares warm start for the output adapter, then gradient refinement
/// of all four. Returns the best-validation checkpoint. Base weights are
/// bit-identical before and after.
TlModel train_adapters(const TlModel& m, const Dataset& ds_small,
                       const TrainHyper& hyper);

} // namespace ampse
