#pragma once

#include "ampse/errors.hpp"
#include "ampse/rng.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace ampse {

/// Feedforward net with tanh hidden layers and a linear output layer.
/// Smooth everywhere, so the search can differentiate through it.
struct Mlp {
    std::vector<int> widths;            // input, hidden..., output
    std::vector<Eigen::MatrixXd> W;     // W[l]: widths[l+1] x widths[l]
    std::vector<Eigen::VectorXd> b;
    std::vector<Eigen::MatrixXd> masks; // empty, or one 0/1 matrix per W

    static Mlp init(const std::vector<int>& widths, std::uint64_t seed,
                    const std::vector<Eigen::MatrixXd>* masks = nullptr);

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    /// d(output)/d(input), exact reverse-mode chain product. Rows = outputs.
    Eigen::MatrixXd input_jacobian(const Eigen::VectorXd& x) const;
    /// Forward pass keeping per-layer activations (a[0] = x).
    std::vector<Eigen::VectorXd> forward_cached(const Eigen::VectorXd& x) const;

    void apply_masks();
    bool masked() const { return !masks.empty(); }
};

struct TrainLogEntry {
    int epoch;
    double train_loss;
    double val_loss;
};

struct TrainHyper {
    /// "adam" (stochastic, minibatched) or "lbfgs" (full-batch quasi-Newton
    /// with backtracking line search; `epochs` bounds its iterations and
    /// `lr`/`batch`/`lr_decay` are ignored). The quasi-Newton path converges
    /// far tighter on the small, smooth regressions used here.
    std::string solver = "adam";
    double lr = 1e-3;
    /// Geometric per-epoch schedule: the last epoch runs at lr * lr_decay.
    /// 1.0 (default) keeps the rate constant.
    double lr_decay = 1.0;
    int epochs = 2000;
    int batch = 32;
    double weight_decay = 0.0;
    int patience = 200; // early stop on stagnant validation loss; <=0 disables
    std::uint64_t seed = 0;
};

/// Adam on a flat list of (matrix, vector) parameter slots.
class Adam {
public:
    Adam(double lr, double weight_decay) : lr_(lr), wd_(weight_decay) {}

    void set_lr(double lr) { lr_ = lr; }

    void step(std::vector<Eigen::MatrixXd*> ws, std::vector<Eigen::VectorXd*> bs,
              const std::vector<Eigen::MatrixXd>& gw,
              const std::vector<Eigen::VectorXd>& gb);

private:
    double lr_, wd_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int t_ = 0;
    std::vector<Eigen::MatrixXd> mW_, vW_;
    std::vector<Eigen::VectorXd> mb_, vb_;
};

/// Minimizes MSE of net(X_i) against Y_i (rows are samples, already
/// normalized). Deterministic 80/20 train/validation split by seed; returns
/// the best-validation checkpoint. Masked weights stay exactly zero after
/// every update. When `weights` (same shape as Y) is given, each residual is
/// multiplied by its weight before squaring, in both the loss and the
/// validation criterion — used to optimize raw-unit error while regressing
/// in a transformed target domain.
Mlp train_mlp(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
              const std::vector<int>& hidden, const TrainHyper& hyper,
              const std::vector<Eigen::MatrixXd>* masks,
              std::vector<TrainLogEntry>& log,
              const Eigen::MatrixXd* weights = nullptr);

double mse_loss(const Mlp& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                const Eigen::MatrixXd* weights = nullptr);

} // namespace ampse
