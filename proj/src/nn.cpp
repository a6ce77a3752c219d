#include "ampse/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ampse {

Mlp Mlp::init(const std::vector<int>& widths, std::uint64_t seed,
              const std::vector<Eigen::MatrixXd>* masks) {
    if (widths.size() < 2) throw ShapeError("network needs input and output layers");
    Mlp net;
    net.widths = widths;
    Rng rng(derive_seed(seed, 0x696e6974ULL)); // "init"
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        Eigen::MatrixXd w(widths[l + 1], widths[l]);
        for (int r = 0; r < w.rows(); ++r) {
            // masked rows scale by their effective (unmasked) fan-in, so
            // sparse connectivity starts with the same activation variance
            // as a dense layer
            double fan_in = static_cast<double>(widths[l]);
            if (masks) {
                double live = (*masks)[l].row(r).sum();
                if (live > 0.0) fan_in = live;
            }
            double scale = 1.0 / std::sqrt(fan_in);
            for (int c = 0; c < w.cols(); ++c) w(r, c) = scale * rng.normal();
        }
        net.W.push_back(std::move(w));
        net.b.push_back(Eigen::VectorXd::Zero(widths[l + 1]));
    }
    if (masks) {
        if (masks->size() != net.W.size())
            throw ShapeError("mask count does not match layer count");
        for (std::size_t l = 0; l < net.W.size(); ++l)
            if ((*masks)[l].rows() != net.W[l].rows() || (*masks)[l].cols() != net.W[l].cols())
                throw ShapeError("mask shape mismatch at layer " + std::to_string(l));
        net.masks = *masks;
        net.apply_masks();
    }
    return net;
}

void Mlp::apply_masks() {
    if (masks.empty()) return;
    for (std::size_t l = 0; l < W.size(); ++l) W[l] = W[l].cwiseProduct(masks[l]);
}

std::vector<Eigen::VectorXd> Mlp::forward_cached(const Eigen::VectorXd& x) const {
    std::vector<Eigen::VectorXd> a;
    a.reserve(W.size() + 1);
    a.push_back(x);
    for (std::size_t l = 0; l < W.size(); ++l) {
        Eigen::VectorXd z = W[l] * a.back() + b[l];
        if (l + 1 < W.size()) z = z.array().tanh();
        a.push_back(std::move(z));
    }
    return a;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
    Eigen::VectorXd a = x;
    for (std::size_t l = 0; l < W.size(); ++l) {
        a = W[l] * a + b[l];
        if (l + 1 < W.size()) a = a.array().tanh();
    }
    return a;
}

Eigen::MatrixXd Mlp::input_jacobian(const Eigen::VectorXd& x) const {
    Eigen::VectorXd a = x;
    Eigen::MatrixXd J = Eigen::MatrixXd::Identity(x.size(), x.size());
    for (std::size_t l = 0; l < W.size(); ++l) {
        J = W[l] * J;
        a = W[l] * a + b[l];
        if (l + 1 < W.size()) {
            a = a.array().tanh();
            Eigen::ArrayXd d = 1.0 - a.array().square();
            J = d.matrix().asDiagonal() * J;
        }
    }
    return J;
}

void Adam::step(std::vector<Eigen::MatrixXd*> ws, std::vector<Eigen::VectorXd*> bs,
                const std::vector<Eigen::MatrixXd>& gw,
                const std::vector<Eigen::VectorXd>& gb) {
    if (mW_.empty()) {
        for (auto* w : ws) {
            mW_.push_back(Eigen::MatrixXd::Zero(w->rows(), w->cols()));
            vW_.push_back(Eigen::MatrixXd::Zero(w->rows(), w->cols()));
        }
        for (auto* b : bs) {
            mb_.push_back(Eigen::VectorXd::Zero(b->size()));
            vb_.push_back(Eigen::VectorXd::Zero(b->size()));
        }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < ws.size(); ++i) {
        Eigen::MatrixXd g = gw[i];
        if (wd_ > 0.0) g += wd_ * (*ws[i]);
        mW_[i] = beta1_ * mW_[i] + (1.0 - beta1_) * g;
        vW_[i] = beta2_ * vW_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        *ws[i] -= (lr_ / bc1) *
                  mW_[i].cwiseQuotient(((vW_[i] / bc2).cwiseSqrt().array() + eps_).matrix());
    }
    for (std::size_t i = 0; i < bs.size(); ++i) {
        Eigen::VectorXd g = gb[i];
        mb_[i] = beta1_ * mb_[i] + (1.0 - beta1_) * g;
        vb_[i] = beta2_ * vb_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        *bs[i] -= (lr_ / bc1) *
                  mb_[i].cwiseQuotient(((vb_[i] / bc2).cwiseSqrt().array() + eps_).matrix());
    }
}

double mse_loss(const Mlp& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                const Eigen::MatrixXd* weights) {
    if (X.rows() == 0) return 0.0;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        Eigen::VectorXd e = net.forward(X.row(i).transpose()) - Y.row(i).transpose();
        if (weights) e = e.cwiseProduct(weights->row(i).transpose());
        acc += e.squaredNorm();
    }
    return acc / static_cast<double>(X.rows() * Y.cols());
}

namespace {

// flat view of all trainable parameters, masked entries included (they stay
// exactly zero because their gradients are zeroed, so every L-BFGS history
// vector lives in the unmasked subspace)
Eigen::VectorXd pack_params(const Mlp& net) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < net.W.size(); ++l)
        n += net.W[l].size() + net.b[l].size();
    Eigen::VectorXd x(n);
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        x.segment(at, net.W[l].size()) =
            Eigen::Map<const Eigen::VectorXd>(net.W[l].data(), net.W[l].size());
        at += net.W[l].size();
        x.segment(at, net.b[l].size()) = net.b[l];
        at += net.b[l].size();
    }
    return x;
}

void unpack_params(Mlp& net, const Eigen::VectorXd& x) {
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        Eigen::Map<Eigen::VectorXd>(net.W[l].data(), net.W[l].size()) =
            x.segment(at, net.W[l].size());
        at += net.W[l].size();
        net.b[l] = x.segment(at, net.b[l].size());
        at += net.b[l].size();
    }
}

// full-batch loss and gradient (gradient masked where the net is masked)
double loss_and_grad(Mlp& net, const Eigen::VectorXd& x, const Eigen::MatrixXd& Xt,
                     const Eigen::MatrixXd& Yt, const Eigen::MatrixXd* wt,
                     Eigen::VectorXd& grad) {
    unpack_params(net, x);
    const std::size_t n_layers = net.W.size();
    std::vector<Eigen::MatrixXd> gw(n_layers);
    std::vector<Eigen::VectorXd> gb(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        gw[l] = Eigen::MatrixXd::Zero(net.W[l].rows(), net.W[l].cols());
        gb[l] = Eigen::VectorXd::Zero(net.b[l].size());
    }
    double scale = 1.0 / static_cast<double>(Xt.rows() * Yt.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < Xt.rows(); ++i) {
        auto a = net.forward_cached(Xt.row(i).transpose());
        Eigen::VectorXd e = a.back() - Yt.row(i).transpose();
        if (wt) e = e.cwiseProduct(wt->row(i).transpose());
        loss += scale * e.squaredNorm();
        Eigen::VectorXd delta = 2.0 * scale * e;
        if (wt) delta = delta.cwiseProduct(wt->row(i).transpose());
        for (std::size_t l = n_layers; l-- > 0;) {
            gw[l] += delta * a[l].transpose();
            gb[l] += delta;
            if (l > 0)
                delta = (net.W[l].transpose() * delta)
                            .cwiseProduct((1.0 - a[l].array().square()).matrix());
        }
    }
    if (net.masked())
        for (std::size_t l = 0; l < n_layers; ++l)
            gw[l] = gw[l].cwiseProduct(net.masks[l]);
    grad.resize(x.size());
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        grad.segment(at, gw[l].size()) =
            Eigen::Map<const Eigen::VectorXd>(gw[l].data(), gw[l].size());
        at += gw[l].size();
        grad.segment(at, gb[l].size()) = gb[l];
        at += gb[l].size();
    }
    return loss;
}

// L-BFGS (two-loop recursion, history 10) with Armijo backtracking; the
// validation set drives best-checkpoint selection and early stopping, the
// same contract as the stochastic path
Mlp train_lbfgs(Mlp net, const Eigen::MatrixXd& Xt, const Eigen::MatrixXd& Yt,
                const Eigen::MatrixXd& Xv, const Eigen::MatrixXd& Yv,
                const Eigen::MatrixXd* wt, const Eigen::MatrixXd* wv,
                const TrainHyper& hyper, std::vector<TrainLogEntry>& log) {
    const int hist = 10;
    Eigen::VectorXd x = pack_params(net), g;
    double f = loss_and_grad(net, x, Xt, Yt, wt, g);
    Mlp best = net;
    double best_val = Yv.rows() > 0 ? mse_loss(net, Xv, Yv, wv)
                                    : mse_loss(net, Xt, Yt, wt);
    int since_best = 0;
    std::vector<Eigen::VectorXd> s_hist, y_hist;
    std::vector<double> rho;
    for (int it = 0; it < hyper.epochs; ++it) {
        // two-loop recursion for d = -H*g
        Eigen::VectorXd q = g;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t j = s_hist.size(); j-- > 0;) {
            alpha[j] = rho[j] * s_hist[j].dot(q);
            q -= alpha[j] * y_hist[j];
        }
        if (!s_hist.empty()) {
            const Eigen::VectorXd& yl = y_hist.back();
            q *= s_hist.back().dot(yl) / yl.squaredNorm();
        }
        for (std::size_t j = 0; j < s_hist.size(); ++j) {
            double beta = rho[j] * y_hist[j].dot(q);
            q += (alpha[j] - beta) * s_hist[j];
        }
        Eigen::VectorXd d = -q;
        double gd = g.dot(d);
        if (gd >= 0.0) { // not a descent direction: restart from steepest
            s_hist.clear(); y_hist.clear(); rho.clear();
            d = -g;
            gd = -g.squaredNorm();
        }
        double step = s_hist.empty() ? std::min(1.0, 1.0 / std::max(1e-12, g.norm()))
                                     : 1.0;
        double f_new = f;
        Eigen::VectorXd x_new = x, g_new = g;
        bool ok = false;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = x + step * d;
            f_new = loss_and_grad(net, x_new, Xt, Yt, wt, g_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * gd) { ok = true; break; }
            step *= 0.5;
        }
        if (!ok) break; // line search exhausted: converged to precision
        Eigen::VectorXd s = x_new - x, yv = g_new - g;
        double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(yv);
            rho.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > hist) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho.erase(rho.begin());
            }
        }
        x = x_new; g = g_new;
        double prev = f;
        f = f_new;
        if (!std::isfinite(f))
            throw DivergedError("training loss became non-finite at iteration " +
                                std::to_string(it));
        double val_loss = Yv.rows() > 0 ? mse_loss(net, Xv, Yv, wv) : f;
        log.push_back({it, f, val_loss});
        if (val_loss < best_val) {
            best_val = val_loss;
            unpack_params(net, x);
            best = net;
            since_best = 0;
        } else if (hyper.patience > 0 && ++since_best >= hyper.patience) {
            break;
        }
        if (prev - f <= 1e-15 * std::max(1.0, std::abs(prev))) break; // stalled
    }
    return best;
}

} // namespace

Mlp train_mlp(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
              const std::vector<int>& hidden, const TrainHyper& hyper,
              const std::vector<Eigen::MatrixXd>* masks,
              std::vector<TrainLogEntry>& log,
              const Eigen::MatrixXd* weights) {
    if (X.rows() == 0) throw EmptyDataset("no training samples");
    if (X.rows() != Y.rows()) throw ShapeError("input/target row mismatch");
    if (weights && (weights->rows() != Y.rows() || weights->cols() != Y.cols()))
        throw ShapeError("loss weight shape does not match targets");

    std::vector<int> widths;
    widths.push_back(static_cast<int>(X.cols()));
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(static_cast<int>(Y.cols()));
    Mlp net = Mlp::init(widths, hyper.seed, masks);
    log.clear();

    // deterministic 80/20 split
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(X.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng split_rng(derive_seed(hyper.seed, 0x73706c69ULL)); // "spli"
    split_rng.shuffle(idx);
    Eigen::Index n_val = X.rows() >= 5 ? X.rows() / 5 : 0;
    Eigen::Index n_train = X.rows() - n_val;
    Eigen::MatrixXd Xt(n_train, X.cols()), Yt(n_train, Y.cols());
    Eigen::MatrixXd Xv(n_val, X.cols()), Yv(n_val, Y.cols());
    Eigen::MatrixXd Wt, Wv;
    if (weights) {
        Wt.resize(n_train, Y.cols());
        Wv.resize(n_val, Y.cols());
    }
    for (Eigen::Index i = 0; i < n_train; ++i) {
        Xt.row(i) = X.row(idx[static_cast<std::size_t>(i)]);
        Yt.row(i) = Y.row(idx[static_cast<std::size_t>(i)]);
        if (weights) Wt.row(i) = weights->row(idx[static_cast<std::size_t>(i)]);
    }
    for (Eigen::Index i = 0; i < n_val; ++i) {
        Xv.row(i) = X.row(idx[static_cast<std::size_t>(n_train + i)]);
        Yv.row(i) = Y.row(idx[static_cast<std::size_t>(n_train + i)]);
        if (weights) Wv.row(i) = weights->row(idx[static_cast<std::size_t>(n_train + i)]);
    }
    const Eigen::MatrixXd* wt = weights ? &Wt : nullptr;
    const Eigen::MatrixXd* wv = weights ? &Wv : nullptr;

    if (hyper.solver == "lbfgs")
        return train_lbfgs(net, Xt, Yt, Xv, Yv, wt, wv, hyper, log);
    if (hyper.solver != "adam")
        throw ShapeError("unknown solver '" + hyper.solver + "'");

    Adam opt(hyper.lr, hyper.weight_decay);
    Mlp best = net;
    double best_val = n_val > 0 ? mse_loss(net, Xv, Yv, wv) : mse_loss(net, Xt, Yt, wt);
    int since_best = 0;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

    const std::size_t n_layers = net.W.size();
    std::vector<Eigen::MatrixXd> gw(n_layers);
    std::vector<Eigen::VectorXd> gb(n_layers);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        if (hyper.lr_decay != 1.0 && hyper.epochs > 1)
            opt.set_lr(hyper.lr * std::pow(hyper.lr_decay,
                                           static_cast<double>(epoch) /
                                               (hyper.epochs - 1)));
        Rng erng(derive_seed(hyper.seed, 0x65706f63ULL, static_cast<std::uint64_t>(epoch)));
        erng.shuffle(order);
        int batch = std::max(1, hyper.batch);
        Eigen::Index done = 0;
        while (done < n_train) {
            Eigen::Index bs = std::min<Eigen::Index>(batch, n_train - done);
            for (std::size_t l = 0; l < n_layers; ++l) {
                gw[l] = Eigen::MatrixXd::Zero(net.W[l].rows(), net.W[l].cols());
                gb[l] = Eigen::VectorXd::Zero(net.b[l].size());
            }
            double scale = 1.0 / static_cast<double>(bs * Y.cols());
            for (Eigen::Index k = 0; k < bs; ++k) {
                Eigen::Index i = order[static_cast<std::size_t>(done + k)];
                auto a = net.forward_cached(Xt.row(i).transpose());
                Eigen::VectorXd delta = 2.0 * scale * (a.back() - Yt.row(i).transpose());
                if (weights)
                    delta = delta.cwiseProduct(
                        Wt.row(i).transpose().cwiseAbs2());
                for (std::size_t l = n_layers; l-- > 0;) {
                    gw[l] += delta * a[l].transpose();
                    gb[l] += delta;
                    if (l > 0) {
                        Eigen::VectorXd up = net.W[l].transpose() * delta;
                        delta = up.cwiseProduct(
                            (1.0 - a[l].array().square()).matrix());
                    }
                }
            }
            std::vector<Eigen::MatrixXd*> ws;
            std::vector<Eigen::VectorXd*> bsp;
            for (std::size_t l = 0; l < n_layers; ++l) {
                ws.push_back(&net.W[l]);
                bsp.push_back(&net.b[l]);
            }
            opt.step(ws, bsp, gw, gb);
            net.apply_masks();
            done += bs;
        }
        double train_loss = mse_loss(net, Xt, Yt, wt);
        double val_loss = n_val > 0 ? mse_loss(net, Xv, Yv, wv) : train_loss;
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            throw DivergedError("training loss became non-finite at epoch " +
                                std::to_string(epoch));
        log.push_back({epoch, train_loss, val_loss});
        if (val_loss < best_val) {
            best_val = val_loss;
            best = net;
            since_best = 0;
        } else if (hyper.patience > 0 && ++since_best >= hyper.patience) {
            break;
        }
    }
    return best;
}

} // namespace ampse
