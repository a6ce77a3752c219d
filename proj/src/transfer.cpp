#include "ampse/transfer.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <numeric>

namespace ampse {

namespace {

// base prediction in raw output units for a normalized input, routed
// through the input adapter
Eigen::VectorXd base_raw(const TlModel& m, const Eigen::VectorXd& xn) {
    Eigen::VectorXd v = m.base.net.forward(m.A_in * xn + m.b_in)
                            .cwiseProduct(m.base.out_std) +
                        m.base.out_mean;
    for (std::size_t i = 0; i < m.base.outputs.size(); ++i) {
        Eigen::Index c = static_cast<Eigen::Index>(i);
        v(c) = scale_inv(m.base.scale_of(i), v(c));
    }
    return v;
}

} // namespace

Eigen::VectorXd TlModel::predict_vec(const Eigen::VectorXd& raw_x) const {
    Eigen::VectorXd xn =
        (raw_x - base.in_mean).cwiseQuotient(base.in_std);
    // the output adapter acts on raw base predictions: stage shifts are
    // affine in raw units, which an adapter on log-space outputs cannot fit
    return A_out * base_raw(*this, xn) + b_out;
}

Eigen::MatrixXd TlModel::jacobian_vec(const Eigen::VectorXd& raw_x) const {
    Eigen::VectorXd xn =
        (raw_x - base.in_mean).cwiseQuotient(base.in_std);
    Eigen::MatrixXd Jn = base.net.input_jacobian(A_in * xn + b_in);
    Eigen::MatrixXd Jb = base.out_std.asDiagonal() * Jn * A_in *
                         base.in_std.cwiseInverse().asDiagonal();
    if (!base.out_scale.empty()) {
        Eigen::VectorXd w = base_raw(*this, xn);
        for (std::size_t i = 0; i < base.outputs.size(); ++i) {
            Eigen::Index c = static_cast<Eigen::Index>(i);
            Jb.row(c) *= scale_dinv(base.scale_of(i), w(c));
        }
    }
    return A_out * Jb;
}

TlModel attach_adapters(const SurrogateModel& base, Stage stage) {
    TlModel m;
    m.base = base;
    Eigen::Index d = static_cast<Eigen::Index>(base.inputs.size());
    Eigen::Index out = static_cast<Eigen::Index>(base.outputs.size());
    m.A_in = Eigen::MatrixXd::Identity(d, d);
    m.b_in = Eigen::VectorXd::Zero(d);
    m.A_out = Eigen::MatrixXd::Identity(out, out);
    m.b_out = Eigen::VectorXd::Zero(out);
    m.stage = stage;
    return m;
}

TlModel attach_adapters(const TlModel&, Stage) {
    throw NestedAdapter("adapters are already attached; they do not stack");
}

namespace {

// mean squared residual with each output scaled by `s` so that raw units
// of very different magnitude contribute comparably
double adapter_loss(const TlModel& m, const Eigen::MatrixXd& Xn,
                    const Eigen::MatrixXd& Yraw, const Eigen::VectorXd& s) {
    if (Xn.rows() == 0) return 0.0;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < Xn.rows(); ++i) {
        Eigen::VectorXd y =
            m.A_out * base_raw(m, Xn.row(i).transpose()) + m.b_out;
        acc += (y - Yraw.row(i).transpose()).cwiseQuotient(s).squaredNorm();
    }
    return acc / static_cast<double>(Xn.rows() * Yraw.cols());
}

} // namespace

TlModel train_adapters(const TlModel& m, const Dataset& ds_small,
                       const TrainHyper& hyper) {
    if (ds_small.size() == 0) throw EmptyDataset("no adapter samples");
    if (ds_small.input_names != m.base.inputs ||
        ds_small.target_names != m.base.outputs)
        throw ShapeError("adapter dataset columns do not match the base model");

    // inputs normalized with the BASE statistics; targets stay in raw units
    // (the output adapter lives there) with a per-output loss scale
    Eigen::MatrixXd Xn = ds_small.inputs, Yn = ds_small.targets;
    Xn = (Xn.rowwise() - m.base.in_mean.transpose()).array().rowwise() /
         m.base.in_std.transpose().array();
    Eigen::VectorXd s(Yn.cols());
    for (Eigen::Index c = 0; c < Yn.cols(); ++c) {
        double mean = Yn.col(c).mean();
        double var = (Yn.col(c).array() - mean).square().sum() /
                     std::max<Eigen::Index>(1, Yn.rows() - 1);
        s(c) = std::sqrt(var);
        if (!(s(c) > 1e-12)) s(c) = std::max(1e-12, std::abs(mean));
    }

    // deterministic split/shuffle scheme shared with train_mlp
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(Xn.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng split_rng(derive_seed(hyper.seed, 0x73706c69ULL));
    split_rng.shuffle(idx);
    Eigen::Index n_val = Xn.rows() >= 5 ? Xn.rows() / 5 : 0;
    Eigen::Index n_train = Xn.rows() - n_val;
    Eigen::MatrixXd Xt(n_train, Xn.cols()), Yt(n_train, Yn.cols());
    Eigen::MatrixXd Xv(n_val, Xn.cols()), Yv(n_val, Yn.cols());
    for (Eigen::Index i = 0; i < n_train; ++i) {
        Xt.row(i) = Xn.row(idx[static_cast<std::size_t>(i)]);
        Yt.row(i) = Yn.row(idx[static_cast<std::size_t>(i)]);
    }
    for (Eigen::Index i = 0; i < n_val; ++i) {
        Xv.row(i) = Xn.row(idx[static_cast<std::size_t>(n_train + i)]);
        Yv.row(i) = Yn.row(idx[static_cast<std::size_t>(n_train + i)]);
    }

    TlModel cur = m;
    cur.stage = m.stage;

    // closed-form warm start: with A_in fixed, the optimal output adapter is
    // a (ridge) least-squares fit of the raw targets on the base's raw
    // predictions; the gradient loop below only refines from there
    if (hyper.epochs > 0 && n_train > 0) {
        Eigen::Index mo = Yt.cols();
        Eigen::MatrixXd Wb(n_train, mo);
        for (Eigen::Index i = 0; i < n_train; ++i)
            Wb.row(i) = base_raw(cur, Xt.row(i).transpose()).transpose();
        // standardize features so one ridge weight fits all output scales
        Eigen::VectorXd fmu = Wb.colwise().mean();
        Eigen::VectorXd fsd(mo);
        for (Eigen::Index c = 0; c < mo; ++c) {
            double var = (Wb.col(c).array() - fmu(c)).square().sum() /
                         std::max<Eigen::Index>(1, n_train - 1);
            fsd(c) = std::sqrt(var);
            if (!(fsd(c) > 1e-12)) fsd(c) = 1.0;
        }
        Eigen::MatrixXd F(n_train, mo + 1);
        F.leftCols(mo) = (Wb.rowwise() - fmu.transpose()).array().rowwise() /
                         fsd.transpose().array();
        F.col(mo).setOnes();
        Eigen::MatrixXd G = F.transpose() * F;
        G.diagonal().array() += 1e-6 * static_cast<double>(n_train);
        Eigen::MatrixXd B = G.ldlt().solve(
            F.transpose() * (Yt.array().rowwise() / s.transpose().array()).matrix());
        // fold the standardization back into raw-space adapter slots
        cur.A_out = s.asDiagonal() * B.topRows(mo).transpose() *
                    fsd.cwiseInverse().asDiagonal();
        cur.b_out = s.cwiseProduct(B.row(mo).transpose()) -
                    cur.A_out * fmu;
    }

    Adam opt(hyper.lr, hyper.weight_decay);
    TlModel best = cur;
    double best_val = n_val > 0 ? adapter_loss(cur, Xv, Yv, s)
                                : adapter_loss(cur, Xt, Yt, s);
    int since_best = 0;
    cur.adapter_log.clear();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

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
            Eigen::MatrixXd gAin = Eigen::MatrixXd::Zero(cur.A_in.rows(), cur.A_in.cols());
            Eigen::MatrixXd gAout = Eigen::MatrixXd::Zero(cur.A_out.rows(), cur.A_out.cols());
            Eigen::VectorXd gbin = Eigen::VectorXd::Zero(cur.b_in.size());
            Eigen::VectorXd gbout = Eigen::VectorXd::Zero(cur.b_out.size());
            double scale = 1.0 / static_cast<double>(bs * Yn.cols());
            for (Eigen::Index k = 0; k < bs; ++k) {
                Eigen::Index i = order[static_cast<std::size_t>(done + k)];
                Eigen::VectorXd xn = Xt.row(i).transpose();
                Eigen::VectorXd z = cur.A_in * xn + cur.b_in;
                Eigen::VectorXd w = base_raw(cur, xn);
                Eigen::VectorXd y = cur.A_out * w + cur.b_out;
                Eigen::VectorXd delta =
                    (2.0 * scale) *
                    (y - Yt.row(i).transpose()).cwiseQuotient(s.cwiseProduct(s));
                gAout += delta * w.transpose();
                gbout += delta;
                // back through the inverse output transform and the
                // denormalization
                Eigen::VectorXd dw = cur.A_out.transpose() * delta;
                for (std::size_t o = 0; o < cur.base.outputs.size(); ++o) {
                    Eigen::Index c = static_cast<Eigen::Index>(o);
                    dw(c) *= scale_dinv(cur.base.scale_of(o), w(c));
                }
                Eigen::VectorXd du = dw.cwiseProduct(cur.base.out_std);
                Eigen::VectorXd dz = cur.base.net.input_jacobian(z).transpose() * du;
                gAin += dz * xn.transpose();
                gbin += dz;
            }
            opt.step({&cur.A_in, &cur.A_out}, {&cur.b_in, &cur.b_out},
                     {gAin, gAout}, {gbin, gbout});
            done += bs;
        }
        double train_loss = adapter_loss(cur, Xt, Yt, s);
        double val_loss = n_val > 0 ? adapter_loss(cur, Xv, Yv, s) : train_loss;
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            throw DivergedError("adapter loss became non-finite at epoch " +
                                std::to_string(epoch));
        cur.adapter_log.push_back({epoch, train_loss, val_loss});
        if (val_loss < best_val) {
            best_val = val_loss;
            best = cur;
            best.adapter_log = cur.adapter_log;
            since_best = 0;
        } else if (hyper.patience > 0 && ++since_best >= hyper.patience) {
            break;
        }
    }
    best.adapter_log = cur.adapter_log;
    return best;
}

} // namespace ampse
