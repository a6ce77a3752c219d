#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ampse/textio.hpp"
#include "ampse/transfer.hpp"

#include <cmath>

using namespace ampse;

namespace {

TestbenchSpec staged(Stage s) {
    TestbenchSpec tb = load_testbench("sar6");
    tb.perturbation.stage = s;
    return tb;
}

Dataset cmp_data(Stage s, int n, std::uint64_t seed) {
    return sample_module_dataset(staged(s), "comparator", Sampler::LatinHypercube, n,
                                 seed);
}

SurrogateModel schematic_base(std::uint64_t seed) {
    Dataset ds = cmp_data(Stage::Schematic, 400, derive_seed(seed, 1));
    TrainHyper h;
    h.lr = 3e-3;
    h.epochs = 2000;
    h.patience = 500;
    h.seed = seed;
    return train(ds, {32, 32}, h);
}

double aggregate_nrmse(const RegressionModel& m, const Dataset& holdout) {
    return evaluate_model(m, holdout).at("aggregate");
}

} // namespace

TEST_CASE("fresh adapters reproduce the base exactly") {
    SurrogateModel base = schematic_base(11);
    TlModel tl = attach_adapters(base, Stage::Layout);
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        Eigen::VectorXd x(2);
        x << rng.uniform(1.0, 32.0), rng.uniform(0.05, 2.0);
        CHECK((tl.predict_vec(x) - base.predict_vec(x)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((tl.jacobian_vec(x) - base.jacobian_vec(x)).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(attach_adapters(tl, Stage::Silicon), NestedAdapter);
}

TEST_CASE("adapter Jacobian matches central differences after training") {
    SurrogateModel base = schematic_base(7);
    TlModel tl = attach_adapters(base, Stage::Layout);
    TrainHyper h;
    h.lr = 3e-2;
    h.epochs = 200;
    h.seed = 2;
    tl = train_adapters(tl, cmp_data(Stage::Layout, 40, 21), h);
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        Eigen::VectorXd x(2);
        x << rng.uniform(2.0, 31.0), rng.uniform(0.1, 1.9);
        Eigen::MatrixXd J = tl.jacobian_vec(x);
        Eigen::MatrixXd Jfd(J.rows(), 2);
        for (int j = 0; j < 2; ++j) {
            double step = 1e-5 * (j == 0 ? 31.0 : 1.95);
            Eigen::VectorXd a = x, b = x;
            a(j) += step;
            b(j) -= step;
            Jfd.col(j) = (tl.predict_vec(a) - tl.predict_vec(b)) / (2.0 * step);
        }
        REQUIRE((J - Jfd).norm() <= 1e-4 * Jfd.norm() + 1e-10);
    }
}

TEST_CASE("zero epochs leave the model unchanged; bad data shapes are refused") {
    SurrogateModel base = schematic_base(3);
    TlModel tl = attach_adapters(base, Stage::Layout);
    TrainHyper h;
    h.epochs = 0;
    TlModel same = train_adapters(tl, cmp_data(Stage::Layout, 40, 8), h);
    CHECK(same.A_in == tl.A_in);
    CHECK(same.A_out == tl.A_out);
    CHECK(same.b_in == tl.b_in);
    CHECK(same.b_out == tl.b_out);

    Dataset wrong = cmp_data(Stage::Layout, 10, 8);
    wrong.input_names[0] = "nope";
    h.epochs = 10;
    CHECK_THROWS_AS(train_adapters(tl, wrong, h), ShapeError);
}

TEST_CASE("schematic-stage adapter data keeps the model near the base") {
    SurrogateModel base = schematic_base(13);
    TlModel tl = attach_adapters(base, Stage::Layout);
    TrainHyper h;
    h.lr = 3e-2;
    h.epochs = 300;
    h.seed = 4;
    TlModel trained = train_adapters(tl, cmp_data(Stage::Schematic, 40, 17), h);
    Dataset holdout = cmp_data(Stage::Schematic, 300, 99);
    double base_err = aggregate_nrmse(base, holdout);
    double tl_err = aggregate_nrmse(trained, holdout);
    CHECK(tl_err <= base_err + 0.01); // within 1% NRMSE of the base
    // base weights bit-identical
    CHECK(trained.base.weights_hash() == base.weights_hash());
}

TEST_CASE("40 layout samples via adapters rival 400-sample retraining") {
    SurrogateModel base = schematic_base(23);
    TlModel tl = attach_adapters(base, Stage::Layout);
    TrainHyper ah;
    ah.lr = 3e-2;
    ah.epochs = 500;
    ah.seed = 6;
    TlModel adapted = train_adapters(tl, cmp_data(Stage::Layout, 40, 31), ah);
    CHECK(adapted.base.weights_hash() == base.weights_hash());

    TrainHyper rh;
    rh.epochs = 800;
    rh.seed = 6;
    SurrogateModel retrained = train(cmp_data(Stage::Layout, 400, 41), {16, 16}, rh);

    Dataset holdout = cmp_data(Stage::Layout, 300, 77);
    double tl_err = aggregate_nrmse(adapted, holdout);
    double full_err = aggregate_nrmse(retrained, holdout);
    CHECK(tl_err <= 1.5 * full_err);
}

TEST_CASE("warm start beats training from scratch on small layout datasets") {
    SurrogateModel base = schematic_base(29);
    double tl_mean = 0.0, scratch_mean = 0.0;
    const int kSeeds = 5;
    Dataset holdout = cmp_data(Stage::Layout, 300, 123);
    for (int s = 0; s < kSeeds; ++s) {
        Dataset small = cmp_data(Stage::Layout, 80, derive_seed(200, s));
        TrainHyper ah;
        ah.lr = 3e-2;
        ah.epochs = 500;
        ah.seed = static_cast<std::uint64_t>(s);
        TlModel adapted = train_adapters(attach_adapters(base, Stage::Layout), small, ah);
        TrainHyper sh;
        sh.epochs = 800;
        sh.seed = static_cast<std::uint64_t>(s);
        SurrogateModel scratch = train(small, {16, 16}, sh);
        tl_mean += aggregate_nrmse(adapted, holdout);
        scratch_mean += aggregate_nrmse(scratch, holdout);
    }
    CHECK(tl_mean / kSeeds <= scratch_mean / kSeeds);
}

TEST_CASE("silicon retraining of layout adapters improves silicon error") {
    SurrogateModel base = schematic_base(31);
    TrainHyper ah;
    ah.lr = 3e-2;
    ah.epochs = 500;
    Dataset holdout = cmp_data(Stage::Silicon, 300, 321);
    double layout_mean = 0.0, chained_mean = 0.0;
    const int kSeeds = 3;
    for (int s = 0; s < kSeeds; ++s) {
        ah.seed = static_cast<std::uint64_t>(s);
        TlModel layout = train_adapters(attach_adapters(base, Stage::Layout),
                                        cmp_data(Stage::Layout, 60, derive_seed(300, s)),
                                        ah);
        TlModel chained = layout;
        chained.stage = Stage::Silicon;
        chained = train_adapters(chained,
                                 cmp_data(Stage::Silicon, 60, derive_seed(400, s)), ah);
        CHECK(chained.base.weights_hash() == base.weights_hash());
        layout_mean += aggregate_nrmse(layout, holdout);
        chained_mean += aggregate_nrmse(chained, holdout);
    }
    CHECK(chained_mean / kSeeds <= layout_mean / kSeeds);
}

TEST_CASE("absurd adapter learning rate diverges") {
    SurrogateModel base = schematic_base(37);
    TlModel tl = attach_adapters(base, Stage::Layout);
    TrainHyper h;
    h.lr = 1e200;
    h.epochs = 50;
    CHECK_THROWS_AS(train_adapters(tl, cmp_data(Stage::Layout, 40, 51), h), DivergedError);
}
