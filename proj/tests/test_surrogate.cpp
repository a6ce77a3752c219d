#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ampse/surrogate.hpp"
#include "ampse/textio.hpp"

#include <algorithm>
#include <cmath>

using namespace ampse;

namespace {

std::vector<PortDecl> box2() {
    return {{"x1", "1", -1.0, 1.0}, {"x2", "1", 0.0, 4.0}};
}

Assignment linear_fn(const Assignment& p) {
    return {{"y1", 2.0 * p.at("x1") - p.at("x2") + 0.5},
            {"y2", -0.5 * p.at("x1") + 3.0 * p.at("x2")}};
}

Dataset linear_dataset(int n, std::uint64_t seed) {
    return sample_dataset(box2(), {{"y1", "1", 0, 0}, {"y2", "1", 0, 0}},
                          Sampler::LatinHypercube, n, linear_fn, seed);
}

// central finite differences with h = 1e-4 * range, the independent oracle
Eigen::MatrixXd fd_jacobian(const RegressionModel& m, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& range) {
    Eigen::Index d = x.size();
    Eigen::Index mo = static_cast<Eigen::Index>(m.output_names().size());
    Eigen::MatrixXd J(mo, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        double h = 1e-4 * range(j);
        Eigen::VectorXd a = x, b = x;
        a(j) += h;
        b(j) -= h;
        J.col(j) = (m.predict_vec(a) - m.predict_vec(b)) / (2.0 * h);
    }
    return J;
}

} // namespace

TEST_CASE("latin hypercube puts one sample in each bin") {
    std::vector<PortDecl> dims{{"p", "1", 0.0, 8.0}};
    Dataset ds = sample_dataset(dims, {{"y", "1", 0, 0}}, Sampler::LatinHypercube, 8,
                                [](const Assignment& a) {
                                    return Assignment{{"y", a.at("p")}};
                                },
                                3);
    std::vector<bool> bin(8, false);
    for (Eigen::Index i = 0; i < 8; ++i) {
        int b = static_cast<int>(ds.inputs(i, 0)); // unit-width bins on [0,8]
        REQUIRE(b >= 0);
        REQUIRE(b < 8);
        CHECK_FALSE(bin[static_cast<std::size_t>(b)]);
        bin[static_cast<std::size_t>(b)] = true;
    }
}

TEST_CASE("always-true filter changes nothing; always-false starves") {
    auto id_eval = [](const Assignment& a) { return Assignment{{"y", a.at("p")}}; };
    std::vector<PortDecl> dims{{"p", "1", 0.0, 8.0}};
    Dataset plain = sample_dataset(dims, {}, Sampler::Uniform, 16, id_eval, 9);
    Dataset filtered = sample_dataset(dims, {}, Sampler::Uniform, 16, id_eval, 9,
                                      [](const Assignment&) { return true; });
    CHECK(plain.inputs == filtered.inputs);
    CHECK_THROWS_AS(sample_dataset(dims, {}, Sampler::Uniform, 16, id_eval, 9,
                                   [](const Assignment&) { return false; }),
                    FilterStarvation);
}

TEST_CASE("normalization round-trips to 1e-12") {
    Dataset ds = linear_dataset(64, 5);
    Eigen::MatrixXd xn = ds.normalized_inputs();
    Eigen::MatrixXd back =
        (xn.array().rowwise() * ds.in_std.transpose().array()).rowwise() +
        ds.in_mean.transpose().array();
    CHECK((back - ds.inputs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("linear targets are learned to sub-percent NRMSE") {
    Dataset ds = linear_dataset(128, 7);
    TrainHyper h;
    h.epochs = 3000;
    h.lr = 3e-3;
    h.patience = 3000;
    h.seed = 1;
    SurrogateModel m = train(ds, {16}, h);
    Dataset holdout = linear_dataset(200, 99);
    auto nrmse = evaluate_model(m, holdout);
    CHECK(nrmse.at("y1") < 0.01);
    CHECK(nrmse.at("y2") < 0.01);

    // Jacobian of the trained model recovers the generator's coefficients
    Eigen::VectorXd x(2);
    x << 0.2, 1.5;
    Eigen::MatrixXd J = m.jacobian_vec(x);
    CHECK(J(0, 0) == doctest::Approx(2.0).epsilon(0.05));
    CHECK(J(0, 1) == doctest::Approx(-1.0).epsilon(0.05));
    CHECK(J(1, 0) == doctest::Approx(-0.5).epsilon(0.05));
    CHECK(J(1, 1) == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("zero epochs returns the initialized model with stats") {
    Dataset ds = linear_dataset(32, 2);
    TrainHyper h;
    h.epochs = 0;
    h.seed = 4;
    SurrogateModel m = train(ds, {8}, h);
    CHECK(m.in_mean == ds.in_mean);
    CHECK(m.training_log.empty());
    Assignment a = m.predict({{"x1", 0.1}, {"x2", 2.0}});
    Assignment b = m.predict({{"x1", 0.1}, {"x2", 2.0}});
    CHECK(a == b); // purity
}

TEST_CASE("absurd learning rate diverges") {
    Dataset ds = linear_dataset(64, 3);
    TrainHyper h;
    h.lr = 1e200; // weights overflow the output in a handful of steps
    h.epochs = 50;
    CHECK_THROWS_AS(train(ds, {8}, h), DivergedError);
}

TEST_CASE("training is deterministic per seed") {
    Dataset ds = linear_dataset(64, 11);
    TrainHyper h;
    h.epochs = 100;
    h.seed = 42;
    SurrogateModel a = train(ds, {8, 8}, h);
    SurrogateModel b = train(ds, {8, 8}, h);
    CHECK(a.weights_hash() == b.weights_hash());
    h.seed = 43;
    SurrogateModel c = train(ds, {8, 8}, h);
    CHECK(a.weights_hash() != c.weights_hash());
}

TEST_CASE("reverse-mode Jacobian matches central differences") {
    Dataset ds = linear_dataset(96, 13);
    TrainHyper h;
    h.epochs = 200;
    h.seed = 8;
    SurrogateModel m = train(ds, {16, 16}, h);
    Eigen::VectorXd range(2);
    range << 2.0, 4.0;
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        Eigen::VectorXd x(2);
        x << rng.uniform(-1.0, 1.0), rng.uniform(0.0, 4.0);
        Eigen::MatrixXd J = m.jacobian_vec(x);
        Eigen::MatrixXd Jfd = fd_jacobian(m, x, range);
        double rel = (J - Jfd).norm() / std::max(1e-12, Jfd.norm());
        REQUIRE(rel <= 1e-4);
    }
}

TEST_CASE("all-zero weights give a zero Jacobian") {
    Dataset ds = linear_dataset(32, 1);
    TrainHyper h;
    h.epochs = 0;
    SurrogateModel m = train(ds, {8}, h);
    for (auto& W : m.net.W) W.setZero();
    Eigen::VectorXd x(2);
    x << 0.0, 1.0;
    CHECK(m.jacobian_vec(x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("evaluate_model has the NRMSE fixpoints") {
    Dataset holdout = linear_dataset(100, 23);

    struct Exact final : RegressionModel {
        std::vector<std::string> in{"x1", "x2"}, out{"y1", "y2"};
        const std::vector<std::string>& input_names() const override { return in; }
        const std::vector<std::string>& output_names() const override { return out; }
        Eigen::VectorXd predict_vec(const Eigen::VectorXd& x) const override {
            Eigen::VectorXd y(2);
            y << 2.0 * x(0) - x(1) + 0.5, -0.5 * x(0) + 3.0 * x(1);
            return y;
        }
        Eigen::MatrixXd jacobian_vec(const Eigen::VectorXd&) const override {
            return Eigen::MatrixXd::Zero(2, 2);
        }
    } exact;
    auto perfect = evaluate_model(exact, holdout);
    CHECK(perfect.at("y1") < 1e-12);
    CHECK(perfect.at("y2") < 1e-12);

    struct Mean final : RegressionModel {
        std::vector<std::string> in{"x1", "x2"}, out{"y1", "y2"};
        Eigen::VectorXd mean;
        const std::vector<std::string>& input_names() const override { return in; }
        const std::vector<std::string>& output_names() const override { return out; }
        Eigen::VectorXd predict_vec(const Eigen::VectorXd&) const override { return mean; }
        Eigen::MatrixXd jacobian_vec(const Eigen::VectorXd&) const override {
            return Eigen::MatrixXd::Zero(2, 2);
        }
    } mean_model;
    mean_model.mean = holdout.out_mean;
    auto unit = evaluate_model(mean_model, holdout);
    // RMSE of the mean predictor equals the (population) std; stats use the
    // sample std, so the ratio is sqrt((n-1)/n)
    double expect = std::sqrt(99.0 / 100.0);
    CHECK(unit.at("y1") == doctest::Approx(expect).epsilon(1e-9));
    CHECK(unit.at("y2") == doctest::Approx(expect).epsilon(1e-9));

    Dataset empty = holdout;
    empty.inputs.resize(0, 2);
    empty.targets.resize(0, 2);
    CHECK_THROWS_AS(evaluate_model(exact, empty), EmptyDataset);
}

TEST_CASE("masked training keeps masked weights at exactly zero") {
    TestbenchSpec tb = parse_testbench(R"(ampse-tb/1
testbench pair
system sum
module a toy_bowl
param a p 1 0 8
metric a y 1
module b toy_bowl
param b p 1 0 8
metric b y 1
stage schematic
seed 1
layout 0.15 0.1 2
silicon 0.05 0.01
spec total min 0 1
)");
    Mlg g = build_graph(tb);
    ConnectivityMask cm = connectivity_mask(g, tb, {8, 8}, {{"a", 4}, {"b", 4}});
    // dataset with matching column orders: inputs a.p, b.p; output total
    std::vector<PortDecl> dims{{"a.p", "1", 0.0, 8.0}, {"b.p", "1", 0.0, 8.0}};
    auto eval = [&tb](const Assignment& p) { return evaluate_system(tb, p); };
    Dataset ds = sample_dataset(dims, system_reduction("sum").spec_decls(),
                                Sampler::LatinHypercube, 64, eval, 31);
    TrainHyper h;
    h.epochs = 150;
    h.seed = 5;
    SurrogateModel m = train(ds, {8, 8}, h, cm);
    CHECK(m.model_kind == "cci");
    for (std::size_t l = 0; l < m.net.W.size(); ++l)
        for (int r = 0; r < m.net.W[l].rows(); ++r)
            for (int c = 0; c < m.net.W[l].cols(); ++c)
                if (cm.layer_masks[l](r, c) == 0.0) REQUIRE(m.net.W[l](r, c) == 0.0);

    // all-ones mask trains weight-for-weight like the unmasked net
    ConnectivityMask ones = cm;
    for (auto& mm : ones.layer_masks) mm.setOnes();
    SurrogateModel masked = train(ds, {8, 8}, h, ones);
    SurrogateModel plain = train(ds, {8, 8}, h);
    CHECK(masked.weights_hash() == plain.weights_hash());
}

TEST_CASE("composed surrogate gradients match finite differences") {
    TestbenchSpec tb = load_testbench("sar6");
    Mlg g = build_graph(tb);

    std::map<std::string, SurrogateModel> models;
    TrainHyper h;
    h.epochs = 600;
    h.seed = 3;
    for (const auto& mod : tb.modules) {
        Dataset ds = sample_module_dataset(tb, mod.id, Sampler::LatinHypercube, 300,
                                           derive_seed(3, fnv1a(mod.id)));
        models.emplace(mod.id, train(ds, {16, 16}, h));
    }
    std::map<std::string, ModelEvaluator> wraps;
    EvaluatorMap evals;
    for (const auto& mod : tb.modules) {
        wraps.emplace(mod.id, ModelEvaluator(models.at(mod.id),
                                             formula_set(mod.formula_id).reads()));
        evals[mod.id] = &wraps.at(mod.id);
    }

    Rng rng(77);
    for (int i = 0; i < 10; ++i) {
        Assignment p;
        std::map<std::string, double> range;
        for (const auto& m : tb.modules)
            for (const auto& d : m.space.params) {
                // stay inside the box so central differences do not clip
                double lo = d.lower + 0.05 * (d.upper - d.lower);
                double hi = d.upper - 0.05 * (d.upper - d.lower);
                p[m.id + "." + d.name] = rng.uniform(lo, hi);
                range[m.id + "." + d.name] = d.upper - d.lower;
            }
        std::map<std::string, Assignment> grads;
        Assignment specs = compose_evaluate_grad(g, tb, evals, p, grads);
        Assignment plain = compose_evaluate(g, tb, evals, p);
        for (const auto& [k, v] : specs) REQUIRE(v == doctest::Approx(plain.at(k)));

        for (const auto& [spec, grad] : grads) {
            double num = 0.0, den = 0.0;
            for (const auto& [name, r] : range) {
                double hstep = 1e-5 * r; // small: 1000/T is sharply curved

                Assignment a = p, b = p;
                a[name] += hstep;
                b[name] -= hstep;
                double fd = (compose_evaluate(g, tb, evals, a).at(spec) -
                             compose_evaluate(g, tb, evals, b).at(spec)) /
                            (2.0 * hstep);
                double an = grad.count(name) ? grad.at(name) : 0.0;
                num += (an - fd) * (an - fd);
                den += fd * fd;
            }
            REQUIRE(std::sqrt(num) <= 1e-4 * std::sqrt(den) + 1e-8);
        }
    }
}
