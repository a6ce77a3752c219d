#include "ampse/surrogate.hpp"

#include "ampse/textio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ampse {

Sampler parse_sampler(const std::string& s) {
    if (s == "uniform") return Sampler::Uniform;
    if (s == "latin_hypercube") return Sampler::LatinHypercube;
    throw ParseError("unknown sampler '" + s + "'");
}

std::string sampler_name(Sampler s) {
    return s == Sampler::Uniform ? "uniform" : "latin_hypercube";
}

OutScale parse_out_scale(const std::string& s) {
    if (s == "auto") return OutScale::Auto;
    if (s == "linear") return OutScale::Linear;
    if (s == "log") return OutScale::Log;
    if (s == "recip") return OutScale::Recip;
    if (s == "sq") return OutScale::Square;
    if (s == "bits") return OutScale::Bits;
    throw ParseError("unknown output scale '" + s + "'");
}

std::string out_scale_name(OutScale s) {
    switch (s) {
        case OutScale::Auto: return "auto";
        case OutScale::Linear: return "linear";
        case OutScale::Log: return "log";
        case OutScale::Recip: return "recip";
        case OutScale::Square: return "sq";
        case OutScale::Bits: return "bits";
    }
    throw ShapeError("invalid output scale");
}

namespace {
constexpr double kTwoLn2 = 2.0 * 0.693147180559945309417232121458;
// keeps positivity-requiring inverses finite when a network extrapolates
// below zero in the transformed domain
double clamp_pos(double v) { return v > 1e-12 ? v : 1e-12; }
} // namespace

double scale_fwd(OutScale s, double y) {
    switch (s) {
        case OutScale::Linear: return y;
        case OutScale::Log: return std::log(y);
        case OutScale::Recip: return 1.0 / y;
        case OutScale::Square: return y * y;
        case OutScale::Bits: return std::exp(-kTwoLn2 * y);
        case OutScale::Auto: break;
    }
    throw ShapeError("unresolved output scale");
}

double scale_inv(OutScale s, double v) {
    switch (s) {
        case OutScale::Linear: return v;
        case OutScale::Log: return std::exp(v);
        case OutScale::Recip: return 1.0 / clamp_pos(v);
        case OutScale::Square: return std::sqrt(clamp_pos(v));
        case OutScale::Bits: return -std::log(clamp_pos(v)) / kTwoLn2;
        case OutScale::Auto: break;
    }
    throw ShapeError("unresolved output scale");
}

double scale_dinv(OutScale s, double y) {
    switch (s) {
        case OutScale::Linear: return 1.0;
        case OutScale::Log: return y;        // d exp(v)/dv = y
        case OutScale::Recip: return -y * y; // d (1/v)/dv = -y^2
        case OutScale::Square: return 0.5 / y;
        case OutScale::Bits: return -std::exp(kTwoLn2 * y) / kTwoLn2;
        case OutScale::Auto: break;
    }
    throw ShapeError("unresolved output scale");
}

void Dataset::compute_norm_stats() {
    auto stats = [](const Eigen::MatrixXd& m, Eigen::VectorXd& mean, Eigen::VectorXd& std) {
        mean = m.colwise().mean();
        std.resize(m.cols());
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double var = (m.col(c).array() - mean(c)).square().sum() /
                         std::max<Eigen::Index>(1, m.rows() - 1);
            std(c) = std::sqrt(var);
            if (!(std(c) > 1e-12)) std(c) = 1.0; // constant column
        }
    };
    stats(inputs, in_mean, in_std);
    stats(targets, out_mean, out_std);
}

Eigen::MatrixXd Dataset::normalized_inputs() const {
    return (inputs.rowwise() - in_mean.transpose()).array().rowwise() /
           in_std.transpose().array();
}

Eigen::MatrixXd Dataset::normalized_targets() const {
    return (targets.rowwise() - out_mean.transpose()).array().rowwise() /
           out_std.transpose().array();
}

Dataset Dataset::head(Eigen::Index n) const {
    Dataset d = *this;
    n = std::min(n, inputs.rows());
    d.inputs = inputs.topRows(n);
    d.targets = targets.topRows(n);
    d.compute_norm_stats();
    return d;
}

Dataset Dataset::tail(Eigen::Index n) const {
    Dataset d = *this;
    n = std::min(n, inputs.rows());
    d.inputs = inputs.bottomRows(n);
    d.targets = targets.bottomRows(n);
    d.compute_norm_stats();
    return d;
}

Dataset sample_dataset(const std::vector<PortDecl>& dims,
                       const std::vector<PortDecl>& target_decls, Sampler sampler,
                       int n, const PointEval& eval, std::uint64_t seed,
                       const PointFilter& filter) {
    if (n < 1) throw EmptyDataset("sample count must be at least 1");
    if (dims.empty()) throw EmptyDataset("parameter space is empty");
    const std::size_t d = dims.size();
    const long budget = 10L * n;
    long drawn = 0;

    Rng rng(derive_seed(seed, 0x73616d70ULL)); // "samp"
    std::vector<Assignment> accepted;
    accepted.reserve(static_cast<std::size_t>(n));

    auto make_point = [&](const std::vector<double>& unit) {
        Assignment p;
        for (std::size_t j = 0; j < d; ++j)
            p[dims[j].name] = dims[j].lower + unit[j] * (dims[j].upper - dims[j].lower);
        return p;
    };

    std::vector<std::vector<double>> pool; // unit-cube candidates
    if (sampler == Sampler::LatinHypercube) {
        // one sample per bin and dimension, bins permuted independently
        std::vector<std::vector<int>> perms(d, std::vector<int>(static_cast<std::size_t>(n)));
        for (std::size_t j = 0; j < d; ++j) {
            std::iota(perms[j].begin(), perms[j].end(), 0);
            rng.shuffle(perms[j]);
        }
        for (int i = 0; i < n; ++i) {
            std::vector<double> u(d);
            for (std::size_t j = 0; j < d; ++j)
                u[j] = (perms[j][static_cast<std::size_t>(i)] + rng.uniform()) / n;
            pool.push_back(std::move(u));
        }
    } else {
        for (int i = 0; i < n; ++i) {
            std::vector<double> u(d);
            for (std::size_t j = 0; j < d; ++j) u[j] = rng.uniform();
            pool.push_back(std::move(u));
        }
    }

    std::size_t next = 0;
    while (accepted.size() < static_cast<std::size_t>(n)) {
        std::vector<double> u;
        if (next < pool.size()) {
            u = pool[next++];
        } else {
            u.resize(d);
            for (std::size_t j = 0; j < d; ++j) u[j] = rng.uniform();
        }
        ++drawn;
        Assignment p = make_point(u);
        if (!filter || filter(p)) accepted.push_back(std::move(p));
        if (drawn >= budget && accepted.size() < static_cast<std::size_t>(n))
            throw FilterStarvation("draw budget of " + std::to_string(budget) +
                                   " exhausted with " + std::to_string(accepted.size()) +
                                   "/" + std::to_string(n) + " accepted points");
    }

    Dataset ds;
    for (const auto& dim : dims) {
        ds.input_names.push_back(dim.name);
        ds.input_units.push_back(dim.unit);
    }
    Assignment first = eval(accepted.front());
    if (target_decls.empty()) {
        for (const auto& [k, v] : first) {
            ds.target_names.push_back(k);
            ds.target_units.push_back("1");
            ds.target_scales.push_back("auto");
        }
    } else {
        for (const auto& t : target_decls) {
            ds.target_names.push_back(t.name);
            ds.target_units.push_back(t.unit);
            ds.target_scales.push_back(t.scale);
        }
    }
    ds.inputs.resize(n, static_cast<Eigen::Index>(d));
    ds.targets.resize(n, static_cast<Eigen::Index>(ds.target_names.size()));
    for (int i = 0; i < n; ++i) {
        const Assignment& p = accepted[static_cast<std::size_t>(i)];
        Assignment y = (i == 0) ? first : eval(p);
        for (std::size_t j = 0; j < d; ++j)
            ds.inputs(i, static_cast<Eigen::Index>(j)) = p.at(dims[j].name);
        for (std::size_t j = 0; j < ds.target_names.size(); ++j) {
            auto it = y.find(ds.target_names[j]);
            if (it == y.end())
                throw ShapeError("evaluator did not produce target '" + ds.target_names[j] + "'");
            double v = it->second;
            if (!std::isfinite(v))
                throw Error("NonFiniteMetric", "target '" + ds.target_names[j] + "' not finite");
            ds.targets(i, static_cast<Eigen::Index>(j)) = v;
        }
    }
    ds.provenance = "sampler=" + sampler_name(sampler) + " seed=" + std::to_string(seed) +
                    " n=" + std::to_string(n);
    ds.compute_norm_stats();
    return ds;
}

std::string serialize_dataset(const Dataset& ds) {
    std::ostringstream out;
    out << "# ampse-dataset/1\n";
    out << "# provenance " << ds.provenance << "\n";
    out << "# inputs " << ds.input_names.size() << " targets " << ds.target_names.size()
        << "\n";
    bool first = true;
    for (std::size_t i = 0; i < ds.input_names.size(); ++i) {
        if (!first) out << '\t';
        out << ds.input_names[i] << ':' << ds.input_units[i];
        first = false;
    }
    for (std::size_t i = 0; i < ds.target_names.size(); ++i) {
        out << '\t' << ds.target_names[i] << ':' << ds.target_units[i];
        if (i < ds.target_scales.size() && ds.target_scales[i] != "auto")
            out << ':' << ds.target_scales[i];
    }
    out << "\n";
    for (Eigen::Index r = 0; r < ds.inputs.rows(); ++r) {
        for (Eigen::Index c = 0; c < ds.inputs.cols(); ++c) {
            if (c) out << '\t';
            out << format_real(ds.inputs(r, c));
        }
        for (Eigen::Index c = 0; c < ds.targets.cols(); ++c)
            out << '\t' << format_real(ds.targets(r, c));
        out << "\n";
    }
    return out.str();
}

Dataset parse_dataset(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    Dataset ds;
    std::size_t n_in = 0, n_tgt = 0;
    std::vector<std::vector<double>> rows;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto tok = split_ws(line);
            if (tok.size() >= 2 && tok[1] == "provenance") {
                ds.provenance = line.substr(line.find("provenance") + 11);
            } else if (tok.size() == 5 && tok[1] == "inputs") {
                n_in = static_cast<std::size_t>(parse_int(tok[2], "dataset header"));
                n_tgt = static_cast<std::size_t>(parse_int(tok[4], "dataset header"));
            }
            continue;
        }
        auto cols = split_char(line, '\t');
        if (!header_done) {
            if (n_in == 0 || cols.size() != n_in + n_tgt)
                throw ParseError("dataset header/column mismatch");
            for (std::size_t i = 0; i < cols.size(); ++i) {
                auto parts = split_char(cols[i], ':');
                if (parts.size() != 2 && !(i >= n_in && parts.size() == 3))
                    throw ParseError("column header must be name:unit[:scale]");
                if (i < n_in) {
                    ds.input_names.push_back(parts[0]);
                    ds.input_units.push_back(parts[1]);
                } else {
                    ds.target_names.push_back(parts[0]);
                    ds.target_units.push_back(parts[1]);
                    ds.target_scales.push_back(parts.size() == 3 ? parts[2] : "auto");
                }
            }
            header_done = true;
            continue;
        }
        if (cols.size() != n_in + n_tgt) throw ParseError("dataset row width mismatch");
        std::vector<double> row;
        for (const auto& c : cols) row.push_back(parse_real(c, "dataset row"));
        rows.push_back(std::move(row));
    }
    if (!header_done || rows.empty()) throw EmptyDataset("dataset holds no samples");
    ds.inputs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_in));
    ds.targets.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_tgt));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < n_in; ++c)
            ds.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        for (std::size_t c = 0; c < n_tgt; ++c)
            ds.targets(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                rows[r][n_in + c];
    }
    ds.compute_norm_stats();
    return ds;
}

// ---------------------------------------------------------------------------
// RegressionModel

Eigen::VectorXd RegressionModel::to_vec(const Assignment& x) const {
    const auto& names = input_names();
    Eigen::VectorXd v(static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto it = x.find(names[i]);
        if (it == x.end()) throw MissingInput("model input '" + names[i] + "' unset");
        v(static_cast<Eigen::Index>(i)) = it->second;
    }
    return v;
}

Assignment RegressionModel::predict(const Assignment& x) const {
    Eigen::VectorXd y = predict_vec(to_vec(x));
    Assignment out;
    const auto& names = output_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        out[names[i]] = y(static_cast<Eigen::Index>(i));
    return out;
}

std::map<std::string, Assignment> RegressionModel::jacobian(const Assignment& x) const {
    Eigen::MatrixXd J = jacobian_vec(to_vec(x));
    std::map<std::string, Assignment> out;
    const auto& on = output_names();
    const auto& in = input_names();
    for (std::size_t r = 0; r < on.size(); ++r)
        for (std::size_t c = 0; c < in.size(); ++c)
            out[on[r]][in[c]] = J(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    return out;
}

Eigen::VectorXd SurrogateModel::predict_vec(const Eigen::VectorXd& raw_x) const {
    if (raw_x.size() != static_cast<Eigen::Index>(inputs.size()))
        throw ShapeError("input width mismatch");
    Eigen::VectorXd xn = (raw_x - in_mean).cwiseQuotient(in_std);
    Eigen::VectorXd y = out_mean + net.forward(xn).cwiseProduct(out_std);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        Eigen::Index c = static_cast<Eigen::Index>(i);
        y(c) = scale_inv(scale_of(i), y(c));
    }
    return y;
}

Eigen::MatrixXd SurrogateModel::jacobian_vec(const Eigen::VectorXd& raw_x) const {
    Eigen::VectorXd xn = (raw_x - in_mean).cwiseQuotient(in_std);
    Eigen::MatrixXd Jn = net.input_jacobian(xn);
    // denormalize: dv/dx = diag(out_std) * Jn * diag(1/in_std), then chain
    // through the inverse output transform: dy/dx = (dy/dv) dv/dx
    Eigen::MatrixXd J = out_std.asDiagonal() * Jn * in_std.cwiseInverse().asDiagonal();
    if (!out_scale.empty()) {
        Eigen::VectorXd y = predict_vec(raw_x);
        for (std::size_t i = 0; i < outputs.size(); ++i) {
            Eigen::Index c = static_cast<Eigen::Index>(i);
            J.row(c) *= scale_dinv(scale_of(i), y(c));
        }
    }
    return J;
}

std::uint64_t SurrogateModel::weights_hash() const {
    std::string blob;
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        const auto& W = net.W[l];
        blob.append(reinterpret_cast<const char*>(W.data()),
                    static_cast<std::size_t>(W.size()) * sizeof(double));
        const auto& b = net.b[l];
        blob.append(reinterpret_cast<const char*>(b.data()),
                    static_cast<std::size_t>(b.size()) * sizeof(double));
    }
    return fnv1a(blob);
}

SurrogateModel train(const Dataset& ds, const std::vector<int>& hidden,
                     const TrainHyper& hyper, const std::optional<ConnectivityMask>& mask) {
    SurrogateModel m;
    m.inputs = ds.input_names;
    m.input_units = ds.input_units;
    m.outputs = ds.target_names;
    m.output_units = ds.target_units;
    m.in_mean = ds.in_mean;
    m.in_std = ds.in_std;

    // each target is regressed in its declared domain; undeclared strictly
    // positive targets default to log space, where multiplicative physics
    // (powers, products, 1/sqrt laws) flattens out
    Eigen::MatrixXd T = ds.targets;
    m.out_scale.assign(static_cast<std::size_t>(T.cols()), OutScale::Linear);
    for (Eigen::Index c = 0; c < T.cols(); ++c) {
        std::size_t ci = static_cast<std::size_t>(c);
        OutScale s = ci < ds.target_scales.size()
                         ? parse_out_scale(ds.target_scales[ci])
                         : OutScale::Auto;
        double lo = T.col(c).minCoeff();
        if (s == OutScale::Auto)
            s = lo > 0.0 ? OutScale::Log : OutScale::Linear;
        // positivity-requiring domains degrade to linear on data that
        // violates them (e.g. degenerate corners of a sweep cell)
        if ((s == OutScale::Log || s == OutScale::Recip || s == OutScale::Square) &&
            !(lo > 0.0))
            s = OutScale::Linear;
        m.out_scale[ci] = s;
        if (s != OutScale::Linear)
            for (Eigen::Index r = 0; r < T.rows(); ++r) T(r, c) = scale_fwd(s, T(r, c));
    }
    m.out_mean = T.colwise().mean();
    m.out_std.resize(T.cols());
    for (Eigen::Index c = 0; c < T.cols(); ++c) {
        double var = (T.col(c).array() - m.out_mean(c)).square().sum() /
                     std::max<Eigen::Index>(1, T.rows() - 1);
        m.out_std(c) = std::sqrt(var);
        if (!(m.out_std(c) > 1e-12)) m.out_std(c) = 1.0;
    }
    Eigen::MatrixXd Tn = (T.rowwise() - m.out_mean.transpose()).array().rowwise() /
                         m.out_std.transpose().array();

    const std::vector<Eigen::MatrixXd>* masks = nullptr;
    if (mask) {
        if (mask->input_names != ds.input_names)
            throw ShapeError("connectivity mask input order does not match dataset");
        if (mask->output_names != ds.target_names)
            throw ShapeError("connectivity mask output order does not match dataset");
        masks = &mask->layer_masks;
        m.mask = mask;
        m.model_kind = "cci";
    }
    if (hyper.epochs == 0) {
        // initialized model, untouched weights, stats filled in
        std::vector<int> widths;
        widths.push_back(static_cast<int>(ds.inputs.cols()));
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        widths.push_back(static_cast<int>(ds.targets.cols()));
        m.net = Mlp::init(widths, hyper.seed, masks);
        return m;
    }
    // transformed domains distort the error metric: a residual dv in the
    // training domain is worth |dy/dv| raw units. Weighting each residual by
    // that sensitivity (times out_std/raw-std to undo normalization) makes
    // the training loss track raw-unit NRMSE while the regression itself
    // still happens in the structurally convenient domain
    Eigen::MatrixXd weights;
    bool any_nonlinear = false;
    for (OutScale s : m.out_scale)
        if (s != OutScale::Linear) any_nonlinear = true;
    if (any_nonlinear) {
        weights.resize(ds.targets.rows(), ds.targets.cols());
        for (Eigen::Index c = 0; c < ds.targets.cols(); ++c) {
            double mu = ds.targets.col(c).mean();
            double var = (ds.targets.col(c).array() - mu).square().sum() /
                         std::max<Eigen::Index>(1, ds.targets.rows() - 1);
            double sd_raw = std::sqrt(var);
            if (!(sd_raw > 1e-12)) sd_raw = 1.0;
            OutScale s = m.out_scale[static_cast<std::size_t>(c)];
            for (Eigen::Index r = 0; r < ds.targets.rows(); ++r)
                weights(r, c) = std::abs(scale_dinv(s, ds.targets(r, c))) *
                                m.out_std(c) / sd_raw;
        }
    }
    m.net = train_mlp(ds.normalized_inputs(), Tn, hidden, hyper, masks,
                      m.training_log, any_nonlinear ? &weights : nullptr);
    return m;
}

Assignment predict(const SurrogateModel& m, const Assignment& x) { return m.predict(x); }

Eigen::MatrixXd gradient(const SurrogateModel& m, const Assignment& x) {
    return m.jacobian_vec(m.to_vec(x));
}

std::map<std::string, double> evaluate_model(const RegressionModel& m,
                                             const Dataset& holdout) {
    if (holdout.size() == 0) throw EmptyDataset("holdout dataset is empty");
    if (m.input_names() != holdout.input_names ||
        m.output_names() != holdout.target_names)
        throw ShapeError("holdout columns do not match the model");
    Eigen::Index n = holdout.size();
    Eigen::Index mout = holdout.targets.cols();
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(mout);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd e =
            m.predict_vec(holdout.inputs.row(i).transpose()) - holdout.targets.row(i).transpose();
        sq += e.cwiseProduct(e);
    }
    std::map<std::string, double> nrmse;
    double agg = 0.0;
    for (Eigen::Index c = 0; c < mout; ++c) {
        double rmse = std::sqrt(sq(c) / static_cast<double>(n));
        double v = rmse / holdout.out_std(c);
        nrmse[holdout.target_names[static_cast<std::size_t>(c)]] = v;
        agg += v * v;
    }
    nrmse["aggregate"] = std::sqrt(agg / static_cast<double>(mout));
    return nrmse;
}

// ---------------------------------------------------------------------------
// ModelEvaluator

Assignment ModelEvaluator::merged(const Assignment& params, const Assignment& inputs) const {
    Assignment x = params;
    for (const auto& port : reads_) {
        auto it = inputs.find(port);
        if (it == inputs.end()) throw MissingPort("input '" + port + "' unset");
        x[port] = it->second;
    }
    return x;
}

Assignment ModelEvaluator::eval(const Assignment& params, const Assignment& inputs) const {
    return model_->predict(merged(params, inputs));
}

std::map<std::string, Assignment>
ModelEvaluator::jacobian(const Assignment& params, const Assignment& inputs) const {
    return model_->jacobian(merged(params, inputs));
}

// ---------------------------------------------------------------------------
// Oracle-backed sampling helpers

Dataset sample_module_dataset(const TestbenchSpec& tb, const std::string& module_id,
                              Sampler sampler, int n, std::uint64_t seed,
                              const PointFilter& filter) {
    const ModuleSpec& mod = tb.module(module_id);
    const FormulaSet& f = formula_set(mod.formula_id);
    std::vector<PortDecl> dims;
    for (const auto& p : mod.space.params)
        dims.push_back({p.name, p.unit, p.lower, p.upper});
    for (const auto& d : mod.interface_in)
        if (f.reads().count(d.name)) dims.push_back(d);

    std::vector<PortDecl> targets;
    std::set<std::string> seen;
    for (const auto& d : mod.interface_out)
        if (seen.insert(d.name).second) targets.push_back(d);
    for (const auto& d : mod.metrics)
        if (seen.insert(d.name).second) targets.push_back(d);

    auto eval = [&tb, &mod, &f](const Assignment& point) {
        Assignment params, in;
        for (const auto& p : mod.space.params) params[p.name] = point.at(p.name);
        for (const auto& port : f.reads()) in[port] = point.at(port);
        return evaluate_module_outputs(tb, mod.id, params, in);
    };
    Dataset ds = sample_dataset(dims, targets, sampler, n, eval, seed, filter);
    ds.provenance += " stage=" + stage_name(tb.perturbation.stage) +
                     " testbench=" + tb.id + " module=" + module_id;
    return ds;
}

Dataset sample_system_dataset(const TestbenchSpec& tb, Sampler sampler, int n,
                              std::uint64_t seed, const PointFilter& filter) {
    std::vector<PortDecl> dims;
    for (const auto& m : tb.modules)
        for (const auto& p : m.space.params)
            dims.push_back({m.id + "." + p.name, p.unit, p.lower, p.upper});
    std::sort(dims.begin(), dims.end(),
              [](const PortDecl& a, const PortDecl& b) { return a.name < b.name; });
    std::vector<PortDecl> targets = system_reduction(tb.system_id).spec_decls();
    auto eval = [&tb](const Assignment& point) { return evaluate_system(tb, point); };
    Dataset ds = sample_dataset(dims, targets, sampler, n, eval, seed, filter);
    ds.provenance += " stage=" + stage_name(tb.perturbation.stage) +
                     " testbench=" + tb.id + " module=<system>";
    return ds;
}

} // namespace ampse
