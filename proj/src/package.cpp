#include "ampse/package.hpp"

#include "ampse/textio.hpp"

#include <sstream>

namespace ampse {

const RegressionModel& ModelPackage::model_for(const std::string& module_id) const {
    auto tl = tl_models.find(module_id);
    if (tl != tl_models.end()) return tl->second;
    auto it = models.find(module_id);
    if (it == models.end()) throw MissingEvaluator("no model for module '" + module_id + "'");
    return it->second;
}

namespace {

void write_vector(std::ostringstream& os, const char* tag, const Eigen::VectorXd& v) {
    os << tag;
    for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << format_real(v(i));
    os << '\n';
}

void write_matrix(std::ostringstream& os, const char* tag, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        os << tag << ' ' << r;
        for (Eigen::Index c = 0; c < m.cols(); ++c) os << ' ' << format_real(m(r, c));
        os << '\n';
    }
}

void write_model_body(std::ostringstream& os, const std::string& id,
                      const SurrogateModel& m) {
    os << "model " << id << ' ' << m.model_kind << '\n';
    os << "widths";
    for (int w : m.net.widths) os << ' ' << w;
    os << '\n';
    for (std::size_t i = 0; i < m.inputs.size(); ++i)
        os << "in " << m.inputs[i] << ' ' << m.input_units[i] << ' '
           << format_real(m.in_mean(static_cast<Eigen::Index>(i))) << ' '
           << format_real(m.in_std(static_cast<Eigen::Index>(i))) << '\n';
    for (std::size_t i = 0; i < m.outputs.size(); ++i) {
        os << "out " << m.outputs[i] << ' ' << m.output_units[i] << ' '
           << format_real(m.out_mean(static_cast<Eigen::Index>(i))) << ' '
           << format_real(m.out_std(static_cast<Eigen::Index>(i)));
        if (m.scale_of(i) != OutScale::Linear) os << ' ' << out_scale_name(m.scale_of(i));
        os << '\n';
    }
    for (std::size_t l = 0; l < m.net.W.size(); ++l) {
        std::string wt = "W " + std::to_string(l);
        write_matrix(os, wt.c_str(), m.net.W[l]);
        std::string bt = "b " + std::to_string(l);
        write_vector(os, bt.c_str(), m.net.b[l]);
    }
    for (std::size_t l = 0; l < m.net.masks.size(); ++l) {
        std::string mt = "M " + std::to_string(l);
        write_matrix(os, mt.c_str(), m.net.masks[l]);
    }
    os << "endmodel\n";
}

void write_tl_body(std::ostringstream& os, const std::string& id, const TlModel& m) {
    os << "tl " << id << ' ' << stage_name(m.stage) << ' ' << hex64(m.base.weights_hash())
       << '\n';
    write_matrix(os, "Ain", m.A_in);
    write_vector(os, "bin", m.b_in);
    write_matrix(os, "Aout", m.A_out);
    write_vector(os, "bout", m.b_out);
    os << "endtl\n";
}

struct LineReader {
    std::istringstream is;
    int lineno = 0;
    explicit LineReader(const std::string& text) : is(text) {}
    bool next(std::vector<std::string>& toks) {
        std::string line;
        while (std::getline(is, line)) {
            ++lineno;
            toks = split_ws(line);
            if (!toks.empty()) return true;
        }
        return false;
    }
    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError("package line " + std::to_string(lineno) + ": " + msg);
    }
};

Eigen::VectorXd read_vector(LineReader& r, const std::vector<std::string>& toks,
                            std::size_t offset) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(toks.size() - offset));
    for (std::size_t i = offset; i < toks.size(); ++i)
        v(static_cast<Eigen::Index>(i - offset)) = parse_real(toks[i], "package value");
    (void)r;
    return v;
}

} // namespace

std::string serialize_package(const ModelPackage& pkg) {
    std::ostringstream body;
    body << "testbench " << pkg.testbench_id << ' ' << hex64(pkg.testbench_hash) << '\n';
    body << "stage " << stage_name(pkg.stage) << '\n';
    body << "seed " << pkg.seed << '\n';
    for (const auto& [id, m] : pkg.models) write_model_body(body, id, m);
    for (const auto& [id, m] : pkg.tl_models) {
        write_model_body(body, id + ".base", m.base);
        write_tl_body(body, id, m);
    }
    std::string b = body.str();
    return "ampse-model/1\nhash " + hex64(fnv1a(b)) + "\n" + b;
}

ModelPackage parse_package(const std::string& text) {
    auto first_nl = text.find('\n');
    if (first_nl == std::string::npos) throw ParseError("truncated package");
    std::string version = text.substr(0, first_nl);
    if (version != "ampse-model/1") {
        if (version.rfind("ampse-model/", 0) == 0)
            throw VersionUnsupported("unsupported package version '" + version + "'");
        throw ParseError("not a model package");
    }
    auto second_nl = text.find('\n', first_nl + 1);
    if (second_nl == std::string::npos) throw ParseError("truncated package");
    auto hash_line = split_ws(text.substr(first_nl + 1, second_nl - first_nl - 1));
    if (hash_line.size() != 2 || hash_line[0] != "hash")
        throw ParseError("missing package hash line");
    std::string body = text.substr(second_nl + 1);
    if (hex64(fnv1a(body)) != hash_line[1])
        throw HashMismatch("package content does not match its embedded hash");

    ModelPackage pkg;
    LineReader r(body);
    std::vector<std::string> t;
    std::map<std::string, SurrogateModel> bases; // includes "<id>.base" entries
    while (r.next(t)) {
        if (t[0] == "testbench" && t.size() == 3) {
            pkg.testbench_id = t[1];
            pkg.testbench_hash = std::stoull(t[2], nullptr, 16);
        } else if (t[0] == "stage" && t.size() == 2) {
            pkg.stage = parse_stage(t[1]);
        } else if (t[0] == "seed" && t.size() == 2) {
            pkg.seed = parse_u64(t[1], "package seed");
        } else if (t[0] == "model" && t.size() == 3) {
            SurrogateModel m;
            std::string id = t[1];
            m.model_kind = t[2];
            std::vector<double> in_mean, in_std, out_mean, out_std;
            while (r.next(t) && t[0] != "endmodel") {
                if (t[0] == "widths") {
                    for (std::size_t i = 1; i < t.size(); ++i)
                        m.net.widths.push_back(
                            static_cast<int>(parse_int(t[i], "package width")));
                    for (std::size_t l = 0; l + 1 < m.net.widths.size(); ++l) {
                        m.net.W.emplace_back(m.net.widths[l + 1], m.net.widths[l]);
                        m.net.b.emplace_back(Eigen::VectorXd::Zero(m.net.widths[l + 1]));
                    }
                } else if (t[0] == "in" && t.size() == 5) {
                    m.inputs.push_back(t[1]);
                    m.input_units.push_back(t[2]);
                    in_mean.push_back(parse_real(t[3], "package mean"));
                    in_std.push_back(parse_real(t[4], "package std"));
                } else if (t[0] == "out" && (t.size() == 5 || t.size() == 6)) {
                    m.outputs.push_back(t[1]);
                    m.output_units.push_back(t[2]);
                    out_mean.push_back(parse_real(t[3], "package mean"));
                    out_std.push_back(parse_real(t[4], "package std"));
                    OutScale s = OutScale::Linear;
                    if (t.size() == 6) {
                        s = parse_out_scale(t[5]);
                        if (s == OutScale::Auto || s == OutScale::Linear)
                            r.fail("unexpected output scale token '" + t[5] + "'");
                    }
                    m.out_scale.push_back(s);
                } else if ((t[0] == "W" || t[0] == "M") && t.size() >= 3) {
                    std::size_t layer = static_cast<std::size_t>(
                        parse_int(t[1], "package layer"));
                    if (layer >= m.net.W.size()) r.fail("layer index out of range");
                    if (t[0] == "M" && m.net.masks.size() < m.net.W.size())
                        m.net.masks.resize(m.net.W.size());
                    Eigen::MatrixXd& target =
                        t[0] == "W" ? m.net.W[layer] : m.net.masks[layer];
                    if (t[0] == "M" && target.size() == 0)
                        target = Eigen::MatrixXd::Zero(m.net.W[layer].rows(),
                                                       m.net.W[layer].cols());
                    Eigen::Index row = parse_int(t[2], "package row");
                    if (row < 0 || row >= target.rows()) r.fail("row index out of range");
                    if (static_cast<Eigen::Index>(t.size()) - 3 != target.cols())
                        r.fail("column count mismatch");
                    for (std::size_t i = 3; i < t.size(); ++i)
                        target(row, static_cast<Eigen::Index>(i - 3)) =
                            parse_real(t[i], "package weight");
                } else if (t[0] == "b" && t.size() >= 2) {
                    std::size_t layer = static_cast<std::size_t>(
                        parse_int(t[1], "package layer"));
                    if (layer >= m.net.b.size()) r.fail("layer index out of range");
                    Eigen::VectorXd v = read_vector(r, t, 2);
                    if (v.size() != m.net.b[layer].size()) r.fail("bias size mismatch");
                    m.net.b[layer] = v;
                } else {
                    r.fail("unexpected directive '" + t[0] + "' in model block");
                }
            }
            auto to_vec = [](const std::vector<double>& v) {
                Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
                for (std::size_t i = 0; i < v.size(); ++i)
                    out(static_cast<Eigen::Index>(i)) = v[i];
                return out;
            };
            m.in_mean = to_vec(in_mean);
            m.in_std = to_vec(in_std);
            m.out_mean = to_vec(out_mean);
            m.out_std = to_vec(out_std);
            if (m.inputs.empty() || m.outputs.empty() || m.net.W.empty())
                r.fail("incomplete model block '" + id + "'");
            bases.emplace(id, std::move(m));
        } else if (t[0] == "tl" && t.size() == 4) {
            TlModel tl;
            std::string id = t[1];
            tl.stage = parse_stage(t[2]);
            std::string base_hash = t[3];
            auto base = bases.find(id + ".base");
            if (base == bases.end()) r.fail("tl block '" + id + "' lacks its base model");
            tl.base = base->second;
            if (hex64(tl.base.weights_hash()) != base_hash)
                throw HashMismatch("tl base weights do not match the recorded hash");
            while (r.next(t) && t[0] != "endtl") {
                if (t[0] == "Ain" || t[0] == "Aout") {
                    Eigen::MatrixXd& target = t[0] == "Ain" ? tl.A_in : tl.A_out;
                    Eigen::Index dim = t[0] == "Ain"
                                           ? static_cast<Eigen::Index>(tl.base.inputs.size())
                                           : static_cast<Eigen::Index>(tl.base.outputs.size());
                    if (target.size() == 0) target = Eigen::MatrixXd::Zero(dim, dim);
                    Eigen::Index row = parse_int(t[1], "package row");
                    if (row < 0 || row >= dim ||
                        static_cast<Eigen::Index>(t.size()) - 2 != dim)
                        r.fail("adapter shape mismatch");
                    for (std::size_t i = 2; i < t.size(); ++i)
                        target(row, static_cast<Eigen::Index>(i - 2)) =
                            parse_real(t[i], "package adapter");
                } else if (t[0] == "bin") {
                    tl.b_in = read_vector(r, t, 1);
                } else if (t[0] == "bout") {
                    tl.b_out = read_vector(r, t, 1);
                } else {
                    r.fail("unexpected directive '" + t[0] + "' in tl block");
                }
            }
            pkg.tl_models.emplace(id, std::move(tl));
        } else {
            r.fail("unexpected directive '" + t[0] + "'");
        }
    }
    for (auto& [id, m] : bases)
        if (id.size() < 5 || id.substr(id.size() - 5) != ".base")
            pkg.models.emplace(id, std::move(m));
    return pkg;
}

void export_package(const ModelPackage& pkg, const std::string& path) {
    atomic_write(path, serialize_package(pkg));
}

ModelPackage import_package(const std::string& path, const TestbenchSpec* local_tb) {
    ModelPackage pkg = parse_package(read_file(path));
    if (local_tb && local_tb->content_hash() != pkg.testbench_hash) pkg.tl_required = true;
    return pkg;
}

} // namespace ampse
