#include "ampse/cepa.hpp"

#include "ampse/textio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ampse {

std::string assertion_name(Assertion a) {
    switch (a) {
    case Assertion::Pass: return "pass";
    case Assertion::Fail: return "fail";
    default: return "uncertain";
    }
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// forward pass keeping per-layer activations; a[0] is the normalized input
// as a 1 x L matrix, a[l+1] the tanh output of conv layer l
std::vector<Eigen::MatrixXd> conv_forward(const CepaModel& m, const Eigen::VectorXd& x) {
    std::vector<Eigen::MatrixXd> a;
    a.push_back(x.transpose()); // 1 x L
    for (const auto& layer : m.conv) {
        const Eigen::MatrixXd& in = a.back();
        int lo = layer.out_len(static_cast<int>(in.cols()));
        if (lo <= 0) throw ShapeError("waveform too short for the conv stack");
        Eigen::MatrixXd out(layer.out_ch, lo);
        Eigen::VectorXd patch(layer.in_ch * layer.kernel);
        for (int t = 0; t < lo; ++t) {
            for (int ic = 0; ic < layer.in_ch; ++ic)
                for (int k = 0; k < layer.kernel; ++k)
                    patch(ic * layer.kernel + k) = in(ic, t * layer.stride + k);
            out.col(t) = ((layer.W * patch + layer.b).array().tanh()).matrix();
        }
        a.push_back(std::move(out));
    }
    return a;
}

double logit_of(const CepaModel& m, const std::vector<Eigen::MatrixXd>& a) {
    const Eigen::MatrixXd& last = a.back();
    Eigen::Map<const Eigen::VectorXd> flat(last.data(), last.size());
    return m.dense_w.dot(flat) + m.dense_b;
}

Eigen::VectorXd normalize_wave(const CepaModel& m, const Waveform& prefix) {
    if (static_cast<int>(prefix.samples.size()) != m.input_len)
        throw LengthMismatch("prefix has " + std::to_string(prefix.samples.size()) +
                             " samples, model expects " + std::to_string(m.input_len));
    Eigen::VectorXd x(m.input_len);
    for (int i = 0; i < m.input_len; ++i)
        x(i) = (prefix.samples[static_cast<std::size_t>(i)] - m.wave_mean) / m.wave_std;
    return x;
}

struct Grads {
    std::vector<Eigen::MatrixXd> W;
    std::vector<Eigen::VectorXd> b;
    Eigen::VectorXd dense_w;
    double dense_b = 0.0;
};

// accumulates d(BCE)/d(all weights) for one sample; dlogit = score - label
void backprop(const CepaModel& m, const std::vector<Eigen::MatrixXd>& a, double dlogit,
              Grads& g) {
    const Eigen::MatrixXd& last = a.back();
    Eigen::Map<const Eigen::VectorXd> flat(last.data(), last.size());
    g.dense_w += dlogit * flat;
    g.dense_b += dlogit;

    Eigen::MatrixXd d = Eigen::Map<const Eigen::MatrixXd>(m.dense_w.data(), last.rows(),
                                                          last.cols()) *
                        dlogit;
    for (std::size_t l = m.conv.size(); l-- > 0;) {
        const ConvLayer& layer = m.conv[l];
        const Eigen::MatrixXd& in = a[l];
        const Eigen::MatrixXd& out = a[l + 1];
        d = d.cwiseProduct((1.0 - out.array().square()).matrix()); // tanh'
        Eigen::MatrixXd din = Eigen::MatrixXd::Zero(in.rows(), in.cols());
        Eigen::VectorXd patch(layer.in_ch * layer.kernel);
        for (int t = 0; t < out.cols(); ++t) {
            for (int ic = 0; ic < layer.in_ch; ++ic)
                for (int k = 0; k < layer.kernel; ++k)
                    patch(ic * layer.kernel + k) = in(ic, t * layer.stride + k);
            g.W[l] += d.col(t) * patch.transpose();
            g.b[l] += d.col(t);
            Eigen::VectorXd dpatch = layer.W.transpose() * d.col(t);
            for (int ic = 0; ic < layer.in_ch; ++ic)
                for (int k = 0; k < layer.kernel; ++k)
                    din(ic, t * layer.stride + k) += dpatch(ic * layer.kernel + k);
        }
        d = std::move(din);
    }
}

double bce(double score, bool label) {
    // clamp only against exact 0/1 saturation so a confidently-wrong,
    // numerically saturated model still reads as a divergence (inf loss)
    return label ? -std::log(score) : -std::log1p(-score);
}

double corpus_loss(const CepaModel& m, const std::vector<Eigen::VectorXd>& xs,
                   const std::vector<char>& ys, const std::vector<Eigen::Index>& which) {
    if (which.empty()) return 0.0;
    double acc = 0.0;
    for (Eigen::Index i : which) {
        auto a = conv_forward(m, xs[static_cast<std::size_t>(i)]);
        acc += bce(sigmoid(logit_of(m, a)), ys[static_cast<std::size_t>(i)] != 0);
    }
    return acc / static_cast<double>(which.size());
}

} // namespace

double CepaModel::score(const Waveform& prefix) const {
    Eigen::VectorXd x = normalize_wave(*this, prefix);
    return sigmoid(logit_of(*this, conv_forward(*this, x)));
}

CepaModel train_classifier(const std::vector<LabeledWaveform>& data,
                           const TrainHyper& hyper, double window_fraction,
                           double pass_above, double fail_below) {
    if (data.empty()) throw EmptyDataset("no labeled waveforms");
    if (!(window_fraction > 0.0 && window_fraction <= 1.0))
        throw OutOfBounds("window_fraction must be in (0, 1]");
    if (!(0.0 <= fail_below && fail_below <= pass_above && pass_above <= 1.0))
        throw OutOfBounds("decision band must satisfy 0 <= fail_below <= pass_above <= 1");

    const std::size_t len = data.front().prefix.samples.size();
    const double dt = data.front().prefix.dt;
    bool any_pass = false, any_fail = false;
    for (const auto& w : data) {
        if (w.prefix.samples.size() != len || w.prefix.dt != dt)
            throw LengthMismatch("waveform prefixes must share dt and length");
        (w.pass ? any_pass : any_fail) = true;
    }
    if (!any_pass || !any_fail)
        throw SingleClassError("training corpus must contain both classes");

    CepaModel m;
    m.window_fraction = window_fraction;
    m.pass_above = pass_above;
    m.fail_below = fail_below;
    m.input_len = static_cast<int>(len);
    m.dt = dt;

    // scalar normalization over every training sample value
    double sum = 0.0, sq = 0.0;
    double count = static_cast<double>(data.size() * len);
    for (const auto& w : data)
        for (double v : w.prefix.samples) {
            sum += v;
            sq += v * v;
        }
    m.wave_mean = sum / count;
    double var = sq / count - m.wave_mean * m.wave_mean;
    m.wave_std = var > 1e-24 ? std::sqrt(var) : 1.0;

    // stack: 8 then 16 channels, kernel 5, stride 2, tanh
    Rng init(derive_seed(hyper.seed, 0x696e6974ULL));
    int chans[2] = {8, 16};
    int in_ch = 1, in_len = m.input_len;
    for (int l = 0; l < 2; ++l) {
        ConvLayer layer;
        layer.in_ch = in_ch;
        layer.out_ch = chans[l];
        layer.W.resize(layer.out_ch, layer.in_ch * layer.kernel);
        double scale = 1.0 / std::sqrt(static_cast<double>(layer.in_ch * layer.kernel));
        for (int r = 0; r < layer.W.rows(); ++r)
            for (int c = 0; c < layer.W.cols(); ++c) layer.W(r, c) = scale * init.normal();
        layer.b = Eigen::VectorXd::Zero(layer.out_ch);
        in_len = layer.out_len(in_len);
        if (in_len <= 0) throw ShapeError("waveform too short for the conv stack");
        in_ch = layer.out_ch;
        m.conv.push_back(std::move(layer));
    }
    int flat = in_ch * in_len;
    m.dense_w.resize(flat);
    double dscale = 1.0 / std::sqrt(static_cast<double>(flat));
    for (int i = 0; i < flat; ++i) m.dense_w(i) = dscale * init.normal();
    m.dense_b = 0.0;

    std::vector<Eigen::VectorXd> xs;
    std::vector<char> ys;
    xs.reserve(data.size());
    for (const auto& w : data) {
        xs.push_back(normalize_wave(m, w.prefix));
        ys.push_back(w.pass ? 1 : 0);
    }

    // deterministic 80/20 split, scheme shared with train_mlp
    std::vector<Eigen::Index> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng split_rng(derive_seed(hyper.seed, 0x73706c69ULL));
    split_rng.shuffle(idx);
    Eigen::Index n_val = data.size() >= 5 ? static_cast<Eigen::Index>(data.size()) / 5 : 0;
    Eigen::Index n_train = static_cast<Eigen::Index>(data.size()) - n_val;
    std::vector<Eigen::Index> train_idx(idx.begin(), idx.begin() + n_train);
    std::vector<Eigen::Index> val_idx(idx.begin() + n_train, idx.end());

    Adam opt(hyper.lr, hyper.weight_decay);
    CepaModel best = m;
    double best_val = corpus_loss(m, xs, ys, n_val > 0 ? val_idx : train_idx);
    int since_best = 0;

    std::vector<Eigen::Index> order = train_idx;
    Eigen::MatrixXd dense_w_mat; // Adam slots want matrices for W
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng erng(derive_seed(hyper.seed, 0x65706f63ULL, static_cast<std::uint64_t>(epoch)));
        erng.shuffle(order);
        int batch = std::max(1, hyper.batch);
        std::size_t done = 0;
        while (done < order.size()) {
            std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(batch),
                                                   order.size() - done);
            Grads g;
            for (const auto& layer : m.conv) {
                g.W.push_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
                g.b.push_back(Eigen::VectorXd::Zero(layer.b.size()));
            }
            g.dense_w = Eigen::VectorXd::Zero(m.dense_w.size());
            double scale = 1.0 / static_cast<double>(bs);
            for (std::size_t k = 0; k < bs; ++k) {
                Eigen::Index i = order[done + k];
                auto a = conv_forward(m, xs[static_cast<std::size_t>(i)]);
                double p = sigmoid(logit_of(m, a));
                double dlogit =
                    scale * (p - (ys[static_cast<std::size_t>(i)] != 0 ? 1.0 : 0.0));
                backprop(m, a, dlogit, g);
            }
            std::vector<Eigen::MatrixXd*> ws;
            std::vector<Eigen::VectorXd*> bsl;
            std::vector<Eigen::MatrixXd> gw;
            std::vector<Eigen::VectorXd> gb;
            for (std::size_t l = 0; l < m.conv.size(); ++l) {
                ws.push_back(&m.conv[l].W);
                bsl.push_back(&m.conv[l].b);
                gw.push_back(g.W[l]);
                gb.push_back(g.b[l]);
            }
            // dense head rides along as one more (vector, scalar) slot
            bsl.push_back(&m.dense_w);
            gb.push_back(g.dense_w);
            Eigen::VectorXd dense_b_vec(1), g_dense_b(1);
            dense_b_vec << m.dense_b;
            g_dense_b << g.dense_b;
            bsl.push_back(&dense_b_vec);
            gb.push_back(g_dense_b);
            opt.step(ws, bsl, gw, gb);
            m.dense_b = dense_b_vec(0);
            done += bs;
        }
        double train_loss = corpus_loss(m, xs, ys, train_idx);
        double val_loss = n_val > 0 ? corpus_loss(m, xs, ys, val_idx) : train_loss;
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            throw DivergedError("classifier loss became non-finite at epoch " +
                                std::to_string(epoch));
        m.training_log.push_back({epoch, train_loss, val_loss});
        if (val_loss < best_val) {
            best_val = val_loss;
            best = m;
            since_best = 0;
        } else if (hyper.patience > 0 && ++since_best >= hyper.patience) {
            break;
        }
    }
    best.training_log = m.training_log;
    return best;
}

EarlyAssertion assert_early(const CepaModel& m, const Waveform& prefix) {
    EarlyAssertion r;
    r.score = m.score(prefix);
    if (r.score >= m.pass_above)
        r.decision = Assertion::Pass;
    else if (r.score <= m.fail_below)
        r.decision = Assertion::Fail;
    else
        r.decision = Assertion::Uncertain;
    return r;
}

namespace {

std::uint64_t hash_params(const Assignment& p) {
    std::uint64_t h = 0;
    for (const auto& [k, v] : p) {
        h = fnv1a(k, h ? h : 0xcbf29ce484222325ULL);
        h = fnv1a(format_real(v), h);
    }
    return h;
}

} // namespace

LabeledWaveform make_labeled_prefix(const TestbenchSpec& tb, const Assignment& full_params,
                                    double horizon, int full_samples,
                                    double window_fraction, std::uint64_t noise_seed) {
    if (full_samples < 8) throw OutOfBounds("need at least 8 full samples");
    double dt = horizon / static_cast<double>(full_samples);
    int prefix_n = static_cast<int>(std::floor(window_fraction * full_samples + 1e-9));
    if (prefix_n < 1) throw OutOfBounds("window too short for the sample count");
    LabeledWaveform lw;
    // duration chosen so the synthesized waveform has exactly prefix_n samples
    lw.prefix = simulate_transient(tb, full_params,
                                   dt * static_cast<double>(prefix_n - 1) + dt * 0.5, dt,
                                   noise_seed);
    lw.prefix.samples.resize(static_cast<std::size_t>(prefix_n));
    lw.prefix.label_horizon = horizon;
    lw.pass = label_waveform(tb, full_params, horizon);
    lw.params_hash = hash_params(full_params);
    return lw;
}

std::vector<LabeledWaveform> build_cepa_corpus(const TestbenchSpec& tb, int n,
                                               double horizon, int full_samples,
                                               double window_fraction,
                                               std::uint64_t seed) {
    std::vector<LabeledWaveform> corpus;
    corpus.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, 0x63657061ULL, static_cast<std::uint64_t>(i)));
        Assignment p;
        for (const auto& m : tb.modules)
            for (const auto& d : m.space.params)
                p[m.id + "." + d.name] = rng.uniform(d.lower, d.upper);
        corpus.push_back(make_labeled_prefix(tb, p, horizon, full_samples, window_fraction,
                                             derive_seed(seed, 0x6e6f6973ULL,
                                                         static_cast<std::uint64_t>(i))));
    }
    return corpus;
}

PointFilter filter_space(const CepaModel& m, const TestbenchSpec& tb, double horizon,
                         int full_samples, std::uint64_t noise_seed) {
    CepaModel model = m;
    TestbenchSpec bench = tb;
    return [model, bench, horizon, full_samples, noise_seed](const Assignment& point) {
        LabeledWaveform lw =
            make_labeled_prefix(bench, point, horizon, full_samples, model.window_fraction,
                                derive_seed(noise_seed, hash_params(point)));
        return assert_early(model, lw.prefix).decision != Assertion::Fail;
    };
}

std::string serialize_corpus(const std::vector<LabeledWaveform>& corpus) {
    std::ostringstream os;
    os << "# ampse-waveforms/1\n";
    for (const auto& w : corpus) {
        os << (w.pass ? "pass" : "fail") << '\t' << format_real(w.prefix.dt) << '\t'
           << format_real(w.prefix.label_horizon) << '\t' << hex64(w.params_hash);
        for (double v : w.prefix.samples) os << '\t' << format_real(v);
        os << '\n';
    }
    return os.str();
}

std::vector<LabeledWaveform> parse_corpus(const std::string& text) {
    std::vector<LabeledWaveform> corpus;
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "# ampse-waveforms/1")
        throw ParseError("bad waveform corpus header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cols = split_char(line, '\t');
        if (cols.size() < 5) throw ParseError("short waveform record");
        LabeledWaveform w;
        if (cols[0] == "pass")
            w.pass = true;
        else if (cols[0] == "fail")
            w.pass = false;
        else
            throw ParseError("bad waveform label '" + cols[0] + "'");
        w.prefix.dt = parse_real(cols[1], "waveform dt");
        w.prefix.label_horizon = parse_real(cols[2], "waveform horizon");
        w.params_hash = std::stoull(cols[3], nullptr, 16);
        for (std::size_t i = 4; i < cols.size(); ++i)
            w.prefix.samples.push_back(parse_real(cols[i], "waveform sample"));
        corpus.push_back(std::move(w));
    }
    return corpus;
}

} // namespace ampse
