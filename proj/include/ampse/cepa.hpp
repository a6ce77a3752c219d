#pragma once

#include "ampse/nn.hpp"
#include "ampse/oracle.hpp"
#include "ampse/surrogate.hpp"

namespace ampse {

enum class Assertion { Pass, Fail, Uncertain };
std::string assertion_name(Assertion a);

struct LabeledWaveform {
    Waveform prefix;
    bool pass = false;
    std::uint64_t params_hash = 0;
};

struct ConvLayer {
    int in_ch = 1, out_ch = 1, kernel = 5, stride = 2;
    Eigen::MatrixXd W; // out_ch x (in_ch * kernel)
    Eigen::VectorXd b;
    int out_len(int in_len) const { return (in_len - kernel) / stride + 1; }
};

/// Small 1-D convolutional classifier over truncated settling waveforms:
/// conv stack (tanh) -> dense logit -> sigmoid score in [0,1], with a
/// three-way decision band so "uncertain" falls back to full evaluation.
struct CepaModel {
    std::vector<ConvLayer> conv;
    Eigen::VectorXd dense_w;
    double dense_b = 0.0;
    double window_fraction = 0.25;
    double pass_above = 0.9, fail_below = 0.1;
    double wave_mean = 0.0, wave_std = 1.0; // scalar stats over all samples
    int input_len = 0;
    double dt = 0.0;
    std::vector<TrainLogEntry> training_log;

    double score(const Waveform& prefix) const; // throws LengthMismatch
};

struct EarlyAssertion {
    Assertion decision = Assertion::Uncertain;
    double score = 0.0;
};

/// Default stack: 8 then 16 channels, kernel 5, stride 2, one dense head.
CepaModel train_classifier(const std::vector<LabeledWaveform>& data,
                           const TrainHyper& hyper, double window_fraction = 0.25,
                           double pass_above = 0.9, double fail_below = 0.1);

EarlyAssertion assert_early(const CepaModel& m, const Waveform& prefix);

/// Predicate for sample_dataset over qualified system parameters: accepts a
/// point unless the classifier is confident the full horizon would fail.
/// `horizon` and `full_samples` describe the full transient the prefix
/// truncates; the prefix noise seed is derived from the point itself.
PointFilter filter_space(const CepaModel& m, const TestbenchSpec& tb, double horizon,
                         int full_samples, std::uint64_t noise_seed);

/// Synthesizes one labeled prefix: the classifier sees the first
/// window_fraction of `full_samples` noisy samples; the label is the
/// noiseless full-horizon criterion.
LabeledWaveform make_labeled_prefix(const TestbenchSpec& tb, const Assignment& full_params,
                                    double horizon, int full_samples,
                                    double window_fraction, std::uint64_t noise_seed);

/// Uniformly random parameter corpus.
std::vector<LabeledWaveform> build_cepa_corpus(const TestbenchSpec& tb, int n,
                                               double horizon, int full_samples,
                                               double window_fraction,
                                               std::uint64_t seed);

std::string serialize_corpus(const std::vector<LabeledWaveform>& corpus);
std::vector<LabeledWaveform> parse_corpus(const std::string& text);

} // namespace ampse
