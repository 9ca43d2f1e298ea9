#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "flowsync/rng.hpp"

namespace flowsync {

// Dense multilayer perceptron with tanh hidden units and either a softmax
// or an identity output head. Parameters and Adam moments live together so
// a checkpoint can restore the optimizer mid-run bit-exactly.
struct Mlp {
    std::vector<int> sizes;     // layer widths, input first
    bool softmax_output = false;

    // Row-major weight matrices w[l][out*sizes[l]+in] and bias vectors.
    std::vector<std::vector<double>> w, b;
    // Adam first/second moments, same shapes as w/b.
    std::vector<std::vector<double>> mw, vw, mb, vb;
    int64_t adam_steps = 0;

    int input_size() const { return sizes.front(); }
    int output_size() const { return sizes.back(); }
    int layer_count() const { return static_cast<int>(sizes.size()) - 1; }
};

// Orthogonally initialised network: hidden weights scaled by hidden_gain,
// the output layer by output_gain, biases zero.
Mlp make_mlp(const std::vector<int>& sizes, bool softmax_output, Rng& rng,
             double hidden_gain = 1.4142135623730951, double output_gain = 1.0);

// Per-thread scratch for forward/backward passes; reused across calls.
struct MlpWorkspace {
    std::vector<std::vector<double>> act;  // act[0] = input, act[L] = output
    std::vector<std::vector<double>> pre;  // pre-activations per layer
    std::vector<double> delta, delta_prev;
    std::vector<double> input;  // observation widened to doubles

    void prepare(const Mlp& net);
};

// Gradient buffers mirroring a network's parameter shapes.
struct MlpGrads {
    std::vector<std::vector<double>> w, b;
};

MlpGrads make_grads(const Mlp& net);
void zero_grads(MlpGrads& g);

struct CategoricalDist {
    std::vector<double> probs;
    std::vector<double> log_probs;
};

double entropy(const CategoricalDist& dist);

// Forward pass; fills ws and returns a reference to the output activations.
// Throws NumericError if the output is non-finite.
const std::vector<double>& mlp_forward(const Mlp& net, const std::vector<double>& input,
                                       MlpWorkspace& ws);

// Softmax-head forward over a raw observation (0/1 bytes are widened to doubles).
CategoricalDist policy_forward(const Mlp& net, const std::vector<uint8_t>& observation,
                               MlpWorkspace& ws);

// Identity-head forward returning the single scalar output.
double value_forward(const Mlp& net, const std::vector<uint8_t>& observation, MlpWorkspace& ws);

// Backpropagates d(loss)/d(output pre-activation) through the pass recorded
// in ws, accumulating parameter gradients into grads.
void mlp_backward(const Mlp& net, MlpWorkspace& ws, const std::vector<double>& grad_logits,
                  MlpGrads& grads);

// Inverse-CDF draw from a categorical distribution. Returns the sampled
// index and its log-probability.
struct ActionSample {
    int index;
    double log_prob;
};
ActionSample sample_action(const CategoricalDist& dist, Rng& rng);

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update. Throws UsageError on shape mismatch and
// NumericError if any parameter leaves the finite range.
void adam_step(Mlp& net, const MlpGrads& grads, const AdamConfig& cfg);

// Versioned binary serialisation; round-trips bit-exactly including the
// optimizer state. Throws IoError on malformed input.
void save_mlp(std::ostream& out, const Mlp& net);
Mlp load_mlp(std::istream& in);

}  // namespace flowsync
