#pragma once

#include <cstdint>
#include <vector>

#include "flowsync/mlp.hpp"
#include "flowsync/rng.hpp"

namespace flowsync {

struct PpoConfig {
    double gamma = 0.999;
    double lambda = 0.95;
    double clip_eps = 0.1;
    int epochs_per_batch = 4;
    int episodes_per_batch = 32;
    int total_episodes = 2000;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    int minibatch_size = 256;
    bool advantage_normalization = true;
    double lr = 3e-4;  // Adam step size for both networks
};

void validate(const PpoConfig& cfg);

// One collected episode. Parallel arrays, one entry per control step.
struct Trajectory {
    std::vector<std::vector<uint8_t>> observations;
    std::vector<int> actions;
    std::vector<double> log_probs_old;
    std::vector<double> values_old;
    std::vector<double> rewards;
    bool terminal = false;  // reached the finish line (as opposed to the step cap)
    double score = 0.0;
    size_t size() const { return actions.size(); }
};

struct AdvantageSet {
    std::vector<double> advantages;
    std::vector<double> returns;  // value regression targets
};

// Generalized advantage estimation by backward recursion over the
// temporal-difference residuals; the final step bootstraps terminal_value.
AdvantageSet compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                         double terminal_value, double gamma, double lambda);

// Negated clipped-ratio objective for one sample (positive = loss).
double clipped_surrogate(double log_prob_new, double log_prob_old, double advantage,
                         double clip_eps);

struct UpdateStats {
    double policy_loss = 0.0;
    double value_loss = 0.0;  // mean squared error, unweighted
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;       // mean(log_prob_old - log_prob_new)
    double max_ratio_error = 0.0;  // max |r-1| over the pre-update pass
};

// One flattened training sample used by the update loop.
struct PpoSample {
    const std::vector<uint8_t>* obs;
    int action;
    double log_prob_old;
    double advantage;
    double return_target;
};

// Mean PPO loss over samples[subset]: surrogate + value_coef * value MSE
// - entropy_coef * entropy. Accumulates parameter gradients into gp/gv when
// non-null and per-sample-mean statistics into stats when non-null.
double ppo_loss(const Mlp& policy, const Mlp& value, const std::vector<PpoSample>& samples,
                const std::vector<size_t>& subset, const PpoConfig& cfg, MlpGrads* gp,
                MlpGrads* gv, UpdateStats* stats, MlpWorkspace& wp, MlpWorkspace& wv);

// Full PPO update on one batch of complete episodes: per-episode advantages,
// optional batch normalization, then epochs_per_batch passes of shuffled
// minibatch Adam steps on both networks. Statistics are averaged over every
// minibatch sample pass.
UpdateStats ppo_update(Mlp& policy, Mlp& value, const std::vector<Trajectory>& batch,
                       const PpoConfig& cfg, Rng& rng);

}  // namespace flowsync
