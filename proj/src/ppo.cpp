#include "flowsync/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowsync/errors.hpp"

namespace flowsync {

void validate(const PpoConfig& cfg) {
    if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw ConfigError("ppo.gamma must be in [0, 1)");
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ConfigError("ppo.lambda must be in [0, 1]");
    if (!(cfg.clip_eps > 0.0)) throw ConfigError("ppo.clip_eps must be positive");
    if (cfg.epochs_per_batch < 1) throw ConfigError("ppo.epochs_per_batch must be at least 1");
    if (cfg.episodes_per_batch < 1) throw ConfigError("ppo.episodes_per_batch must be at least 1");
    if (cfg.total_episodes < 1) throw ConfigError("ppo.total_episodes must be at least 1");
    if (!(cfg.value_coef >= 0.0)) throw ConfigError("ppo.value_coef must be non-negative");
    if (!(cfg.entropy_coef >= 0.0)) throw ConfigError("ppo.entropy_coef must be non-negative");
    if (cfg.minibatch_size < 1) throw ConfigError("ppo.minibatch_size must be at least 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("ppo.lr must be positive");
}

AdvantageSet compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                         double terminal_value, double gamma, double lambda) {
    const size_t n = rewards.size();
    if (values.size() != n)
        throw UsageError("rewards and values must have one entry per step");
    if (n == 0) throw UsageError("cannot compute advantages for an empty episode");
    for (double r : rewards)
        if (!std::isfinite(r)) throw NumericError("non-finite reward in episode");
    for (double v : values)
        if (!std::isfinite(v)) throw NumericError("non-finite value estimate in episode");

    AdvantageSet out;
    out.advantages.resize(n);
    out.returns.resize(n);
    double running = 0.0;
    for (size_t t = n; t-- > 0;) {
        const double next_v = t + 1 < n ? values[t + 1] : terminal_value;
        const double delta = rewards[t] + gamma * next_v - values[t];
        running = delta + gamma * lambda * running;
        out.advantages[t] = running;
        out.returns[t] = running + values[t];
    }
    return out;
}

double clipped_surrogate(double log_prob_new, double log_prob_old, double advantage,
                         double clip_eps) {
    const double r = std::exp(log_prob_new - log_prob_old);
    const double unclipped = r * advantage;
    const double clipped = std::clamp(r, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    return -std::min(unclipped, clipped);
}

double ppo_loss(const Mlp& policy, const Mlp& value, const std::vector<PpoSample>& samples,
                const std::vector<size_t>& subset, const PpoConfig& cfg, MlpGrads* gp,
                MlpGrads* gv, UpdateStats* stats, MlpWorkspace& wp, MlpWorkspace& wv) {
    if (subset.empty()) throw UsageError("cannot evaluate the loss on an empty sample set");
    const double inv = 1.0 / static_cast<double>(subset.size());
    const int n_actions = policy.output_size();
    std::vector<double> gl(static_cast<size_t>(n_actions));
    double surr_sum = 0.0, mse_sum = 0.0, ent_sum = 0.0, clip_sum = 0.0, kl_sum = 0.0;
    for (size_t si : subset) {
        const PpoSample& s = samples[si];
        const CategoricalDist dist = policy_forward(policy, *s.obs, wp);
        const double lpn = dist.log_probs[static_cast<size_t>(s.action)];
        const double r = std::exp(lpn - s.log_prob_old);
        const double unclipped = r * s.advantage;
        const double clipped =
            std::clamp(r, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * s.advantage;
        const double h = entropy(dist);
        surr_sum += -std::min(unclipped, clipped);
        ent_sum += h;
        kl_sum += s.log_prob_old - lpn;
        if (std::abs(r - 1.0) > cfg.clip_eps) clip_sum += 1.0;
        if (gp) {
            // d(-min)/d(log p_a): the ratio branch contributes -r*A, the
            // clipped branch is locally constant in the saturated region.
            const double coeff = unclipped <= clipped ? -r * s.advantage : 0.0;
            for (int k = 0; k < n_actions; ++k) {
                const double p = dist.probs[static_cast<size_t>(k)];
                const double onehot = k == s.action ? 1.0 : 0.0;
                double g = coeff * (onehot - p);
                g += cfg.entropy_coef * p * (dist.log_probs[static_cast<size_t>(k)] + h);
                gl[static_cast<size_t>(k)] = g * inv;
            }
            mlp_backward(policy, wp, gl, *gp);
        }
        const double v = value_forward(value, *s.obs, wv);
        const double err = v - s.return_target;
        mse_sum += err * err;
        if (gv) mlp_backward(value, wv, {cfg.value_coef * 2.0 * err * inv}, *gv);
    }
    if (stats) {
        stats->policy_loss = surr_sum * inv;
        stats->value_loss = mse_sum * inv;
        stats->entropy = ent_sum * inv;
        stats->clip_fraction = clip_sum * inv;
        stats->approx_kl = kl_sum * inv;
    }
    return (surr_sum + cfg.value_coef * mse_sum - cfg.entropy_coef * ent_sum) * inv;
}

UpdateStats ppo_update(Mlp& policy, Mlp& value, const std::vector<Trajectory>& batch,
                       const PpoConfig& cfg, Rng& rng) {
    validate(cfg);
    if (batch.empty()) throw UsageError("cannot update from an empty batch");

    std::vector<PpoSample> samples;
    for (const Trajectory& tr : batch) {
        const size_t n = tr.size();
        if (n == 0) throw UsageError("batch contains an empty episode");
        if (tr.observations.size() != n || tr.log_probs_old.size() != n ||
            tr.values_old.size() != n || tr.rewards.size() != n)
            throw UsageError("trajectory arrays have inconsistent lengths");
        AdvantageSet adv = compute_gae(tr.rewards, tr.values_old, 0.0, cfg.gamma, cfg.lambda);
        for (size_t t = 0; t < n; ++t)
            samples.push_back({&tr.observations[t], tr.actions[t], tr.log_probs_old[t],
                               adv.advantages[t], adv.returns[t]});
    }

    if (cfg.advantage_normalization) {
        double mean = 0.0;
        for (const PpoSample& s : samples) mean += s.advantage;
        mean /= static_cast<double>(samples.size());
        double var = 0.0;
        for (const PpoSample& s : samples) {
            const double d = s.advantage - mean;
            var += d * d;
        }
        var /= static_cast<double>(samples.size());
        const double inv_std = 1.0 / (std::sqrt(var) + 1e-8);
        for (PpoSample& s : samples) s.advantage = (s.advantage - mean) * inv_std;
    }

    MlpWorkspace wp, wv;

    // The stored log-probabilities must reproduce under the current policy
    // before any parameter motion; a mismatch means the rollout is stale.
    double max_err = 0.0;
    for (const PpoSample& s : samples) {
        const CategoricalDist dist = policy_forward(policy, *s.obs, wp);
        const double r = std::exp(dist.log_probs[static_cast<size_t>(s.action)] - s.log_prob_old);
        max_err = std::max(max_err, std::abs(r - 1.0));
    }
    if (max_err > 1e-9)
        throw NumericError("rollout log-probabilities do not match the current policy");

    std::vector<size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    MlpGrads gp = make_grads(policy);
    MlpGrads gv = make_grads(value);
    AdamConfig adam;
    adam.lr = cfg.lr;

    UpdateStats total;
    total.max_ratio_error = max_err;
    double weight = 0.0;
    const size_t mb = static_cast<size_t>(cfg.minibatch_size);
    std::vector<size_t> chunk;
    for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
        for (size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        for (size_t start = 0; start < idx.size(); start += mb) {
            const size_t count = std::min(mb, idx.size() - start);
            chunk.assign(idx.begin() + static_cast<ptrdiff_t>(start),
                         idx.begin() + static_cast<ptrdiff_t>(start + count));
            zero_grads(gp);
            zero_grads(gv);
            UpdateStats st;
            ppo_loss(policy, value, samples, chunk, cfg, &gp, &gv, &st, wp, wv);
            adam_step(policy, gp, adam);
            adam_step(value, gv, adam);
            const double w = static_cast<double>(count);
            total.policy_loss += st.policy_loss * w;
            total.value_loss += st.value_loss * w;
            total.entropy += st.entropy * w;
            total.clip_fraction += st.clip_fraction * w;
            total.approx_kl += st.approx_kl * w;
            weight += w;
        }
    }
    total.policy_loss /= weight;
    total.value_loss /= weight;
    total.entropy /= weight;
    total.clip_fraction /= weight;
    total.approx_kl /= weight;
    return total;
}

}  // namespace flowsync
