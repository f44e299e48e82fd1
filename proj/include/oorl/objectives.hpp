// SPDX-License-Identifier: Apache-2.0
//
// Differentiable training objectives.
//
// All sequence-level scores are log-probability ratios against a frozen
// reference, r(y) = log pi(y|x) - log pi_ref(y|x). The group preference loss
// compares the mean winner ratio to the mean loser ratio through a sigmoid
// and adds a penalty on the sample variance of the winner ratios; with one
// winner and one loser it collapses exactly to the pairwise DPO loss.

#pragma once

#include <span>
#include <vector>

#include "oorl/autodiff.hpp"
#include "oorl/policy.hpp"
#include "oorl/toylang.hpp"

namespace oorl {

/// One on-policy sample: output, binary reward, and the per-token
/// log-probabilities recorded under the sampling-time policy.
struct Trajectory {
    Prompt prompt;
    Sequence output;
    int reward = 0;
    std::vector<double> old_log_probs;
};

/// Per-token advantages, one inner vector per trajectory.
struct AdvantageSet {
    std::vector<std::vector<double>> per_token;

    size_t total_tokens() const {
        size_t n = 0;
        for (const auto& v : per_token) {
            n += v.size();
        }
        return n;
    }
};

struct GepoTerms {
    ad::Value pref;  // -log sigma(beta * (mean winner ratio - mean loser ratio))
    ad::Value var;   // beta^2/(n-1) * sum of squared winner-ratio deviations
};

struct Hyperparams {
    double beta = 0.1;
    double lambda = 1.0;
    double eps_clip = 0.2;
    double beta_kl = 0.01;
    double w_rl = 1.0;
    double w_gepo = 0.01;
};

struct LossBreakdown {
    ad::Value on_policy;
    ad::Value gepo_pref;
    ad::Value gepo_var;
    ad::Value combined;
    Hyperparams hyper;
};

/// log pi(y|x) - log pi_ref(y|x); differentiable w.r.t. the live policy only.
ad::Value log_ratio(PolicyTape& policy, const PolicyParams& ref,
                    const Prompt& prompt, const Sequence& y);

ad::Value dpo_loss(PolicyTape& policy, const PolicyParams& ref,
                   const Prompt& prompt, const Sequence& y_w,
                   const Sequence& y_l, double beta);

/// Shaped reward per token: -beta_kl * (log pi(a|s) - log pi_ref(a|s)),
/// evaluated without gradient flow, plus the binary reward at the final
/// token. Advantage = suffix return minus the mean return over all tokens in
/// the batch; optionally divided by the batch standard deviation (+1e-8).
AdvantageSet compute_advantages(std::span<const Trajectory> batch,
                                const PolicyParams& policy,
                                const PolicyParams& ref, double beta_kl,
                                bool normalize);

/// Clipped surrogate: -mean over tokens of min(r * A, clip(r, 1-eps, 1+eps) * A)
/// with r = exp(log pi(a|s) - old_log_prob). Gradients flow only through pi.
ad::Value onpolicy_loss(PolicyTape& policy, std::span<const Trajectory> batch,
                        const AdvantageSet& advantages, double eps_clip);

/// Formula-level core of the group loss, exposed so invariance tests can
/// inject shifted ratios directly. var is 0 by definition when n = 1.
GepoTerms gepo_terms_from_ratios(ad::Tape& tape,
                                 std::span<const ad::Value> winner_ratios,
                                 std::span<const ad::Value> loser_ratios,
                                 double beta);

GepoTerms gepo_loss(PolicyTape& policy, const PolicyParams& ref,
                    const toylang::PreferenceGroup& group, double beta,
                    double lambda);

/// w_rl * on_policy + w_gepo * gepo_total as a single node.
ad::Value oorl_loss(ad::Value on_policy, ad::Value gepo_total, double w_rl,
                    double w_gepo);

}  // namespace oorl
