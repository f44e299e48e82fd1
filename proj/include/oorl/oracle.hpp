// SPDX-License-Identifier: Apache-2.0
//
// Brute-force verification tools built on exhaustive enumeration: exact
// partition functions, the closed-form KL-regularized optimal policy, the
// reward/log-ratio identity it satisfies, and a convergence check that
// trains a tabular policy against that closed form.

#pragma once

#include <functional>
#include <vector>

#include "oorl/policy.hpp"
#include "oorl/trainer.hpp"

namespace oorl::oracle {

using RewardFn = std::function<double(const Sequence&)>;

struct ExactDistribution {
    Prompt prompt;
    std::vector<std::pair<Sequence, double>> entries;
    double partition = 0.0;  // Z
};

/// Z = sum_y pi_ref(y|x) * exp(r(y) / beta), accumulated in log space with a
/// max shift so small beta cannot overflow.
double partition_function(const PolicyParams& ref, const Prompt& prompt,
                          const RewardFn& reward, double beta,
                          double enumeration_cap = 1e6);

/// pi*(y|x) = pi_ref(y|x) * exp(r(y) / beta) / Z(x) over every enumerable
/// complete sequence.
ExactDistribution optimal_policy(const PolicyParams& ref, const Prompt& prompt,
                                 const RewardFn& reward, double beta,
                                 double enumeration_cap = 1e6);

/// Max over y of |r(y) - (beta * log(pi*(y)/pi_ref(y)) + beta * log Z)|.
double implicit_reward_identity_check(const PolicyParams& ref,
                                      const Prompt& prompt,
                                      const RewardFn& reward, double beta,
                                      double enumeration_cap = 1e6);

/// 1/2 * sum |p - q|; requires identical support ordering.
double total_variation(const ExactDistribution& p, const ExactDistribution& q);

ExactDistribution policy_distribution(const PolicyParams& policy,
                                      const Prompt& prompt,
                                      double enumeration_cap = 1e6);

struct ConvergenceResult {
    double tv = 0.0;       // final distance to the closed-form optimum
    int steps_run = 0;
    PolicyParams policy;
};

/// Trains a tabular policy toward the KL-regularized optimum using the
/// clipped on-policy surrogate with KL-shaped advantages, computed over
/// exhaustive per-step rollouts (every enumerable sequence, weighted by its
/// sampling probability) instead of sampling. The sampling snapshot is
/// refreshed every step. Stops early once TV <= tv_target.
ConvergenceResult exact_rl_convergence(const PolicyParams& init,
                                       const Prompt& prompt,
                                       const RewardFn& reward, double beta,
                                       int max_steps, double lr,
                                       double tv_target);

}  // namespace oorl::oracle
