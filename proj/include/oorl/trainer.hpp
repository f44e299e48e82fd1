// SPDX-License-Identifier: Apache-2.0
//
// The training loop: periodic on-policy rollouts graded by the rule reward,
// interleaved with group-preference batches, combined into one objective and
// optimized with Adam. Everything is deterministic given the seed.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "oorl/objectives.hpp"
#include "oorl/policy.hpp"
#include "oorl/toylang.hpp"

namespace oorl {

enum class TrainMode {
    OnPolicyOnly,  // clipped surrogate only
    Dpo,           // surrogate + pairwise DPO on each group's first pair
    Gepo,          // group preference loss only (off-policy)
    Oorl,          // surrogate + group preference loss
};

TrainMode parse_mode(const std::string& name);
std::string mode_name(TrainMode mode);
bool mode_uses_onpolicy(TrainMode mode);
bool mode_uses_preference(TrainMode mode);

struct TrainConfig {
    uint64_t seed = 0;
    int steps = 500;
    int rollout_batch = 32;  // trajectories per step, prompts round-robin
    int gepo_batch = 8;      // preference groups per step, round-robin
    double lr = 0.05;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double beta = 0.1;       // preference scale
    double beta_kl = 0.01;   // reward-shaping KL coefficient
    double lambda = 1.0;     // winner-variance penalty weight
    double eps_clip = 0.2;
    double w_rl = 1.0;
    double w_gepo = 0.01;
    int snapshot_every = 1;  // refresh the sampling policy every k steps
    bool normalize_adv = true;
    bool cosine_schedule = false;  // cosine decay with 3% linear warm-up
    double init_scale = 0.0;
    int max_len = 12;
    int eval_samples = 64;   // per held-out prompt

    void validate() const;
};

struct StepRecord {
    int step = 0;
    double on_policy_loss = 0.0;
    double gepo_pref = 0.0;
    double gepo_var = 0.0;
    double combined = 0.0;
    double mean_reward = 0.0;
    double winner_ratio_variance = 0.0;
    double grad_norm = 0.0;
};

struct TrainReport {
    std::vector<StepRecord> records;
    double success_rate = 0.0;
    TrainMode mode = TrainMode::OnPolicyOnly;
    uint64_t seed = 0;
    int steps = 0;

    void write_csv(std::ostream& os) const;
    void write_csv_file(const std::string& path) const;
};

/// Groups define the prompt universe; rollout_prompt_count selects how many
/// of the leading prompt ids the on-policy rollouts use (0 = all). Held-out
/// evaluation runs over the remaining prompts, or over all prompts when
/// nothing is held out.
struct TrainInputs {
    std::vector<toylang::PreferenceGroup> groups;
    int rollout_prompt_count = 0;
};

/// Ancestral samples at temperature 1 under the (already snapshotted)
/// sampling policy; records sampling-time per-token log-probs and the rule
/// reward of each output.
std::vector<Trajectory> rollout(const PolicyParams& policy,
                                const std::vector<Prompt>& prompts,
                                int per_prompt, uint64_t seed);

struct AdamState {
    LogitTable m;
    LogitTable v;
    int64_t t = 0;
};

/// Standard Adam with bias correction, no weight decay.
void adam_step(PolicyParams& params, const LogitTable& grads, AdamState& state,
               const TrainConfig& config, double lr);

/// Effective learning rate at a step; identity unless the cosine schedule is
/// enabled.
double scheduled_lr(const TrainConfig& config, int step);

/// Fraction of graded-1 samples over the prompts, eval_samples each,
/// temperature 1, seeded independently of the training stream.
double evaluate_success(const PolicyParams& policy,
                        const std::vector<Prompt>& prompts, int samples,
                        uint64_t seed);

TrainReport train(const TrainConfig& config, const TrainInputs& inputs,
                  TrainMode mode);

}  // namespace oorl
