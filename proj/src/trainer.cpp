// SPDX-License-Identifier: Apache-2.0

#include "oorl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace oorl {

namespace {

// splitmix64: decorrelates derived seeds from consecutive inputs.
uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

void append_double(std::string& line, double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    line += buf;
}

double sample_variance(const std::vector<double>& xs) {
    if (xs.size() < 2) {
        return 0.0;
    }
    double mean = 0.0;
    for (double x : xs) {
        mean += x;
    }
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - mean) * (x - mean);
    }
    return ss / static_cast<double>(xs.size() - 1);
}

}  // namespace

TrainMode parse_mode(const std::string& name) {
    if (name == "onpolicy") return TrainMode::OnPolicyOnly;
    if (name == "dpo") return TrainMode::Dpo;
    if (name == "gepo") return TrainMode::Gepo;
    if (name == "oorl") return TrainMode::Oorl;
    throw std::invalid_argument("unknown mode '" + name +
                                "' (expected onpolicy|dpo|gepo|oorl)");
}

std::string mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::OnPolicyOnly: return "onpolicy";
        case TrainMode::Dpo: return "dpo";
        case TrainMode::Gepo: return "gepo";
        case TrainMode::Oorl: return "oorl";
    }
    return "?";
}

bool mode_uses_onpolicy(TrainMode mode) { return mode != TrainMode::Gepo; }

bool mode_uses_preference(TrainMode mode) {
    return mode != TrainMode::OnPolicyOnly;
}

void TrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("config: steps must be >= 0");
    if (rollout_batch < 1) throw std::invalid_argument("config: rollout_batch must be >= 1");
    if (gepo_batch < 1) throw std::invalid_argument("config: gepo_batch must be >= 1");
    if (lr < 0.0) throw std::invalid_argument("config: lr must be >= 0");
    if (beta <= 0.0) throw std::invalid_argument("config: beta must be positive");
    if (beta_kl < 0.0) throw std::invalid_argument("config: beta_kl must be >= 0");
    if (lambda < 0.0) throw std::invalid_argument("config: lambda must be >= 0");
    if (eps_clip <= 0.0 || eps_clip >= 1.0) {
        throw std::invalid_argument("config: eps_clip must be in (0, 1)");
    }
    if (w_rl < 0.0 || w_gepo < 0.0) {
        throw std::invalid_argument("config: weights must be >= 0");
    }
    if (snapshot_every < 1) {
        throw std::invalid_argument("config: snapshot_every must be >= 1");
    }
    if (max_len < 1) throw std::invalid_argument("config: max_len must be >= 1");
    if (eval_samples < 1) {
        throw std::invalid_argument("config: eval_samples must be >= 1");
    }
    if (init_scale < 0.0) {
        throw std::invalid_argument("config: init_scale must be >= 0");
    }
}

void TrainReport::write_csv(std::ostream& os) const {
    os << "step,on_policy_loss,gepo_pref,gepo_var,combined,mean_reward,"
          "winner_ratio_variance,grad_norm\n";
    for (const StepRecord& r : records) {
        std::string line = std::to_string(r.step);
        for (double x : {r.on_policy_loss, r.gepo_pref, r.gepo_var, r.combined,
                         r.mean_reward, r.winner_ratio_variance, r.grad_norm}) {
            line += ',';
            append_double(line, x);
        }
        os << line << '\n';
    }
    std::string summary = "# final success_rate=";
    append_double(summary, success_rate);
    summary += " mode=" + mode_name(mode);
    summary += " steps=" + std::to_string(steps);
    summary += " seed=" + std::to_string(seed);
    os << summary << '\n';
}

void TrainReport::write_csv_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write report to " + path);
    }
    write_csv(os);
}

std::vector<Trajectory> rollout(const PolicyParams& policy,
                                const std::vector<Prompt>& prompts,
                                int per_prompt, uint64_t seed) {
    if (per_prompt < 1) {
        throw std::invalid_argument("rollout: per_prompt must be >= 1");
    }
    std::vector<Trajectory> batch;
    batch.reserve(prompts.size() * static_cast<size_t>(per_prompt));
    uint64_t draw = 0;
    for (const Prompt& prompt : prompts) {
        for (int k = 0; k < per_prompt; ++k, ++draw) {
            Trajectory traj;
            traj.prompt = prompt;
            traj.output = sample(policy, prompt, mix_seed(seed, draw), 1.0);
            traj.old_log_probs = token_log_probs(policy, prompt, traj.output);
            traj.reward = toylang::grade(prompt, traj.output);
            batch.push_back(std::move(traj));
        }
    }
    return batch;
}

double scheduled_lr(const TrainConfig& config, int step) {
    if (!config.cosine_schedule || config.steps <= 1) {
        return config.lr;
    }
    const int warmup = std::max(1, static_cast<int>(std::ceil(0.03 * config.steps)));
    if (step < warmup) {
        return config.lr * static_cast<double>(step + 1) / warmup;
    }
    const double progress = static_cast<double>(step - warmup) /
                            std::max(1, config.steps - warmup);
    return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_step(PolicyParams& params, const LogitTable& grads, AdamState& state,
               const TrainConfig& config, double lr) {
    if (params.frozen) {
        throw std::invalid_argument("adam_step: params are frozen");
    }
    if (grads.data.size() != params.logits.data.size()) {
        throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    if (state.m.data.empty()) {
        state.m = LogitTable(params.num_prompts(), params.max_len(), params.vocab());
        state.v = LogitTable(params.num_prompts(), params.max_len(), params.vocab());
    }
    ++state.t;
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (size_t i = 0; i < grads.data.size(); ++i) {
        const double g = grads.data[i];
        state.m.data[i] = b1 * state.m.data[i] + (1.0 - b1) * g;
        state.v.data[i] = b2 * state.v.data[i] + (1.0 - b2) * g * g;
        const double m_hat = state.m.data[i] / bc1;
        const double v_hat = state.v.data[i] / bc2;
        params.logits.data[i] -= lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
}

double evaluate_success(const PolicyParams& policy,
                        const std::vector<Prompt>& prompts, int samples,
                        uint64_t seed) {
    if (prompts.empty()) {
        return 0.0;
    }
    int64_t hits = 0;
    int64_t total = 0;
    uint64_t draw = 0;
    for (const Prompt& prompt : prompts) {
        for (int k = 0; k < samples; ++k, ++draw) {
            const Sequence out = sample(policy, prompt, mix_seed(seed, draw), 1.0);
            hits += toylang::grade(prompt, out);
            ++total;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

TrainReport train(const TrainConfig& config, const TrainInputs& inputs,
                  TrainMode mode) {
    config.validate();
    if (inputs.groups.empty()) {
        throw std::invalid_argument("train: dataset is empty");
    }
    if (inputs.rollout_prompt_count < 0 ||
        inputs.rollout_prompt_count > static_cast<int>(inputs.groups.size())) {
        throw std::invalid_argument("train: rollout prompt count out of range");
    }

    std::vector<Prompt> all_prompts;
    for (const auto& group : inputs.groups) {
        if (group.prompt.id != static_cast<int>(all_prompts.size())) {
            throw std::invalid_argument(
                "train: prompt ids must be contiguous from 0 in dataset order");
        }
        all_prompts.push_back(group.prompt);
        for (const Sequence& s : group.winners) {
            if (s.tokens.size() > static_cast<size_t>(config.max_len)) {
                throw std::invalid_argument(
                    "train: winner sequence exceeds max_len; regenerate the "
                    "dataset or raise --max-len");
            }
        }
        for (const Sequence& s : group.losers) {
            if (s.tokens.size() > static_cast<size_t>(config.max_len)) {
                throw std::invalid_argument(
                    "train: loser sequence exceeds max_len; regenerate the "
                    "dataset or raise --max-len");
            }
        }
    }

    const int rollout_count = inputs.rollout_prompt_count == 0
                                  ? static_cast<int>(all_prompts.size())
                                  : inputs.rollout_prompt_count;
    std::vector<Prompt> rollout_prompts(all_prompts.begin(),
                                        all_prompts.begin() + rollout_count);
    std::vector<Prompt> heldout_prompts(all_prompts.begin() + rollout_count,
                                        all_prompts.end());
    const std::vector<Prompt>& eval_prompts =
        heldout_prompts.empty() ? all_prompts : heldout_prompts;

    PolicyParams policy = init_tabular(static_cast<int>(all_prompts.size()),
                                       toylang::kVocabSize, config.max_len,
                                       config.init_scale, config.seed,
                                       toylang::kEndToken);
    const PolicyParams ref = snapshot(policy);
    PolicyParams pi_old = snapshot(policy);
    AdamState adam;

    TrainReport report;
    report.mode = mode;
    report.seed = config.seed;
    report.steps = config.steps;
    report.records.reserve(static_cast<size_t>(config.steps));

    size_t group_cursor = 0;
    for (int step = 0; step < config.steps; ++step) {
        ad::Tape tape;
        PolicyTape ptape(tape, policy);
        StepRecord rec;
        rec.step = step;

        ad::Value on_policy = tape.constant(0.0);
        std::vector<Trajectory> batch;
        if (mode_uses_onpolicy(mode)) {
            if (step % config.snapshot_every == 0) {
                pi_old = snapshot(policy);
            }
            // Round-robin prompt multiset of rollout_batch trajectories.
            std::vector<Prompt> step_prompts;
            step_prompts.reserve(static_cast<size_t>(config.rollout_batch));
            for (int i = 0; i < config.rollout_batch; ++i) {
                step_prompts.push_back(
                    rollout_prompts[i % rollout_prompts.size()]);
            }
            batch = rollout(pi_old, step_prompts, 1,
                            mix_seed(config.seed, static_cast<uint64_t>(step)));
            const AdvantageSet adv = compute_advantages(
                batch, policy, ref, config.beta_kl, config.normalize_adv);
            on_policy = onpolicy_loss(ptape, batch, adv, config.eps_clip);
            double reward_sum = 0.0;
            for (const Trajectory& t : batch) {
                reward_sum += t.reward;
            }
            rec.mean_reward = reward_sum / static_cast<double>(batch.size());
        }

        ad::Value gepo_pref = tape.constant(0.0);
        ad::Value gepo_var = tape.constant(0.0);
        std::vector<size_t> step_groups;
        if (mode_uses_preference(mode)) {
            step_groups.reserve(static_cast<size_t>(config.gepo_batch));
            for (int i = 0; i < config.gepo_batch; ++i) {
                step_groups.push_back(group_cursor);
                group_cursor = (group_cursor + 1) % inputs.groups.size();
            }
            ad::Value pref_sum = tape.constant(0.0);
            ad::Value var_sum = tape.constant(0.0);
            for (size_t gi : step_groups) {
                const auto& group = inputs.groups[gi];
                if (mode == TrainMode::Dpo) {
                    pref_sum = tape.add(
                        pref_sum,
                        dpo_loss(ptape, ref, group.prompt, group.winners.front(),
                                 group.losers.front(), config.beta));
                } else {
                    GepoTerms terms =
                        gepo_loss(ptape, ref, group, config.beta, config.lambda);
                    pref_sum = tape.add(pref_sum, terms.pref);
                    var_sum = tape.add(var_sum, terms.var);
                }
            }
            ad::Value denom =
                tape.constant(static_cast<double>(step_groups.size()));
            gepo_pref = tape.div(pref_sum, denom);
            gepo_var = tape.div(var_sum, denom);
        }

        ad::Value gepo_total =
            tape.add(gepo_pref, tape.mul(tape.constant(config.lambda), gepo_var));
        ad::Value combined;
        if (mode == TrainMode::Gepo) {
            combined = gepo_total;
        } else {
            combined = oorl_loss(on_policy, gepo_total, config.w_rl, config.w_gepo);
        }

        rec.on_policy_loss = tape.value(on_policy);
        rec.gepo_pref = tape.value(gepo_pref);
        rec.gepo_var = tape.value(gepo_var);
        rec.combined = tape.value(combined);

        const ad::GradientMap grads = tape.backward(combined);
        LogitTable grad_table(policy.num_prompts(), policy.max_len(),
                              policy.vocab());
        ptape.accumulate_gradient(grads, grad_table);
        double sq = 0.0;
        for (double g : grad_table.data) {
            sq += g * g;
        }
        rec.grad_norm = std::sqrt(sq);

        adam_step(policy, grad_table, adam, config, scheduled_lr(config, step));

        // Winner-ratio variance is measured after the update; before the
        // first update the policy equals the reference and every ratio is 0.
        if (mode_uses_preference(mode)) {
            double var_sum = 0.0;
            for (size_t gi : step_groups) {
                const auto& group = inputs.groups[gi];
                std::vector<double> ratios;
                ratios.reserve(group.winners.size());
                for (const Sequence& w : group.winners) {
                    ratios.push_back(log_prob(policy, group.prompt, w) -
                                     log_prob(ref, group.prompt, w));
                }
                var_sum += sample_variance(ratios);
            }
            rec.winner_ratio_variance =
                var_sum / static_cast<double>(step_groups.size());
        }

        report.records.push_back(rec);
    }

    report.success_rate =
        evaluate_success(policy, eval_prompts, config.eval_samples,
                         mix_seed(config.seed, 0xe7a1ull));
    return report;
}

}  // namespace oorl
