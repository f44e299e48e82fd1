// SPDX-License-Identifier: Apache-2.0

#include "oorl/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace oorl {

ad::Value log_ratio(PolicyTape& policy, const PolicyParams& ref,
                    const Prompt& prompt, const Sequence& y) {
    if (!ref.frozen) {
        throw std::invalid_argument("log_ratio: reference must be frozen");
    }
    ad::Tape& tape = policy.tape();
    return tape.sub(policy.seq_log_prob(prompt, y),
                    tape.constant(log_prob(ref, prompt, y)));
}

ad::Value dpo_loss(PolicyTape& policy, const PolicyParams& ref,
                   const Prompt& prompt, const Sequence& y_w,
                   const Sequence& y_l, double beta) {
    if (beta <= 0.0) {
        throw std::invalid_argument("dpo_loss: beta must be positive");
    }
    ad::Value rw = log_ratio(policy, ref, prompt, y_w);
    ad::Value rl = log_ratio(policy, ref, prompt, y_l);
    ad::Tape& tape = policy.tape();
    ad::Value z = tape.mul(tape.constant(beta), tape.sub(rw, rl));
    return tape.neg(tape.log(tape.sigmoid(z)));
}

AdvantageSet compute_advantages(std::span<const Trajectory> batch,
                                const PolicyParams& policy,
                                const PolicyParams& ref, double beta_kl,
                                bool normalize) {
    if (batch.empty()) {
        throw std::invalid_argument("compute_advantages: empty batch");
    }
    AdvantageSet out;
    out.per_token.reserve(batch.size());

    // Suffix returns of the shaped per-token rewards.
    for (const Trajectory& traj : batch) {
        const size_t len = traj.output.tokens.size();
        std::vector<double> shaped(len, 0.0);
        if (beta_kl != 0.0) {
            const auto lp = token_log_probs(policy, traj.prompt, traj.output);
            const auto lp_ref = token_log_probs(ref, traj.prompt, traj.output);
            for (size_t t = 0; t < len; ++t) {
                shaped[t] = -beta_kl * (lp[t] - lp_ref[t]);
            }
        }
        if (len > 0) {
            shaped[len - 1] += static_cast<double>(traj.reward);
        }
        std::vector<double> returns(len, 0.0);
        double acc = 0.0;
        for (size_t t = len; t-- > 0;) {
            acc += shaped[t];
            returns[t] = acc;
        }
        out.per_token.push_back(std::move(returns));
    }

    size_t count = 0;
    double mean = 0.0;
    for (const auto& traj : out.per_token) {
        for (double r : traj) {
            mean += r;
            ++count;
        }
    }
    if (count == 0) {
        return out;
    }
    mean /= static_cast<double>(count);

    double var = 0.0;
    for (auto& traj : out.per_token) {
        for (double& r : traj) {
            r -= mean;
            var += r * r;
        }
    }
    if (normalize && batch.size() > 1) {
        const double stddev = std::sqrt(var / static_cast<double>(count));
        for (auto& traj : out.per_token) {
            for (double& r : traj) {
                r /= stddev + 1e-8;
            }
        }
    }
    return out;
}

ad::Value onpolicy_loss(PolicyTape& policy, std::span<const Trajectory> batch,
                        const AdvantageSet& advantages, double eps_clip) {
    if (eps_clip <= 0.0 || eps_clip >= 1.0) {
        throw std::invalid_argument("onpolicy_loss: eps_clip must be in (0, 1)");
    }
    if (batch.size() != advantages.per_token.size()) {
        throw std::invalid_argument("onpolicy_loss: batch/advantage mismatch");
    }
    ad::Tape& tape = policy.tape();
    const size_t total = advantages.total_tokens();
    if (total == 0) {
        return tape.constant(0.0);
    }

    ad::Value sum = tape.constant(0.0);
    for (size_t i = 0; i < batch.size(); ++i) {
        const Trajectory& traj = batch[i];
        const auto& adv = advantages.per_token[i];
        if (adv.size() != traj.output.tokens.size() ||
            adv.size() != traj.old_log_probs.size()) {
            throw std::invalid_argument("onpolicy_loss: token count mismatch");
        }
        for (size_t t = 0; t < adv.size(); ++t) {
            ad::Value lp = policy.token_log_prob(
                traj.prompt.id, static_cast<int>(t), traj.output.tokens[t]);
            ad::Value ratio =
                tape.exp(tape.sub(lp, tape.constant(traj.old_log_probs[t])));
            ad::Value a = tape.constant(adv[t]);
            ad::Value unclipped = tape.mul(ratio, a);
            ad::Value clipped =
                tape.mul(tape.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip), a);
            sum = tape.add(sum, tape.min(unclipped, clipped));
        }
    }
    return tape.neg(tape.div(sum, tape.constant(static_cast<double>(total))));
}

GepoTerms gepo_terms_from_ratios(ad::Tape& tape,
                                 std::span<const ad::Value> winner_ratios,
                                 std::span<const ad::Value> loser_ratios,
                                 double beta) {
    if (winner_ratios.empty() || loser_ratios.empty()) {
        throw std::invalid_argument("gepo: winner and loser sets must be nonempty");
    }
    if (beta <= 0.0) {
        throw std::invalid_argument("gepo: beta must be positive");
    }
    const auto mean_of = [&](std::span<const ad::Value> xs) {
        ad::Value s = xs[0];
        for (size_t i = 1; i < xs.size(); ++i) {
            s = tape.add(s, xs[i]);
        }
        return tape.div(s, tape.constant(static_cast<double>(xs.size())));
    };

    ad::Value winner_mean = mean_of(winner_ratios);
    ad::Value loser_mean = mean_of(loser_ratios);
    ad::Value z =
        tape.mul(tape.constant(beta), tape.sub(winner_mean, loser_mean));
    ad::Value pref = tape.neg(tape.log(tape.sigmoid(z)));

    const size_t n = winner_ratios.size();
    ad::Value var = tape.constant(0.0);
    if (n >= 2) {
        ad::Value ss = tape.constant(0.0);
        for (const ad::Value& r : winner_ratios) {
            ss = tape.add(ss, tape.square(tape.sub(r, winner_mean)));
        }
        var = tape.mul(
            tape.constant(beta * beta / static_cast<double>(n - 1)), ss);
    }
    return GepoTerms{pref, var};
}

GepoTerms gepo_loss(PolicyTape& policy, const PolicyParams& ref,
                    const toylang::PreferenceGroup& group, double beta,
                    double lambda) {
    if (lambda < 0.0) {
        throw std::invalid_argument("gepo_loss: lambda must be >= 0");
    }
    std::vector<ad::Value> winner_ratios;
    winner_ratios.reserve(group.winners.size());
    for (const Sequence& y : group.winners) {
        winner_ratios.push_back(log_ratio(policy, ref, group.prompt, y));
    }
    std::vector<ad::Value> loser_ratios;
    loser_ratios.reserve(group.losers.size());
    for (const Sequence& y : group.losers) {
        loser_ratios.push_back(log_ratio(policy, ref, group.prompt, y));
    }
    return gepo_terms_from_ratios(policy.tape(), winner_ratios, loser_ratios,
                                  beta);
}

ad::Value oorl_loss(ad::Value on_policy, ad::Value gepo_total, double w_rl,
                    double w_gepo) {
    if (w_rl < 0.0 || w_gepo < 0.0) {
        throw std::invalid_argument("oorl_loss: weights must be >= 0");
    }
    ad::Tape& tape = *on_policy.tape;
    return tape.add(tape.mul(tape.constant(w_rl), on_policy),
                    tape.mul(tape.constant(w_gepo), gepo_total));
}

}  // namespace oorl
