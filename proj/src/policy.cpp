// SPDX-License-Identifier: Apache-2.0

#include "oorl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace oorl {

namespace {

void check_prompt(const PolicyParams& policy, const Prompt& prompt) {
    if (prompt.id < 0 || prompt.id >= policy.num_prompts()) {
        throw std::out_of_range("policy: unknown prompt id " +
                                std::to_string(prompt.id));
    }
}

void check_sequence(const PolicyParams& policy, const Sequence& y) {
    if (y.tokens.size() > static_cast<size_t>(policy.max_len())) {
        throw std::invalid_argument("policy: sequence longer than max_len");
    }
    for (size_t t = 0; t < y.tokens.size(); ++t) {
        const int tok = y.tokens[t];
        if (tok < 0 || tok >= policy.vocab()) {
            throw std::out_of_range("policy: token out of range");
        }
        if (tok == policy.eos_id && t + 1 != y.tokens.size()) {
            throw std::invalid_argument(
                "policy: end-of-sequence token before final position");
        }
    }
}

double row_logsumexp_plain(std::span<const double> row) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : row) {
        m = std::max(m, x);
    }
    double sum = 0.0;
    for (double x : row) {
        sum += std::exp(x - m);
    }
    return m + std::log(sum);
}

}  // namespace

PolicyParams init_tabular(int num_prompts, int vocab_size, int max_len,
                          double init_scale, uint64_t seed, int eos_id) {
    if (num_prompts < 1 || vocab_size < 1 || max_len < 1) {
        throw std::invalid_argument("init_tabular: counts must be >= 1");
    }
    if (init_scale < 0.0) {
        throw std::invalid_argument("init_tabular: init_scale must be >= 0");
    }
    if (eos_id < 0 || eos_id >= vocab_size) {
        throw std::invalid_argument("init_tabular: eos_id out of range");
    }
    PolicyParams p;
    p.logits = LogitTable(num_prompts, max_len, vocab_size);
    p.eos_id = eos_id;
    std::mt19937_64 rng(seed);
    if (init_scale > 0.0) {
        for (double& x : p.logits.data) {
            x = -init_scale + 2.0 * init_scale * canonical_double(rng);
        }
    }
    return p;
}

PolicyParams snapshot(const PolicyParams& policy) {
    PolicyParams copy = policy;
    copy.frozen = true;
    return copy;
}

std::vector<double> token_log_probs(const PolicyParams& policy,
                                    const Prompt& prompt, const Sequence& y) {
    check_prompt(policy, prompt);
    check_sequence(policy, y);
    std::vector<double> out;
    out.reserve(y.tokens.size());
    for (size_t t = 0; t < y.tokens.size(); ++t) {
        const auto row = policy.logits.row(prompt.id, static_cast<int>(t));
        const double lse = row_logsumexp_plain(row);
        out.push_back(row[y.tokens[t]] - lse);
    }
    return out;
}

double log_prob(const PolicyParams& policy, const Prompt& prompt,
                const Sequence& y) {
    double total = 0.0;
    for (double lp : token_log_probs(policy, prompt, y)) {
        total += lp;
    }
    return total;
}

PolicyTape::PolicyTape(ad::Tape& tape, const PolicyParams& policy)
    : tape_(tape),
      policy_(policy),
      row_index_(static_cast<size_t>(policy.num_prompts()) * policy.max_len(), -1) {
    if (policy.frozen) {
        throw std::invalid_argument(
            "PolicyTape: frozen policies are not gradient targets");
    }
}

PolicyTape::Row& PolicyTape::row(int prompt, int pos) {
    const int32_t key = prompt * policy_.max_len() + pos;
    int32_t slot = row_index_[key];
    if (slot < 0) {
        Row r;
        r.logits.reserve(policy_.vocab());
        for (int v = 0; v < policy_.vocab(); ++v) {
            r.logits.push_back(tape_.param(policy_.logits.at(prompt, pos, v)));
        }
        r.lse = tape_.logsumexp(r.logits);
        slot = static_cast<int32_t>(rows_.size());
        rows_.push_back(std::move(r));
        row_index_[key] = slot;
        row_keys_.push_back(key);
    }
    return rows_[slot];
}

ad::Value PolicyTape::row_logsumexp(int prompt, int pos) {
    return row(prompt, pos).lse;
}

ad::Value PolicyTape::logit(int prompt, int pos, int token) {
    return row(prompt, pos).logits[token];
}

ad::Value PolicyTape::token_log_prob(int prompt, int pos, int token) {
    Row& r = row(prompt, pos);
    return tape_.sub(r.logits[token], r.lse);
}

ad::Value PolicyTape::seq_log_prob(const Prompt& prompt, const Sequence& y) {
    check_prompt(policy_, prompt);
    check_sequence(policy_, y);
    if (y.tokens.empty()) {
        return tape_.constant(0.0);
    }
    ad::Value total = token_log_prob(prompt.id, 0, y.tokens[0]);
    for (size_t t = 1; t < y.tokens.size(); ++t) {
        total = tape_.add(
            total, token_log_prob(prompt.id, static_cast<int>(t), y.tokens[t]));
    }
    return total;
}

void PolicyTape::accumulate_gradient(const ad::GradientMap& grads,
                                     LogitTable& out) const {
    for (size_t i = 0; i < row_keys_.size(); ++i) {
        const int32_t key = row_keys_[i];
        const int prompt = key / policy_.max_len();
        const int pos = key % policy_.max_len();
        const Row& r = rows_[i];
        for (int v = 0; v < policy_.vocab(); ++v) {
            out.at(prompt, pos, v) += grads.at(r.logits[v]);
        }
    }
}

Sequence sample(const PolicyParams& policy, const Prompt& prompt,
                uint64_t rng_seed, double temperature) {
    check_prompt(policy, prompt);
    if (temperature < 0.0) {
        throw std::invalid_argument("sample: temperature must be positive");
    }
    const bool argmax_mode = temperature <= 1e-6;
    std::mt19937_64 rng(rng_seed);
    Sequence seq;
    for (int t = 0; t < policy.max_len(); ++t) {
        const auto row = policy.logits.row(prompt.id, t);
        int tok = 0;
        if (argmax_mode) {
            for (int v = 1; v < policy.vocab(); ++v) {
                if (row[v] > row[tok]) {
                    tok = v;  // ties keep the lowest token id
                }
            }
        } else {
            double m = -std::numeric_limits<double>::infinity();
            for (double x : row) {
                m = std::max(m, x);
            }
            double sum = 0.0;
            std::vector<double> w(policy.vocab());
            for (int v = 0; v < policy.vocab(); ++v) {
                w[v] = std::exp((row[v] - m) / temperature);
                sum += w[v];
            }
            const double u = canonical_double(rng) * sum;
            double acc = 0.0;
            tok = policy.vocab() - 1;  // guards against roundoff at u ~= sum
            for (int v = 0; v < policy.vocab(); ++v) {
                acc += w[v];
                if (u < acc) {
                    tok = v;
                    break;
                }
            }
        }
        seq.tokens.push_back(tok);
        if (tok == policy.eos_id) {
            break;
        }
    }
    return seq;
}

std::vector<std::pair<Sequence, double>> enumerate_distribution(
    const PolicyParams& policy, const Prompt& prompt, double enumeration_cap) {
    check_prompt(policy, prompt);
    const double space =
        std::pow(static_cast<double>(policy.vocab()), policy.max_len());
    if (space > enumeration_cap) {
        throw std::length_error("enumerate_distribution: vocab^max_len " +
                                std::to_string(space) + " exceeds cap");
    }

    // Per-position conditionals are prefix-independent, so compute each row's
    // probability vector once.
    std::vector<std::vector<double>> probs(policy.max_len());
    for (int t = 0; t < policy.max_len(); ++t) {
        const auto row = policy.logits.row(prompt.id, t);
        const double lse = row_logsumexp_plain(row);
        probs[t].resize(policy.vocab());
        for (int v = 0; v < policy.vocab(); ++v) {
            probs[t][v] = std::exp(row[v] - lse);
        }
    }

    std::vector<std::pair<Sequence, double>> out;
    std::vector<int> prefix;
    auto dfs = [&](auto&& self, int pos, double p) -> void {
        for (int v = 0; v < policy.vocab(); ++v) {
            prefix.push_back(v);
            const double pv = p * probs[pos][v];
            if (v == policy.eos_id || pos + 1 == policy.max_len()) {
                out.push_back({Sequence{prefix}, pv});
            } else {
                self(self, pos + 1, pv);
            }
            prefix.pop_back();
        }
    };
    dfs(dfs, 0, 1.0);
    return out;
}

}  // namespace oorl
