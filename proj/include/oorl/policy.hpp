// SPDX-License-Identifier: Apache-2.0
//
// Tabular autoregressive categorical policies.
//
// A policy holds one logit row per (prompt id, position); the conditional
// distribution at step t depends on the position only, never on the sampled
// prefix. That keeps the full output distribution of small instances exactly
// enumerable, which the oracle module relies on.
//
// Termination convention: a sequence is complete iff its last token is the
// end-of-sequence id or its length equals max_len. Length-max_len sequences
// need no terminator, so the probabilities of all complete sequences sum to
// exactly 1.
//
// All randomness comes from std::mt19937_64. Uniform doubles are derived as
// (x >> 11) * 2^-53 so that sampling is bit-reproducible across platforms.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "oorl/autodiff.hpp"

namespace oorl {

/// Token list over a vocabulary [0, vocab). The end-of-sequence id may
/// appear at most once and only as the final token.
struct Sequence {
    std::vector<int> tokens;

    bool operator==(const Sequence&) const = default;
    bool terminated(int eos_id) const {
        return !tokens.empty() && tokens.back() == eos_id;
    }
};

struct Prompt {
    int id = 0;
    Sequence tokens;
};

/// Dense (prompt, position, token) table shared by logits, gradients and
/// optimizer moments.
struct LogitTable {
    int num_prompts = 0;
    int max_len = 0;
    int vocab = 0;
    std::vector<double> data;

    LogitTable() = default;
    LogitTable(int prompts, int len, int vocab_size)
        : num_prompts(prompts),
          max_len(len),
          vocab(vocab_size),
          data(static_cast<size_t>(prompts) * len * vocab_size, 0.0) {}

    size_t index(int prompt, int pos, int token) const {
        return (static_cast<size_t>(prompt) * max_len + pos) * vocab + token;
    }
    double& at(int prompt, int pos, int token) { return data[index(prompt, pos, token)]; }
    double at(int prompt, int pos, int token) const { return data[index(prompt, pos, token)]; }
    std::span<const double> row(int prompt, int pos) const {
        return {data.data() + index(prompt, pos, 0), static_cast<size_t>(vocab)};
    }
};

struct PolicyParams {
    LogitTable logits;
    int eos_id = 0;
    bool frozen = false;

    int vocab() const { return logits.vocab; }
    int max_len() const { return logits.max_len; }
    int num_prompts() const { return logits.num_prompts; }
};

/// Logits drawn i.i.d. uniform in [-init_scale, init_scale] from the seeded
/// generator; init_scale = 0 gives the uniform policy.
PolicyParams init_tabular(int num_prompts, int vocab_size, int max_len,
                          double init_scale, uint64_t seed, int eos_id = 0);

/// Deep copy with frozen = true; never a gradient target afterwards.
PolicyParams snapshot(const PolicyParams& policy);

/// Sum over positions of log softmax(logits[prompt, t])[y_t]. Every emitted
/// token contributes, including the end-of-sequence token itself.
double log_prob(const PolicyParams& policy, const Prompt& prompt,
                const Sequence& y);

/// Per-token log-probabilities, same convention as log_prob.
std::vector<double> token_log_probs(const PolicyParams& policy,
                                    const Prompt& prompt, const Sequence& y);

/// Binds a tape to one trainable policy. Logit rows become tape params
/// lazily, one row per visited (prompt, position); rows are cached so that
/// every sequence in a batch shares the same param nodes.
class PolicyTape {
  public:
    PolicyTape(ad::Tape& tape, const PolicyParams& policy);

    ad::Tape& tape() { return tape_; }
    const PolicyParams& policy() const { return policy_; }

    /// Param nodes for the full logit row at (prompt, pos), plus the cached
    /// logsumexp over the row.
    ad::Value row_logsumexp(int prompt, int pos);
    ad::Value logit(int prompt, int pos, int token);

    /// Differentiable sequence log-probability.
    ad::Value seq_log_prob(const Prompt& prompt, const Sequence& y);
    /// Differentiable per-token log-probability at one step.
    ad::Value token_log_prob(int prompt, int pos, int token);

    /// Folds a GradientMap into a dense table aligned with the policy logits.
    /// Unvisited rows stay exactly 0. Accumulation order is fixed by first
    /// visit, so results are deterministic.
    void accumulate_gradient(const ad::GradientMap& grads, LogitTable& out) const;

  private:
    struct Row {
        std::vector<ad::Value> logits;
        ad::Value lse;
    };
    Row& row(int prompt, int pos);

    ad::Tape& tape_;
    const PolicyParams& policy_;
    std::vector<int32_t> row_index_;   // (prompt*max_len + pos) -> rows_ slot or -1
    std::vector<int32_t> row_keys_;    // creation order, for deterministic folds
    std::vector<Row> rows_;
};

/// Ancestral sampling until end-of-sequence or max_len. temperature <= 1e-6
/// selects the per-position argmax with lowest-token-id tie-breaking.
Sequence sample(const PolicyParams& policy, const Prompt& prompt,
                uint64_t rng_seed, double temperature);

/// Every complete sequence with its exact probability, in depth-first token
/// order. Throws when vocab^max_len exceeds the cap.
std::vector<std::pair<Sequence, double>> enumerate_distribution(
    const PolicyParams& policy, const Prompt& prompt,
    double enumeration_cap = 1e6);

/// Uniform double in [0, 1) from the top 53 bits of the generator output.
inline double canonical_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace oorl
