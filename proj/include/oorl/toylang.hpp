// SPDX-License-Identifier: Apache-2.0
//
// The toy translation environment: reverse-Polish arithmetic source
// programs, a stack-machine target language, a binary grader, and the
// equivalent/inequivalent group generator.
//
// Token vocabulary (shared by prompts and outputs, |V| = 14):
//   0        END   (doubles as the policy end-of-sequence token)
//   1..10    digit 0..9 (as an output token it means PUSH digit)
//   11       ADD / '+'
//   12       SUB / '-'
//   13       MUL / '*'

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oorl/policy.hpp"

namespace oorl::toylang {

inline constexpr int kVocabSize = 14;
inline constexpr int kEndToken = 0;
inline constexpr int kAddToken = 11;
inline constexpr int kSubToken = 12;
inline constexpr int kMulToken = 13;

inline constexpr int digit_token(int d) { return 1 + d; }

enum class Op : uint8_t { Push, Add, Sub, Mul, End };

struct Instr {
    Op op;
    int operand = 0;  // digit for Push, unused otherwise

    bool operator==(const Instr&) const = default;
};

struct IrProgram {
    std::vector<Instr> instrs;

    bool operator==(const IrProgram&) const = default;
};

/// Well-formed RPN expression over digits and {+, -, *}.
struct SourceExpr {
    std::vector<int> rpn;  // same token ids as the shared vocabulary
    int64_t value = 0;

    std::string text() const;  // e.g. "2 3 * 4 -"
};

enum class OptLevel {
    O0,  // literal token-to-instruction mapping
    O1,  // constant-folds maximal proper subtrees with <= 2 operators
    O2,  // full fold to a digit-wise PUSH chain of the value
};

/// Seeded random well-formed expression with |value| <= value_bound
/// (rejection-sampled).
SourceExpr gen_source(uint64_t seed, int max_operators, int64_t value_bound);

/// Parses an RPN token list; std::nullopt when malformed.
std::optional<SourceExpr> parse_source(const std::vector<int>& rpn_tokens);

IrProgram compile_at(const SourceExpr& expr, OptLevel level);

/// Stack-machine execution; std::nullopt on underflow, on a final stack size
/// other than one, or on an empty program. Execution halts at the first End.
std::optional<int64_t> execute(const IrProgram& ir);

Sequence encode(const IrProgram& ir);
/// Exact inverse of encode for in-vocabulary tokens. Tokens after the first
/// END are ignored; std::nullopt when any token before it is out of range.
std::optional<IrProgram> decode(const std::vector<int>& tokens);

Prompt render_prompt(const SourceExpr& expr, int prompt_id);
std::optional<SourceExpr> parse_prompt(const Prompt& prompt);

/// Binary rule reward: 1 iff the output decodes, executes without underflow,
/// leaves exactly one stack value, and that value equals the source value.
/// Total and deterministic; malformed input is reward 0, never an exception.
int grade(const Prompt& prompt, const Sequence& output);

/// One random semantics-changing mutation (literal change, operator swap,
/// PUSH+op pair deletion, adjacent swap). Accepts the mutant only if it fails
/// to execute or evaluates to a different value; retries up to max_attempts.
std::optional<IrProgram> mutate_inequivalent(const IrProgram& ir,
                                             uint64_t rng_seed,
                                             int max_attempts);

struct PreferenceGroup {
    Prompt prompt;
    std::vector<Sequence> winners;
    std::vector<Sequence> losers;
    std::string source_rpn;
    int64_t value = 0;
};

struct GroupBuildStats {
    int emitted = 0;
    int skipped_winner_collapse = 0;
    int skipped_loser_exhausted = 0;
    int skipped_too_long = 0;
};

/// Winners are distinct opt-level renderings (taken in O0, O1, O2 order after
/// deduplication); losers are verified-inequivalent mutants. Expressions that
/// cannot provide n distinct winners, m distinct losers, or whose sequences
/// exceed max_seq_len are skipped and counted. Requires 1 <= n <= 3.
std::vector<PreferenceGroup> build_preference_groups(
    const std::vector<SourceExpr>& exprs, int n, int m, uint64_t seed,
    int max_seq_len, GroupBuildStats* stats = nullptr);

/// Group invariant check: n,m >= 1, winners grade 1, losers grade 0, no
/// duplicate sequence in the union. Returns false with a reason on failure.
bool validate_group(const PreferenceGroup& group, std::string* why = nullptr);

}  // namespace oorl::toylang
