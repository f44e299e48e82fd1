// SPDX-License-Identifier: Apache-2.0

#include "oorl/toylang.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>

namespace oorl::toylang {

namespace {

bool is_digit_token(int t) { return t >= 1 && t <= 10; }
bool is_op_token(int t) {
    return t == kAddToken || t == kSubToken || t == kMulToken;
}

int64_t apply_op(int op_token, int64_t a, int64_t b) {
    switch (op_token) {
        case kAddToken: return a + b;
        case kSubToken: return a - b;
        default: return a * b;
    }
}

// Expression tree used by gen_source and the O1 folder.
struct ExprNode {
    int token;  // digit or operator token
    int left = -1;
    int right = -1;
    int64_t value = 0;
    int op_count = 0;
};

struct ExprTree {
    std::vector<ExprNode> nodes;
    int root = -1;
};

// Parses RPN into a tree; -1 root when malformed.
ExprTree parse_tree(const std::vector<int>& rpn) {
    ExprTree tree;
    std::vector<int> stack;
    for (int t : rpn) {
        if (is_digit_token(t)) {
            tree.nodes.push_back({t, -1, -1, t - 1, 0});
            stack.push_back(static_cast<int>(tree.nodes.size()) - 1);
        } else if (is_op_token(t)) {
            if (stack.size() < 2) {
                return {};
            }
            const int rhs = stack.back();
            stack.pop_back();
            const int lhs = stack.back();
            stack.pop_back();
            ExprNode node{t, lhs, rhs,
                          apply_op(t, tree.nodes[lhs].value, tree.nodes[rhs].value),
                          tree.nodes[lhs].op_count + tree.nodes[rhs].op_count + 1};
            tree.nodes.push_back(node);
            stack.push_back(static_cast<int>(tree.nodes.size()) - 1);
        } else {
            return {};
        }
    }
    if (stack.size() != 1) {
        return {};
    }
    ExprTree out = std::move(tree);
    out.root = stack[0];
    return out;
}

// Digit-wise rendering of an arbitrary integer: v = ((d1 * 10 + d2) * 10 + ...)
// built from pushable digits; negatives as 0 - |v|. Add-zero steps are elided.
void render_const(int64_t v, std::vector<Instr>& out) {
    if (v < 0) {
        out.push_back({Op::Push, 0});
        render_const(-v, out);
        out.push_back({Op::Sub, 0});
        return;
    }
    if (v <= 9) {
        out.push_back({Op::Push, static_cast<int>(v)});
        return;
    }
    std::vector<int> digits;
    for (int64_t x = v; x > 0; x /= 10) {
        digits.push_back(static_cast<int>(x % 10));
    }
    std::reverse(digits.begin(), digits.end());
    out.push_back({Op::Push, digits[0]});
    for (size_t i = 1; i < digits.size(); ++i) {
        // times ten: 9 + 1 pushed, added, multiplied in
        out.push_back({Op::Push, 9});
        out.push_back({Op::Push, 1});
        out.push_back({Op::Add, 0});
        out.push_back({Op::Mul, 0});
        if (digits[i] != 0) {
            out.push_back({Op::Push, digits[i]});
            out.push_back({Op::Add, 0});
        }
    }
}

Instr op_instr(int token) {
    switch (token) {
        case kAddToken: return {Op::Add, 0};
        case kSubToken: return {Op::Sub, 0};
        default: return {Op::Mul, 0};
    }
}

void emit_literal(const ExprTree& tree, int node, std::vector<Instr>& out) {
    const ExprNode& n = tree.nodes[node];
    if (is_digit_token(n.token)) {
        out.push_back({Op::Push, n.token - 1});
        return;
    }
    emit_literal(tree, n.left, out);
    emit_literal(tree, n.right, out);
    out.push_back(op_instr(n.token));
}

// O1: folds every maximal proper subtree holding one or two operators; the
// root itself is never folded, so O1 stays a partial optimization level.
void emit_o1(const ExprTree& tree, int node, bool is_root,
             std::vector<Instr>& out) {
    const ExprNode& n = tree.nodes[node];
    if (is_digit_token(n.token)) {
        out.push_back({Op::Push, n.token - 1});
        return;
    }
    if (!is_root && n.op_count <= 2) {
        render_const(n.value, out);
        return;
    }
    emit_o1(tree, n.left, false, out);
    emit_o1(tree, n.right, false, out);
    out.push_back(op_instr(n.token));
}

}  // namespace

std::string SourceExpr::text() const {
    std::string s;
    for (size_t i = 0; i < rpn.size(); ++i) {
        if (i > 0) {
            s += ' ';
        }
        const int t = rpn[i];
        if (is_digit_token(t)) {
            s += static_cast<char>('0' + (t - 1));
        } else if (t == kAddToken) {
            s += '+';
        } else if (t == kSubToken) {
            s += '-';
        } else {
            s += '*';
        }
    }
    return s;
}

std::optional<SourceExpr> parse_source(const std::vector<int>& rpn_tokens) {
    ExprTree tree = parse_tree(rpn_tokens);
    if (tree.root < 0) {
        return std::nullopt;
    }
    return SourceExpr{rpn_tokens, tree.nodes[tree.root].value};
}

SourceExpr gen_source(uint64_t seed, int max_operators, int64_t value_bound) {
    if (max_operators < 1) {
        throw std::invalid_argument("gen_source: max_operators must be >= 1");
    }
    std::mt19937_64 rng(seed);
    const int op_tokens[3] = {kAddToken, kSubToken, kMulToken};

    auto build = [&](auto&& self, int ops, std::vector<int>& rpn) -> void {
        if (ops == 0) {
            rpn.push_back(digit_token(static_cast<int>(rng() % 10)));
            return;
        }
        const int left_ops = static_cast<int>(rng() % static_cast<uint64_t>(ops));
        const int op = op_tokens[rng() % 3];
        self(self, left_ops, rpn);
        self(self, ops - 1 - left_ops, rpn);
        rpn.push_back(op);
    };

    while (true) {
        const int ops = 1 + static_cast<int>(rng() % static_cast<uint64_t>(max_operators));
        std::vector<int> rpn;
        build(build, ops, rpn);
        auto expr = parse_source(rpn);
        if (expr && std::llabs(expr->value) <= value_bound) {
            return *expr;
        }
    }
}

IrProgram compile_at(const SourceExpr& expr, OptLevel level) {
    ExprTree tree = parse_tree(expr.rpn);
    if (tree.root < 0) {
        throw std::invalid_argument("compile_at: malformed expression");
    }
    IrProgram ir;
    switch (level) {
        case OptLevel::O0:
            emit_literal(tree, tree.root, ir.instrs);
            break;
        case OptLevel::O1:
            emit_o1(tree, tree.root, true, ir.instrs);
            break;
        case OptLevel::O2:
            render_const(tree.nodes[tree.root].value, ir.instrs);
            break;
    }
    ir.instrs.push_back({Op::End, 0});
    return ir;
}

std::optional<int64_t> execute(const IrProgram& ir) {
    std::vector<int64_t> stack;
    for (const Instr& ins : ir.instrs) {
        switch (ins.op) {
            case Op::Push:
                stack.push_back(ins.operand);
                break;
            case Op::Add:
            case Op::Sub:
            case Op::Mul: {
                if (stack.size() < 2) {
                    return std::nullopt;
                }
                const int64_t b = stack.back();
                stack.pop_back();
                const int64_t a = stack.back();
                stack.pop_back();
                const int64_t r = ins.op == Op::Add   ? a + b
                                  : ins.op == Op::Sub ? a - b
                                                      : a * b;
                stack.push_back(r);
                break;
            }
            case Op::End:
                goto done;
        }
    }
done:
    if (stack.size() != 1) {
        return std::nullopt;
    }
    return stack[0];
}

Sequence encode(const IrProgram& ir) {
    Sequence seq;
    seq.tokens.reserve(ir.instrs.size());
    for (const Instr& ins : ir.instrs) {
        switch (ins.op) {
            case Op::Push: seq.tokens.push_back(digit_token(ins.operand)); break;
            case Op::Add: seq.tokens.push_back(kAddToken); break;
            case Op::Sub: seq.tokens.push_back(kSubToken); break;
            case Op::Mul: seq.tokens.push_back(kMulToken); break;
            case Op::End: seq.tokens.push_back(kEndToken); break;
        }
    }
    return seq;
}

std::optional<IrProgram> decode(const std::vector<int>& tokens) {
    IrProgram ir;
    for (int t : tokens) {
        if (t == kEndToken) {
            ir.instrs.push_back({Op::End, 0});
            break;
        }
        if (is_digit_token(t)) {
            ir.instrs.push_back({Op::Push, t - 1});
        } else if (t == kAddToken) {
            ir.instrs.push_back({Op::Add, 0});
        } else if (t == kSubToken) {
            ir.instrs.push_back({Op::Sub, 0});
        } else if (t == kMulToken) {
            ir.instrs.push_back({Op::Mul, 0});
        } else {
            return std::nullopt;
        }
    }
    return ir;
}

Prompt render_prompt(const SourceExpr& expr, int prompt_id) {
    return Prompt{prompt_id, Sequence{expr.rpn}};
}

std::optional<SourceExpr> parse_prompt(const Prompt& prompt) {
    return parse_source(prompt.tokens.tokens);
}

int grade(const Prompt& prompt, const Sequence& output) {
    const auto src = parse_prompt(prompt);
    if (!src) {
        return 0;
    }
    const auto ir = decode(output.tokens);
    if (!ir) {
        return 0;
    }
    const auto value = execute(*ir);
    return (value && *value == src->value) ? 1 : 0;
}

std::optional<IrProgram> mutate_inequivalent(const IrProgram& ir,
                                             uint64_t rng_seed,
                                             int max_attempts) {
    const auto base_value = execute(ir);
    if (!base_value) {
        throw std::invalid_argument("mutate_inequivalent: base IR must execute");
    }
    std::mt19937_64 rng(rng_seed);

    // Mutation sites exclude the trailing End marker.
    size_t body_len = ir.instrs.size();
    while (body_len > 0 && ir.instrs[body_len - 1].op == Op::End) {
        --body_len;
    }

    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        IrProgram mutant = ir;
        const int kind = static_cast<int>(rng() % 4);
        bool applied = false;
        switch (kind) {
            case 0: {  // change a PUSH literal
                std::vector<size_t> sites;
                for (size_t i = 0; i < body_len; ++i) {
                    if (ir.instrs[i].op == Op::Push) {
                        sites.push_back(i);
                    }
                }
                if (!sites.empty()) {
                    const size_t i = sites[rng() % sites.size()];
                    const int from = ir.instrs[i].operand;
                    int to = static_cast<int>(rng() % 9);
                    if (to >= from) {
                        ++to;
                    }
                    mutant.instrs[i].operand = to;
                    applied = true;
                }
                break;
            }
            case 1: {  // swap an operator for a different one
                std::vector<size_t> sites;
                for (size_t i = 0; i < body_len; ++i) {
                    const Op op = ir.instrs[i].op;
                    if (op == Op::Add || op == Op::Sub || op == Op::Mul) {
                        sites.push_back(i);
                    }
                }
                if (!sites.empty()) {
                    const size_t i = sites[rng() % sites.size()];
                    const Op ops[3] = {Op::Add, Op::Sub, Op::Mul};
                    Op to = ops[rng() % 3];
                    while (to == ir.instrs[i].op) {
                        to = ops[rng() % 3];
                    }
                    mutant.instrs[i].op = to;
                    applied = true;
                }
                break;
            }
            case 2: {  // delete an adjacent PUSH + operator pair
                std::vector<size_t> sites;
                for (size_t i = 0; i + 1 < body_len; ++i) {
                    const Op next = ir.instrs[i + 1].op;
                    if (ir.instrs[i].op == Op::Push &&
                        (next == Op::Add || next == Op::Sub || next == Op::Mul)) {
                        sites.push_back(i);
                    }
                }
                if (!sites.empty()) {
                    const size_t i = sites[rng() % sites.size()];
                    mutant.instrs.erase(mutant.instrs.begin() + i,
                                        mutant.instrs.begin() + i + 2);
                    applied = true;
                }
                break;
            }
            default: {  // swap two adjacent instructions
                if (body_len >= 2) {
                    const size_t i = rng() % (body_len - 1);
                    std::swap(mutant.instrs[i], mutant.instrs[i + 1]);
                    applied = true;
                }
                break;
            }
        }
        if (!applied || mutant == ir) {
            continue;
        }
        const auto value = execute(mutant);
        if (!value || *value != *base_value) {
            return mutant;
        }
    }
    return std::nullopt;
}

std::vector<PreferenceGroup> build_preference_groups(
    const std::vector<SourceExpr>& exprs, int n, int m, uint64_t seed,
    int max_seq_len, GroupBuildStats* stats) {
    if (n < 1 || n > 3) {
        throw std::invalid_argument(
            "build_preference_groups: n must be in [1, 3]; only 3 opt levels "
            "exist");
    }
    if (m < 1) {
        throw std::invalid_argument("build_preference_groups: m must be >= 1");
    }
    GroupBuildStats local;
    GroupBuildStats& st = stats ? *stats : local;
    st = {};

    std::mt19937_64 rng(seed);
    std::vector<PreferenceGroup> groups;
    int prompt_id = 0;
    for (const SourceExpr& expr : exprs) {
        std::vector<Sequence> winners;
        for (OptLevel level : {OptLevel::O0, OptLevel::O1, OptLevel::O2}) {
            Sequence enc = encode(compile_at(expr, level));
            if (std::find(winners.begin(), winners.end(), enc) == winners.end()) {
                winners.push_back(std::move(enc));
            }
        }
        if (static_cast<int>(winners.size()) < n) {
            ++st.skipped_winner_collapse;
            continue;
        }
        winners.resize(n);

        bool too_long = false;
        for (const Sequence& w : winners) {
            if (w.tokens.size() > static_cast<size_t>(max_seq_len)) {
                too_long = true;
            }
        }
        if (too_long) {
            ++st.skipped_too_long;
            continue;
        }

        PreferenceGroup group;
        group.prompt = render_prompt(expr, prompt_id);
        group.winners = winners;
        group.source_rpn = expr.text();
        group.value = expr.value;

        std::set<std::vector<int>> used;
        for (const Sequence& w : winners) {
            used.insert(w.tokens);
        }
        bool exhausted = false;
        for (int k = 0; k < m; ++k) {
            const IrProgram base =
                *decode(winners[rng() % winners.size()].tokens);
            bool found = false;
            for (int tries = 0; tries < 64 && !found; ++tries) {
                const auto mutant = mutate_inequivalent(base, rng(), 32);
                if (!mutant) {
                    continue;
                }
                Sequence enc = encode(*mutant);
                if (enc.tokens.size() > static_cast<size_t>(max_seq_len)) {
                    continue;
                }
                if (used.insert(enc.tokens).second) {
                    group.losers.push_back(std::move(enc));
                    found = true;
                }
            }
            if (!found) {
                exhausted = true;
                break;
            }
        }
        if (exhausted) {
            ++st.skipped_loser_exhausted;
            continue;
        }
        groups.push_back(std::move(group));
        ++prompt_id;
        ++st.emitted;
    }
    return groups;
}

bool validate_group(const PreferenceGroup& group, std::string* why) {
    auto fail = [&](const std::string& msg) {
        if (why) {
            *why = msg;
        }
        return false;
    };
    if (group.winners.empty() || group.losers.empty()) {
        return fail("empty winner or loser set");
    }
    for (const Sequence& w : group.winners) {
        if (grade(group.prompt, w) != 1) {
            return fail("winner does not grade 1");
        }
    }
    for (const Sequence& l : group.losers) {
        if (grade(group.prompt, l) != 0) {
            return fail("loser does not grade 0");
        }
    }
    std::set<std::vector<int>> seen;
    for (const Sequence& s : group.winners) {
        if (!seen.insert(s.tokens).second) {
            return fail("duplicate sequence in group");
        }
    }
    for (const Sequence& s : group.losers) {
        if (!seen.insert(s.tokens).second) {
            return fail("duplicate sequence in group");
        }
    }
    return true;
}

}  // namespace oorl::toylang
