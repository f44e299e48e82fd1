// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over scalars.
//
// The engine is a flat, append-only tape of scalar nodes. Every node stores
// its forward value plus the local partial derivative with respect to each
// parent; parents always have strictly smaller tape indices, so the tape is
// topologically ordered by construction and backward() is a single reverse
// sweep with additive accumulation across fan-out.
//
// Domain violations (log of a non-positive value, division by zero,
// non-finite results) throw immediately instead of letting NaN/Inf
// propagate: in this codebase a NaN is always a bug, never a value.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <utility>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oorl::ad {

class Tape;

/// Lightweight handle to a node on a tape. Copyable, trivially cheap.
struct Value {
    Tape* tape = nullptr;
    int32_t id = -1;

    double value() const;
};

enum class OpTag : uint8_t {
    Const,
    Param,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Log,
    Exp,
    Sigmoid,
    LogSumExp,
    Square,
    Clip,
    Min,
};

/// Gradient of one root with respect to every registered parameter.
/// Parameters the root does not reach map to exactly 0.
class GradientMap {
  public:
    GradientMap(std::vector<int32_t> param_ids, std::vector<double> grads)
        : param_ids_(std::move(param_ids)), grads_(std::move(grads)) {}

    double at(const Value& param) const;
    std::span<const int32_t> param_ids() const { return param_ids_; }
    std::span<const double> values() const { return grads_; }

  private:
    std::vector<int32_t> param_ids_;  // ascending tape order
    std::vector<double> grads_;       // aligned with param_ids_
};

class Tape {
  public:
    // -- node construction ---------------------------------------------------

    /// New gradient target. Rejects non-finite input.
    Value param(double value);
    /// New constant (never a gradient target). Rejects non-finite input.
    Value constant(double value);

    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    /// Hard error when the denominator is exactly zero.
    Value div(Value a, Value b);
    Value neg(Value a);
    /// Hard error when the argument is <= 0.
    Value log(Value a);
    /// Hard error when the result overflows to infinity.
    Value exp(Value a);
    Value sigmoid(Value a);
    /// Max-shifted log(sum(exp(xs))). Requires a nonempty input.
    Value logsumexp(std::span<const Value> xs);
    Value square(Value a);
    /// Clamp to [lo, hi]; subgradient is 1 strictly inside, 0 outside.
    Value clip(Value a, double lo, double hi);
    /// Pointwise minimum; on ties the gradient flows to the first argument.
    Value min(Value a, Value b);

    // -- queries ---------------------------------------------------------------

    double value(Value v) const { return values_[v.id]; }
    OpTag op(Value v) const { return tags_[v.id]; }
    size_t size() const { return values_.size(); }
    std::span<const int32_t> params() const { return param_ids_; }

    /// Reverse sweep from a scalar root. Gradients of all registered
    /// parameters are returned; unreachable ones are exactly 0.
    GradientMap backward(Value root) const;

  private:
    struct ParentSpan {
        uint32_t offset = 0;
        uint32_t count = 0;
    };

    Value push(OpTag tag, double value,
               std::initializer_list<std::pair<int32_t, double>> parents);
    Value push_vec(OpTag tag, double value,
                   const std::vector<std::pair<int32_t, double>>& parents);
    void check_same_tape(Value v) const;

    std::vector<double> values_;
    std::vector<OpTag> tags_;
    std::vector<ParentSpan> spans_;
    std::vector<std::pair<int32_t, double>> parents_;  // flattened (id, partial)
    std::vector<int32_t> param_ids_;
};

// Operator sugar; both operands must live on the same tape.
inline Value operator+(Value a, Value b) { return a.tape->add(a, b); }
inline Value operator-(Value a, Value b) { return a.tape->sub(a, b); }
inline Value operator*(Value a, Value b) { return a.tape->mul(a, b); }
inline Value operator/(Value a, Value b) { return a.tape->div(a, b); }
inline Value operator-(Value a) { return a.tape->neg(a); }
inline Value log(Value a) { return a.tape->log(a); }
inline Value exp(Value a) { return a.tape->exp(a); }
inline Value sigmoid(Value a) { return a.tape->sigmoid(a); }
inline Value square(Value a) { return a.tape->square(a); }

/// Result of comparing backward() against central finite differences.
struct FiniteDiffReport {
    double max_rel_error = 0.0;
    size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

/// Builds the loss on a fresh tape from the given parameter values, in order.
/// Must be deterministic and must register exactly one param per entry.
using LossBuilder = std::function<Value(Tape&, std::span<const double>)>;

/// Central-difference check: (f(x+h e_i) - f(x-h e_i)) / 2h vs backward().
/// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
FiniteDiffReport finite_diff_check(const LossBuilder& build,
                                   std::span<const double> theta, double h);

}  // namespace oorl::ad
