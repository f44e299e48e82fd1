// SPDX-License-Identifier: Apache-2.0

#include "oorl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oorl::ad {

namespace {

void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) {
        throw std::domain_error(std::string(what) + ": non-finite value " +
                                std::to_string(x));
    }
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

double Value::value() const { return tape->value(*this); }

double GradientMap::at(const Value& param) const {
    auto it = std::lower_bound(param_ids_.begin(), param_ids_.end(), param.id);
    if (it == param_ids_.end() || *it != param.id) {
        throw std::invalid_argument("GradientMap::at: node is not a parameter");
    }
    return grads_[static_cast<size_t>(it - param_ids_.begin())];
}

void Tape::check_same_tape(Value v) const {
    if (v.tape != this || v.id < 0 || static_cast<size_t>(v.id) >= values_.size()) {
        throw std::invalid_argument("Tape: value belongs to a different tape");
    }
}

Value Tape::push(OpTag tag, double value,
                 std::initializer_list<std::pair<int32_t, double>> parents) {
    require_finite(value, "Tape: op result");
    ParentSpan span{static_cast<uint32_t>(parents_.size()),
                    static_cast<uint32_t>(parents.size())};
    for (const auto& p : parents) {
        parents_.push_back(p);
    }
    values_.push_back(value);
    tags_.push_back(tag);
    spans_.push_back(span);
    return Value{this, static_cast<int32_t>(values_.size() - 1)};
}

Value Tape::push_vec(OpTag tag, double value,
                     const std::vector<std::pair<int32_t, double>>& parents) {
    require_finite(value, "Tape: op result");
    ParentSpan span{static_cast<uint32_t>(parents_.size()),
                    static_cast<uint32_t>(parents.size())};
    parents_.insert(parents_.end(), parents.begin(), parents.end());
    values_.push_back(value);
    tags_.push_back(tag);
    spans_.push_back(span);
    return Value{this, static_cast<int32_t>(values_.size() - 1)};
}

Value Tape::param(double value) {
    require_finite(value, "param");
    Value v = push(OpTag::Param, value, {});
    param_ids_.push_back(v.id);
    return v;
}

Value Tape::constant(double value) {
    require_finite(value, "constant");
    return push(OpTag::Const, value, {});
}

Value Tape::add(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    return push(OpTag::Add, values_[a.id] + values_[b.id],
                {{a.id, 1.0}, {b.id, 1.0}});
}

Value Tape::sub(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    return push(OpTag::Sub, values_[a.id] - values_[b.id],
                {{a.id, 1.0}, {b.id, -1.0}});
}

Value Tape::mul(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    return push(OpTag::Mul, values_[a.id] * values_[b.id],
                {{a.id, values_[b.id]}, {b.id, values_[a.id]}});
}

Value Tape::div(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    const double num = values_[a.id];
    const double den = values_[b.id];
    if (den == 0.0) {
        throw std::domain_error("div: division by zero");
    }
    return push(OpTag::Div, num / den,
                {{a.id, 1.0 / den}, {b.id, -num / (den * den)}});
}

Value Tape::neg(Value a) {
    check_same_tape(a);
    return push(OpTag::Neg, -values_[a.id], {{a.id, -1.0}});
}

Value Tape::log(Value a) {
    check_same_tape(a);
    const double x = values_[a.id];
    if (x <= 0.0) {
        throw std::domain_error("log: argument must be positive, got " +
                                std::to_string(x));
    }
    return push(OpTag::Log, std::log(x), {{a.id, 1.0 / x}});
}

Value Tape::exp(Value a) {
    check_same_tape(a);
    const double y = std::exp(values_[a.id]);
    if (!std::isfinite(y)) {
        throw std::domain_error("exp: overflow at argument " +
                                std::to_string(values_[a.id]));
    }
    return push(OpTag::Exp, y, {{a.id, y}});
}

Value Tape::sigmoid(Value a) {
    check_same_tape(a);
    const double s = stable_sigmoid(values_[a.id]);
    return push(OpTag::Sigmoid, s, {{a.id, s * (1.0 - s)}});
}

Value Tape::logsumexp(std::span<const Value> xs) {
    if (xs.empty()) {
        throw std::invalid_argument("logsumexp: empty input");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (Value v : xs) {
        check_same_tape(v);
        m = std::max(m, values_[v.id]);
    }
    double sum = 0.0;
    for (Value v : xs) {
        sum += std::exp(values_[v.id] - m);
    }
    const double y = m + std::log(sum);
    std::vector<std::pair<int32_t, double>> parents;
    parents.reserve(xs.size());
    for (Value v : xs) {
        parents.emplace_back(v.id, std::exp(values_[v.id] - m) / sum);
    }
    return push_vec(OpTag::LogSumExp, y, parents);
}

Value Tape::square(Value a) {
    check_same_tape(a);
    const double x = values_[a.id];
    return push(OpTag::Square, x * x, {{a.id, 2.0 * x}});
}

Value Tape::clip(Value a, double lo, double hi) {
    check_same_tape(a);
    if (!(lo <= hi)) {
        throw std::invalid_argument("clip: lo must not exceed hi");
    }
    const double x = values_[a.id];
    const double y = std::min(std::max(x, lo), hi);
    const double partial = (x < lo || x > hi) ? 0.0 : 1.0;
    return push(OpTag::Clip, y, {{a.id, partial}});
}

Value Tape::min(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    const double x = values_[a.id];
    const double y = values_[b.id];
    if (x <= y) {
        return push(OpTag::Min, x, {{a.id, 1.0}, {b.id, 0.0}});
    }
    return push(OpTag::Min, y, {{a.id, 0.0}, {b.id, 1.0}});
}

GradientMap Tape::backward(Value root) const {
    check_same_tape(root);
    std::vector<double> adjoint(values_.size(), 0.0);
    adjoint[root.id] = 1.0;
    for (int32_t id = root.id; id >= 0; --id) {
        const double a = adjoint[id];
        if (a == 0.0) {
            continue;
        }
        const ParentSpan& span = spans_[id];
        for (uint32_t k = 0; k < span.count; ++k) {
            const auto& [pid, partial] = parents_[span.offset + k];
            adjoint[pid] += a * partial;
        }
    }
    std::vector<double> grads;
    grads.reserve(param_ids_.size());
    for (int32_t pid : param_ids_) {
        grads.push_back(adjoint[pid]);
    }
    return GradientMap(param_ids_, std::move(grads));
}

FiniteDiffReport finite_diff_check(const LossBuilder& build,
                                   std::span<const double> theta, double h) {
    if (h <= 0.0) {
        throw std::invalid_argument("finite_diff_check: h must be positive");
    }
    std::vector<double> analytic(theta.size(), 0.0);
    {
        Tape tape;
        Value root = build(tape, theta);
        GradientMap g = tape.backward(root);
        if (g.param_ids().size() != theta.size()) {
            throw std::logic_error(
                "finite_diff_check: builder registered a different number of "
                "params than theta entries");
        }
        std::copy(g.values().begin(), g.values().end(), analytic.begin());
    }

    std::vector<double> shifted(theta.begin(), theta.end());
    FiniteDiffReport report;
    for (size_t i = 0; i < theta.size(); ++i) {
        shifted[i] = theta[i] + h;
        Tape tp;
        const double f_plus = tp.value(build(tp, shifted));
        shifted[i] = theta[i] - h;
        Tape tm;
        const double f_minus = tm.value(build(tm, shifted));
        shifted[i] = theta[i];

        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double denom =
            std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(analytic[i] - numeric) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    return report;
}

}  // namespace oorl::ad
