#pragma once

// Stochastic gradient optimizers behind one step interface. Each sampled
// model owns one OptimizerState; nothing here is shared between models.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rmdl/error.hpp"
#include "rmdl/tensor.hpp"

namespace rmdl {

enum class OptimizerKind { SGD, Momentum, RMSProp, Adam, Adagrad, Adadelta };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3; // α (unused by Adadelta)
    double momentum = 0.9;       // γ: velocity decay (Momentum), accumulator decay (Adadelta)
    double beta1 = 0.9;
    double beta2 = 0.999;
    double rho = 0.9; // RMSProp decay
    double epsilon = 1e-8;

    /// Conventional defaults for `kind`.
    static OptimizerConfig defaults(OptimizerKind kind);

    void validate() const;
};

/// Per-parameter accumulators. Which ones are live depends on the kind:
///   Momentum  first = velocity
///   RMSProp   first = running E[g²]
///   Adam      first = m, second = v
///   Adagrad   first = G (sum of squared gradients)
///   Adadelta  first = E[g²], second = E[Δ²]
template <typename T>
struct OptimizerSlot {
    std::vector<T> first;
    std::vector<T> second;
};

template <typename T>
struct OptimizerState {
    std::uint64_t step = 0;
    std::vector<OptimizerSlot<T>> slots;
};

template <typename T>
OptimizerState<T> init_state(const OptimizerConfig& config, std::span<const Shape> param_shapes) {
    config.validate();
    OptimizerState<T> state;
    state.slots.resize(param_shapes.size());
    for (std::size_t p = 0; p < param_shapes.size(); ++p) {
        const std::size_t n = shape_size(param_shapes[p]);
        switch (config.kind) {
        case OptimizerKind::SGD: break;
        case OptimizerKind::Momentum:
        case OptimizerKind::RMSProp:
        case OptimizerKind::Adagrad: state.slots[p].first.assign(n, T{0}); break;
        case OptimizerKind::Adam:
        case OptimizerKind::Adadelta:
            state.slots[p].first.assign(n, T{0});
            state.slots[p].second.assign(n, T{0});
            break;
        }
    }
    return state;
}

// Single-tensor updates. `theta` and `grad` have equal length; slot vectors
// match it.

/// θ ← θ − α·g
template <typename T>
void sgd_step(std::span<T> theta, std::span<const T> grad, const OptimizerConfig& c) {
    const T lr = static_cast<T>(c.learning_rate);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * grad[i];
}

/// v ← γ·v + α·g;  θ ← θ − v
template <typename T>
void momentum_step(OptimizerSlot<T>& slot, std::span<T> theta, std::span<const T> grad, const OptimizerConfig& c) {
    const T lr = static_cast<T>(c.learning_rate), gamma = static_cast<T>(c.momentum);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        slot.first[i] = gamma * slot.first[i] + lr * grad[i];
        theta[i] -= slot.first[i];
    }
}

/// E ← ρ·E + (1−ρ)·g²;  θ ← θ − α·g / (√E + ε)
template <typename T>
void rmsprop_step(OptimizerSlot<T>& slot, std::span<T> theta, std::span<const T> grad, const OptimizerConfig& c) {
    const T lr = static_cast<T>(c.learning_rate), rho = static_cast<T>(c.rho), eps = static_cast<T>(c.epsilon);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const T g = grad[i];
        slot.first[i] = rho * slot.first[i] + (T{1} - rho) * g * g;
        theta[i] -= lr * g / (std::sqrt(slot.first[i]) + eps);
    }
}

/// Bias-corrected first/second moments; `t` is the 1-based step number.
template <typename T>
void adam_step(OptimizerSlot<T>& slot, std::uint64_t t, std::span<T> theta, std::span<const T> grad,
               const OptimizerConfig& c) {
    const T lr = static_cast<T>(c.learning_rate), b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T eps = static_cast<T>(c.epsilon);
    const T correction1 = static_cast<T>(1.0 - std::pow(c.beta1, static_cast<double>(t)));
    const T correction2 = static_cast<T>(1.0 - std::pow(c.beta2, static_cast<double>(t)));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const T g = grad[i];
        slot.first[i] = b1 * slot.first[i] + (T{1} - b1) * g;
        slot.second[i] = b2 * slot.second[i] + (T{1} - b2) * g * g;
        const T m_hat = slot.first[i] / correction1;
        const T v_hat = slot.second[i] / correction2;
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

/// Diagonal AdaGrad: G ← G + g²;  θ ← θ − α·g / (√G + ε)
template <typename T>
void adagrad_step(OptimizerSlot<T>& slot, std::span<T> theta, std::span<const T> grad, const OptimizerConfig& c) {
    const T lr = static_cast<T>(c.learning_rate), eps = static_cast<T>(c.epsilon);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const T g = grad[i];
        slot.first[i] += g * g;
        theta[i] -= lr * g / (std::sqrt(slot.first[i]) + eps);
    }
}

/// E[g²] ← γE[g²] + (1−γ)g²;  Δ = −√(E[Δ²]+ε)/√(E[g²]+ε)·g;  E[Δ²] ← γE[Δ²] + (1−γ)Δ²;  θ ← θ + Δ
template <typename T>
void adadelta_step(OptimizerSlot<T>& slot, std::span<T> theta, std::span<const T> grad, const OptimizerConfig& c) {
    const T gamma = static_cast<T>(c.momentum), eps = static_cast<T>(c.epsilon);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const T g = grad[i];
        slot.first[i] = gamma * slot.first[i] + (T{1} - gamma) * g * g;
        const T delta = -std::sqrt(slot.second[i] + eps) / std::sqrt(slot.first[i] + eps) * g;
        slot.second[i] = gamma * slot.second[i] + (T{1} - gamma) * delta * delta;
        theta[i] += delta;
    }
}

/// One update of every parameter. Increments the step counter once.
template <typename T>
void optimizer_step(OptimizerState<T>& state, std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
                    const OptimizerConfig& c) {
    if (params.size() != grads.size() || params.size() != state.slots.size())
        fail(ErrorKind::Shape, "optimizer received " + std::to_string(grads.size()) + " gradients for " +
                                   std::to_string(params.size()) + " parameters and " +
                                   std::to_string(state.slots.size()) + " slots");
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p]->size() != grads[p].size())
            fail(ErrorKind::Shape, "gradient " + shape_str(grads[p].shape()) + " does not match parameter " +
                                       shape_str(params[p]->shape()));
        if (!grads[p].all_finite()) fail(ErrorKind::Numeric, "non-finite gradient");
    }
    ++state.step;
    for (std::size_t p = 0; p < params.size(); ++p) {
        std::span<T> theta = params[p]->data();
        std::span<const T> g = grads[p].data();
        OptimizerSlot<T>& slot = state.slots[p];
        switch (c.kind) {
        case OptimizerKind::SGD: sgd_step<T>(theta, g, c); break;
        case OptimizerKind::Momentum: momentum_step<T>(slot, theta, g, c); break;
        case OptimizerKind::RMSProp: rmsprop_step<T>(slot, theta, g, c); break;
        case OptimizerKind::Adam: adam_step<T>(slot, state.step, theta, g, c); break;
        case OptimizerKind::Adagrad: adagrad_step<T>(slot, theta, g, c); break;
        case OptimizerKind::Adadelta: adadelta_step<T>(slot, theta, g, c); break;
        }
    }
}

inline std::string_view to_string(OptimizerKind kind) {
    switch (kind) {
    case OptimizerKind::SGD: return "sgd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::RMSProp: return "rmsprop";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::Adagrad: return "adagrad";
    case OptimizerKind::Adadelta: return "adadelta";
    }
    return "?";
}

inline OptimizerKind parse_optimizer_kind(std::string_view name) {
    for (OptimizerKind k : {OptimizerKind::SGD, OptimizerKind::Momentum, OptimizerKind::RMSProp, OptimizerKind::Adam,
                            OptimizerKind::Adagrad, OptimizerKind::Adadelta})
        if (to_string(k) == name) return k;
    fail(ErrorKind::Config, "unknown optimizer '" + std::string(name) + "'");
}

inline OptimizerConfig OptimizerConfig::defaults(OptimizerKind kind) {
    OptimizerConfig c;
    c.kind = kind;
    switch (kind) {
    case OptimizerKind::SGD:
    case OptimizerKind::Momentum: c.learning_rate = 0.1; break;
    case OptimizerKind::RMSProp:
    case OptimizerKind::Adam: c.learning_rate = 0.01; break;
    case OptimizerKind::Adagrad: c.learning_rate = 0.5; break;
    case OptimizerKind::Adadelta:
        c.learning_rate = 1.0;
        c.momentum = 0.95;
        c.epsilon = 1e-6;
        break;
    }
    return c;
}

inline void OptimizerConfig::validate() const {
    auto unit = [](double v) { return v >= 0.0 && v < 1.0; };
    if (!(learning_rate > 0.0)) fail(ErrorKind::Config, "learning rate must be positive");
    if (!unit(momentum) || !unit(beta1) || !unit(beta2) || !unit(rho))
        fail(ErrorKind::Config, "decay coefficients must lie in [0, 1)");
    if (!(epsilon > 0.0)) fail(ErrorKind::Config, "epsilon must be positive");
}

} // namespace rmdl
