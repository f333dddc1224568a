#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>

#include "rmdl/error.hpp"
#include "rmdl/tensor.hpp"

namespace rmdl {

enum class Activation { None, Sigmoid, Relu, Tanh };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

template <typename T>
inline T sigmoid(T x) {
    // Split by sign so exp never overflows.
    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
    const T e = std::exp(x);
    return e / (T{1} + e);
}

template <typename T>
void activate_inplace(Activation kind, std::span<T> x) {
    switch (kind) {
    case Activation::None: return;
    case Activation::Sigmoid:
        for (T& v : x) v = sigmoid(v);
        return;
    case Activation::Relu:
        for (T& v : x) v = v > T{0} ? v : T{0};
        return;
    case Activation::Tanh:
        for (T& v : x) v = std::tanh(v);
        return;
    }
}

/// grad *= f'(z), with the derivative written in terms of the output y = f(z).
template <typename T>
void activation_backward(Activation kind, std::span<const T> y, std::span<T> grad) {
    switch (kind) {
    case Activation::None: return;
    case Activation::Sigmoid:
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= y[i] * (T{1} - y[i]);
        return;
    case Activation::Relu:
        for (std::size_t i = 0; i < grad.size(); ++i)
            if (!(y[i] > T{0})) grad[i] = T{0};
        return;
    case Activation::Tanh:
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= T{1} - y[i] * y[i];
        return;
    }
}

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
    if (!x.all_finite()) fail(ErrorKind::Numeric, "activation input contains non-finite values");
    Tensor<T> out = x;
    activate_inplace(kind, out.data());
    return out;
}

/// Max-subtracted softmax of one logit vector, written into `out`.
template <typename T>
void softmax_into(std::span<const T> z, std::span<T> out) {
    const T peak = *std::max_element(z.begin(), z.end());
    T total{0};
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - peak);
        total += out[i];
    }
    for (T& v : out) v /= total;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& z) {
    if (z.empty()) fail(ErrorKind::Shape, "softmax of an empty vector");
    if (!z.all_finite()) fail(ErrorKind::Numeric, "softmax input contains non-finite values");
    Tensor<T> out(z.shape());
    softmax_into<T>(z.data(), out.data());
    return out;
}

/// Row-wise softmax of a [rows × classes] logit matrix.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) fail(ErrorKind::Shape, "softmax_rows expects a matrix, got " + shape_str(logits.shape()));
    Tensor<T> out(logits.shape());
    for (std::size_t r = 0; r < logits.dim(0); ++r) softmax_into<T>(logits.row(r), out.row(r));
    return out;
}

inline constexpr double kProbabilityClamp = 1e-12;

template <typename T>
struct CrossEntropy {
    double loss;
    Tensor<T> logit_grad; // probs - onehot(label)
};

template <typename T>
CrossEntropy<T> cross_entropy(const Tensor<T>& probs, std::size_t label) {
    if (label >= probs.size())
        fail(ErrorKind::Label, "label " + std::to_string(label) + " out of range for " +
                                   std::to_string(probs.size()) + " classes");
    CrossEntropy<T> ce{-std::log(static_cast<double>(probs[label]) + kProbabilityClamp), probs};
    ce.logit_grad[label] -= T{1};
    return ce;
}

/// Index of the largest element, lowest index on ties.
template <typename T>
std::size_t argmax(std::span<const T> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline std::string_view to_string(Activation a) {
    switch (a) {
    case Activation::None: return "none";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    }
    return "none";
}

inline Activation parse_activation(std::string_view name) {
    if (name == "none") return Activation::None;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    fail(ErrorKind::Format, "unknown activation '" + std::string(name) + "'");
}

} // namespace rmdl
