#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rmdl/ensemble.hpp"
#include "rmdl/model.hpp"
#include "rmdl/optim.hpp"

namespace rmdl::testing {

inline LayerSpec dense_spec(std::size_t units, Activation a) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.units = units;
    l.activation = a;
    return l;
}

inline LayerSpec layer_spec(LayerKind kind, std::size_t units = 0, std::size_t kernel = 0,
                            Activation a = Activation::None) {
    LayerSpec l;
    l.kind = kind;
    l.units = units;
    l.kernel = kernel;
    l.activation = a;
    return l;
}

inline LayerSpec pool_spec(LayerKind kind, std::size_t window, std::size_t stride) {
    LayerSpec l;
    l.kind = kind;
    l.window = window;
    l.stride = stride;
    return l;
}

inline LayerSpec dropout_spec(double rate) {
    LayerSpec l;
    l.kind = LayerKind::Dropout;
    l.rate = rate;
    return l;
}

inline std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
    return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

/// Kinds covered by the gradient suite.
enum class GradCase { Dense, Conv1D, Conv2D, MaxPool1D, MaxPool2D, DropoutEval, SimpleRNN, LSTM, GRU };

inline const char* name(GradCase c) {
    switch (c) {
    case GradCase::Dense: return "Dense";
    case GradCase::Conv1D: return "Conv1D";
    case GradCase::Conv2D: return "Conv2D";
    case GradCase::MaxPool1D: return "MaxPool1D";
    case GradCase::MaxPool2D: return "MaxPool2D";
    case GradCase::DropoutEval: return "Dropout(eval)";
    case GradCase::SimpleRNN: return "SimpleRNN";
    case GradCase::LSTM: return "LSTM";
    case GradCase::GRU: return "GRU";
    }
    return "?";
}

inline constexpr GradCase kAllGradCases[] = {GradCase::Dense,     GradCase::Conv1D,      GradCase::Conv2D,
                                             GradCase::MaxPool1D, GradCase::MaxPool2D,   GradCase::DropoutEval,
                                             GradCase::SimpleRNN, GradCase::LSTM,        GradCase::GRU};

/// A small random network exercising one layer kind, followed by a Dense
/// classifier head, plus a random batch.
struct GradProblem {
    ModelSpec spec;
    Tensor<double> batch;
    std::vector<std::size_t> labels;
    Mode mode = Mode::Infer;
};

inline GradProblem make_grad_problem(GradCase c, std::uint64_t seed, std::size_t steps = 3) {
    Rng rng(seed);
    GradProblem p;
    ModelSpec& s = p.spec;
    s.classes = draw(rng, 2, 4);
    s.seed = rng.next();
    const std::size_t batch = draw(rng, 1, 3);
    const Activation smooth = rng.uniform() < 0.5 ? Activation::Tanh : Activation::Sigmoid;
    auto& L = s.layers;
    switch (c) {
    case GradCase::Dense:
        s.family = Family::DNN;
        s.input_shape = {draw(rng, 2, 6)};
        L.push_back(dense_spec(draw(rng, 2, 6), smooth));
        break;
    case GradCase::DropoutEval:
        s.family = Family::DNN;
        s.input_shape = {draw(rng, 2, 6)};
        L.push_back(dense_spec(draw(rng, 2, 6), smooth));
        L.push_back(dropout_spec(rng.uniform(0.1, 0.9)));
        break;
    case GradCase::Conv1D:
    case GradCase::MaxPool1D: {
        s.family = Family::CNN;
        const std::size_t k = draw(rng, 1, 3);
        s.input_shape = {k + draw(rng, 1, 4), draw(rng, 1, 3)};
        L.push_back(layer_spec(LayerKind::Conv1D, draw(rng, 1, 3), k, smooth));
        if (c == GradCase::MaxPool1D) {
            const std::size_t len = s.input_shape[0] - k + 1;
            const std::size_t w = draw(rng, 1, std::min<std::size_t>(len, 3));
            L.push_back(pool_spec(LayerKind::MaxPool1D, w, draw(rng, 1, w)));
        }
        L.push_back(layer_spec(LayerKind::Flatten));
        break;
    }
    case GradCase::Conv2D:
    case GradCase::MaxPool2D: {
        s.family = Family::CNN;
        const std::size_t k = draw(rng, 1, 3);
        s.input_shape = {k + draw(rng, 0, 3), k + draw(rng, 0, 3), draw(rng, 1, 2)};
        L.push_back(layer_spec(LayerKind::Conv2D, draw(rng, 1, 3), k, smooth));
        if (c == GradCase::MaxPool2D) {
            const std::size_t side = std::min(s.input_shape[0], s.input_shape[1]) - k + 1;
            const std::size_t w = draw(rng, 1, std::min<std::size_t>(side, 2));
            L.push_back(pool_spec(LayerKind::MaxPool2D, w, draw(rng, 1, w)));
        }
        L.push_back(layer_spec(LayerKind::Flatten));
        break;
    }
    case GradCase::SimpleRNN:
    case GradCase::LSTM:
    case GradCase::GRU: {
        s.family = Family::RNN;
        s.input_shape = {steps, draw(rng, 1, 4)};
        const LayerKind kind = c == GradCase::SimpleRNN ? LayerKind::SimpleRNN
                               : c == GradCase::LSTM    ? LayerKind::LSTM
                                                        : LayerKind::GRU;
        L.push_back(layer_spec(kind, draw(rng, 1, 4)));
        break;
    }
    }
    L.push_back(dense_spec(s.classes, Activation::None));

    Shape shape{batch};
    shape.insert(shape.end(), s.input_shape.begin(), s.input_shape.end());
    p.batch = Tensor<double>(shape);
    for (double& v : p.batch.data()) v = rng.uniform(-1.0, 1.0);
    for (std::size_t b = 0; b < batch; ++b) p.labels.push_back(rng.index(s.classes));
    return p;
}

/// Smallest gap between a pooling window's maximum and its runner-up over
/// the batch; finite differences are meaningless when this is near zero.
inline double pooling_margin(const Model<double>& model, const Tensor<double>& batch) {
    Rng rng(0);
    Tensor<double> x = batch;
    double margin = INFINITY;
    for (const Layer<double>& layer : model.layers) {
        if (layer.kind == LayerKind::MaxPool1D || layer.kind == LayerKind::MaxPool2D) {
            // Windows are rebuilt here from the layer's geometry.
            const bool two_d = layer.kind == LayerKind::MaxPool2D;
            const std::size_t B = x.dim(0), H = x.dim(1), W = two_d ? x.dim(2) : 1, C = x.dim(two_d ? 3 : 2);
            const std::size_t wh = layer.window, ww = two_d ? layer.window : 1;
            const std::size_t sh = layer.stride, sw = two_d ? layer.stride : 1;
            const std::size_t oh = (H - wh) / sh + 1, ow = (W - ww) / sw + 1;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j)
                        for (std::size_t ch = 0; ch < C; ++ch) {
                            std::vector<double> v;
                            for (std::size_t di = 0; di < wh; ++di)
                                for (std::size_t dj = 0; dj < ww; ++dj)
                                    v.push_back(x[((b * H + i * sh + di) * W + j * sw + dj) * C + ch]);
                            if (v.size() < 2) continue;
                            std::sort(v.begin(), v.end());
                            margin = std::min(margin, v[v.size() - 1] - v[v.size() - 2]);
                        }
        }
        x = layer_forward(layer, x, Mode::Infer, rng).output;
    }
    return margin;
}

/// Scalar restatement of each optimizer recursion, written independently of
/// the library's span-based steps.
struct ScalarOptimizer {
    OptimizerConfig cfg;
    double a = 0.0, b = 0.0; // accumulators
    int t = 0;

    double step(double theta, double g) {
        ++t;
        switch (cfg.kind) {
        case OptimizerKind::SGD: return theta - cfg.learning_rate * g;
        case OptimizerKind::Momentum:
            a = cfg.momentum * a + cfg.learning_rate * g;
            return theta - a;
        case OptimizerKind::RMSProp:
            a = cfg.rho * a + (1.0 - cfg.rho) * g * g;
            return theta - cfg.learning_rate * g / (std::sqrt(a) + cfg.epsilon);
        case OptimizerKind::Adam: {
            a = cfg.beta1 * a + (1.0 - cfg.beta1) * g;
            b = cfg.beta2 * b + (1.0 - cfg.beta2) * g * g;
            const double m_hat = a / (1.0 - std::pow(cfg.beta1, t));
            const double v_hat = b / (1.0 - std::pow(cfg.beta2, t));
            return theta - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
        case OptimizerKind::Adagrad:
            a += g * g;
            return theta - cfg.learning_rate * g / (std::sqrt(a) + cfg.epsilon);
        case OptimizerKind::Adadelta: {
            a = cfg.momentum * a + (1.0 - cfg.momentum) * g * g;
            const double delta = -std::sqrt(b + cfg.epsilon) / std::sqrt(a + cfg.epsilon) * g;
            b = cfg.momentum * b + (1.0 - cfg.momentum) * delta * delta;
            return theta + delta;
        }
        }
        return theta;
    }
};

inline constexpr OptimizerKind kAllOptimizers[] = {OptimizerKind::SGD,     OptimizerKind::Momentum,
                                                   OptimizerKind::RMSProp, OptimizerKind::Adam,
                                                   OptimizerKind::Adagrad, OptimizerKind::Adadelta};

/// Runs the library optimizer on f(θ) = ‖θ‖² from (1,1); returns the number
/// of steps until f < 1e-6, or `max_steps + 1` if it never gets there.
inline std::size_t steps_to_converge(OptimizerKind kind, std::size_t max_steps = 2000) {
    const OptimizerConfig cfg = OptimizerConfig::defaults(kind);
    Tensor<double> theta({2}, 1.0);
    const Shape shapes[] = {theta.shape()};
    auto state = init_state<double>(cfg, shapes);
    Tensor<double>* params[] = {&theta};
    for (std::size_t s = 1; s <= max_steps; ++s) {
        Tensor<double> grads[] = {Tensor<double>({2}, std::vector<double>{2 * theta[0], 2 * theta[1]})};
        optimizer_step<double>(state, params, grads, cfg);
        if (theta[0] * theta[0] + theta[1] * theta[1] < 1e-6) return s;
    }
    return max_steps + 1;
}

/// Mode of `labels` by direct counting; ties go to the largest summed
/// probability mass, then to the lowest label.
inline std::size_t vote_oracle(const std::vector<std::size_t>& labels, const std::vector<float>& probs,
                               std::size_t classes) {
    std::size_t best = 0, best_votes = 0;
    double best_mass = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
        const auto votes = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), k));
        double mass = 0.0;
        for (std::size_t j = 0; j < labels.size(); ++j) mass += probs[j * classes + k];
        const bool better = k == 0 || votes > best_votes || (votes == best_votes && mass > best_mass);
        if (better) {
            best = k;
            best_votes = votes;
            best_mass = mass;
        }
    }
    return best;
}

/// Binary closed form floor(1/2 + (S - 1/2)/n) for S positive votes,
/// evaluated in integers as floor((n + 2S - 1) / 2n).
inline std::size_t binary_floor_vote(std::size_t positives, std::size_t n) {
    return (n + 2 * positives - 1) / (2 * n);
}

/// Softmax row for a model voting `label`, in eighths so that summed masses
/// are exact. `variant` picks how peaked the row is.
inline std::vector<float> eighths_row(std::size_t label, std::size_t classes, std::size_t variant) {
    std::vector<float> row(classes, 0.0f);
    if (classes == 1) {
        row[0] = 1.0f;
        return row;
    }
    const float top = variant % 2 == 0 ? 6.0f / 8.0f : 4.0f / 8.0f;
    if (classes == 2) {
        row[label] = variant % 2 == 0 ? 7.0f / 8.0f : 5.0f / 8.0f;
        row[1 - label] = 1.0f - row[label];
        return row;
    }
    // three or more classes: the remainder goes to the next label
    row[label] = top;
    row[(label + 1) % classes] = 1.0f - top;
    return row;
}

/// DNN whose output is a fixed label whatever the input.
inline RDLModel fixed_label_model(std::size_t input_dim, std::size_t classes, std::size_t label) {
    ModelSpec spec;
    spec.family = Family::DNN;
    spec.input = InputKind::Image;
    spec.input_shape = {input_dim};
    spec.classes = classes;
    spec.layers = {dense_spec(classes, Activation::None)};
    RDLModel m{spec, build_model<float>(spec), {}};
    for (Tensor<float>* t : m.model.parameters()) t->fill(0.0f);
    m.model.parameters().back()->data()[label] = 5.0f;
    return m;
}

} // namespace rmdl::testing
