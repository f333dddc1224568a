#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rmdl/layers.hpp"
#include "rmdl/optim.hpp"

namespace rmdl {

enum class Family { DNN, CNN, RNN };

/// Which feature space a model consumes.
enum class InputKind { Image, TfIdf, Embedded };

std::string_view to_string(Family f);
Family parse_family(std::string_view name);
std::string_view to_string(InputKind k);
InputKind parse_input_kind(std::string_view name);

struct LayerSpec {
    LayerKind kind = LayerKind::Flatten;
    std::size_t units = 0;  // dense outputs, conv filters or recurrent hidden size
    std::size_t kernel = 0; // conv kernel extent (square for Conv2D)
    std::size_t window = 0; // pooling
    std::size_t stride = 0; // pooling
    double rate = 0.0;      // dropout
    Activation activation = Activation::None;
    bool return_sequences = false;

    bool operator==(const LayerSpec&) const = default;
};

/// One sampled architecture. The final layer is Dense with `classes` outputs
/// and a softmax applied on top.
struct ModelSpec {
    Family family = Family::DNN;
    InputKind input = InputKind::Image;
    Shape input_shape;
    std::size_t classes = 0;
    std::vector<LayerSpec> layers;
    OptimizerConfig optimizer;
    double dropout_rate = 0.5;
    std::uint64_t seed = 0;

    /// Throws ErrorKind::Config when a structural invariant is broken.
    void validate() const;

    bool operator==(const ModelSpec&) const;
};

/// Single-line summary: family, layer list, optimizer, dropout, seed.
std::string describe(const ModelSpec& spec);

template <typename T>
struct Model {
    ModelSpec spec;
    std::vector<Layer<T>> layers;

    std::vector<Tensor<T>*> parameters();
    std::vector<const Tensor<T>*> parameters() const;
    /// "layer<i>.<name>" for each entry of parameters().
    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;
};

// Random streams derived from a model seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kShuffleStream = 2;
inline constexpr std::uint64_t kDropoutStream = 3;

/// Builds layers for `spec`, initializing weights from the spec's seed.
template <typename T>
Model<T> build_model(const ModelSpec& spec);

template <typename T>
Model<T> build_model(const ModelSpec& spec, Rng& init_rng);

template <typename T>
struct ModelOutput {
    Tensor<T> probs; // [B × classes]
    ForwardTrace<T> trace;
};

/// `input` is one sample shaped like spec.input_shape, or a batch whose
/// leading axis counts samples of that size.
template <typename T>
ModelOutput<T> model_forward(const Model<T>& model, const Tensor<T>& input, Mode mode, Rng& rng);

/// Parameter gradients given d(loss)/d(logits) for the whole batch.
template <typename T>
std::vector<Tensor<T>> model_backward(const Model<T>& model, const ForwardTrace<T>& trace, const Tensor<T>& logit_grad);

template <typename T>
struct BatchLoss {
    double loss = 0.0;       // mean cross-entropy
    std::size_t correct = 0; // argmax hits
    std::vector<Tensor<T>> grads;
};

/// Mean cross-entropy over the batch and its gradient for every parameter.
template <typename T>
BatchLoss<T> loss_and_gradients(const Model<T>& model, const Tensor<T>& batch, std::span<const std::size_t> labels,
                                Mode mode, Rng& rng);

template <typename T>
double batch_loss(const Model<T>& model, const Tensor<T>& batch, std::span<const std::size_t> labels, Mode mode,
                  Rng& rng);

/// Worst relative error between `analytic` and central differences of
/// `loss` over every coordinate of `params`; denominator max(|a|,|b|,1e-8).
double check_gradients(std::span<double> params, const std::function<double()>& loss,
                       std::span<const double> analytic, double h);

/// Gradient check of the mean cross-entropy of `model` on `batch`. Each loss
/// evaluation reseeds the dropout stream with `rng_seed`, so train mode sees
/// the same masks every time.
double check_gradients(Model<double>& model, const Tensor<double>& batch, std::span<const std::size_t> labels,
                       double h = 1e-4, Mode mode = Mode::Infer, std::uint64_t rng_seed = 0);

} // namespace rmdl
