#pragma once

// Layers and recurrent cells with hand-written forward and backward passes.
// All layer inputs carry a leading batch axis:
//   Dense      [B × in]
//   Conv1D     [B × length × channels]        kernel [filters × width × channels]
//   Conv2D     [B × height × width × channels] kernel [filters × kh × kw × channels]
//   MaxPool1D  [B × length × channels]
//   MaxPool2D  [B × height × width × channels]
//   recurrent  [B × steps × features]
// Convolutions are valid (unpadded) stride-1 cross-correlations.

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rmdl/activation.hpp"
#include "rmdl/rng.hpp"
#include "rmdl/tensor.hpp"

namespace rmdl {

enum class Mode { Train, Infer };

enum class LayerKind : std::uint8_t {
    Dense,
    Conv1D,
    Conv2D,
    MaxPool1D,
    MaxPool2D,
    Flatten,
    Dropout,
    SimpleRNN,
    LSTM,
    GRU,
};

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);
bool is_recurrent(LayerKind kind);

template <typename T>
struct DenseParams {
    Tensor<T> weight; // [out × in]
    Tensor<T> bias;   // [out]
};

template <typename T>
struct ConvParams {
    Tensor<T> kernel; // [filters × (kh ×) kw × channels]
    Tensor<T> bias;   // [filters]
};

/// x_t = W_rec·tanh(x_{t-1}) + W_in·u_t + b
template <typename T>
struct SimpleRNNCell {
    Tensor<T> w_rec; // [hidden × hidden]
    Tensor<T> w_in;  // [hidden × input]
    Tensor<T> bias;  // [hidden]

    std::size_t hidden_size() const { return bias.size(); }
    std::size_t input_size() const { return w_in.dim(1); }
};

/// Gate weights act on the concatenation [x_t, h_{t-1}].
template <typename T>
struct LSTMCell {
    Tensor<T> w_i, w_f, w_o, w_c; // [hidden × (input + hidden)]
    Tensor<T> b_i, b_f, b_o, b_c; // [hidden]

    std::size_t hidden_size() const { return b_i.size(); }
    std::size_t input_size() const { return w_i.dim(1) - b_i.size(); }
};

template <typename T>
struct GRUCell {
    Tensor<T> w_z, u_z, b_z; // update gate
    Tensor<T> w_r, u_r, b_r; // reset gate
    Tensor<T> w_h, u_h, b_h; // candidate

    std::size_t hidden_size() const { return b_z.size(); }
    std::size_t input_size() const { return w_z.dim(1); }
};

template <typename T>
struct Layer {
    LayerKind kind = LayerKind::Flatten;
    Activation activation = Activation::None; // Dense and convolutions
    std::size_t window = 0;                   // pooling
    std::size_t stride = 0;                   // pooling
    double rate = 0.0;                        // dropout
    bool return_sequences = false;            // recurrent

    std::variant<std::monostate, DenseParams<T>, ConvParams<T>, SimpleRNNCell<T>, LSTMCell<T>, GRUCell<T>> params;

    /// Trainable tensors in a fixed order; names() matches it one to one.
    std::vector<Tensor<T>*> parameters();
    std::vector<const Tensor<T>*> parameters() const;
    std::vector<std::string> parameter_names() const;
};

// Factories. Weights are drawn uniformly from ±sqrt(6 / (fan_in + fan_out)),
// biases start at zero.
template <typename T>
Layer<T> make_dense(std::size_t in, std::size_t out, Activation activation, Rng& rng);
template <typename T>
Layer<T> make_conv1d(std::size_t channels, std::size_t filters, std::size_t width, Activation activation, Rng& rng);
template <typename T>
Layer<T> make_conv2d(std::size_t channels, std::size_t filters, std::size_t kernel_h, std::size_t kernel_w,
                     Activation activation, Rng& rng);
template <typename T>
Layer<T> make_maxpool1d(std::size_t window, std::size_t stride);
template <typename T>
Layer<T> make_maxpool2d(std::size_t window, std::size_t stride);
template <typename T>
Layer<T> make_flatten();
template <typename T>
Layer<T> make_dropout(double rate);
template <typename T>
Layer<T> make_simple_rnn(std::size_t input, std::size_t hidden, bool return_sequences, Rng& rng);
template <typename T>
Layer<T> make_lstm(std::size_t input, std::size_t hidden, bool return_sequences, Rng& rng);
template <typename T>
Layer<T> make_gru(std::size_t input, std::size_t hidden, bool return_sequences, Rng& rng);

/// Per-sample output shape for a per-sample input shape (no batch axis).
template <typename T>
Shape layer_output_shape(const Layer<T>& layer, const Shape& input);

/// Values one recurrent step keeps for backpropagation through time.
template <typename T>
struct StepCache {
    Tensor<T> input;     // u_t (SimpleRNN, GRU) or [x_t, h_{t-1}] (LSTM)
    Tensor<T> prev;      // tanh(x_{t-1}) (SimpleRNN), h_{t-1} (GRU), C_{t-1} (LSTM)
    Tensor<T> gate_a;    // i_t (LSTM), z_t (GRU)
    Tensor<T> gate_b;    // f_t (LSTM), r_t (GRU)
    Tensor<T> gate_c;    // o_t (LSTM), r_t∘h_{t-1} (GRU)
    Tensor<T> candidate; // C̃_t (LSTM), tanh candidate (GRU)
    Tensor<T> cell_tanh; // tanh(C_t) (LSTM)
    Tensor<T> state;     // hidden state after the step
    Tensor<T> cell;      // C_t (LSTM)
};

template <typename T>
struct LayerTrace {
    LayerKind kind = LayerKind::Flatten;
    Shape input_shape;               // batched input shape
    Tensor<T> input;                 // Dense input, or im2col columns for convolutions
    Tensor<T> output;                // post-activation output (Dense, convolutions)
    std::vector<std::uint32_t> argmax; // pooling winners
    Tensor<T> mask;                  // dropout keep mask with 1/(1-rate) folded in; empty in inference
    std::vector<StepCache<T>> steps; // recurrent
};

template <typename T>
using ForwardTrace = std::vector<LayerTrace<T>>;

template <typename T>
struct LayerResult {
    Tensor<T> output;
    LayerTrace<T> trace;
};

template <typename T>
struct LayerGradients {
    Tensor<T> input_grad;
    std::vector<Tensor<T>> param_grads; // same order as Layer::parameters()
};

template <typename T>
LayerResult<T> layer_forward(const Layer<T>& layer, const Tensor<T>& input, Mode mode, Rng& rng);

template <typename T>
LayerGradients<T> layer_backward(const Layer<T>& layer, const LayerTrace<T>& trace, const Tensor<T>& grad_out);

// Single recurrent steps. Vectors may be 1-D (one sample) or [B × n].
template <typename T>
Tensor<T> simple_rnn_step(const SimpleRNNCell<T>& cell, const Tensor<T>& prev_state, const Tensor<T>& input);

template <typename T>
struct LSTMState {
    Tensor<T> h;
    Tensor<T> c;
};

template <typename T>
LSTMState<T> lstm_step(const LSTMCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev);

template <typename T>
Tensor<T> gru_step(const GRUCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev);

template <typename T>
struct SequenceResult {
    Tensor<T> final_state; // [B × hidden] of the last layer at the last step
    ForwardTrace<T> trace;
};

/// Runs a stack of recurrent layers from zero initial state. `sequence` is
/// [steps × features] or [B × steps × features]. Every layer except the last
/// feeds its full state sequence to the next one.
template <typename T>
SequenceResult<T> sequence_forward(std::span<const Layer<T>> stack, const Tensor<T>& sequence, Mode mode);

namespace detail {

// Cached steps used by both the public step functions and the unrolled loop.
// Inputs are [B × n].
template <typename T>
void simple_rnn_step_cached(const SimpleRNNCell<T>& cell, const Tensor<T>& prev_state, const Tensor<T>& input,
                            StepCache<T>& cache);
template <typename T>
void lstm_step_cached(const LSTMCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                      StepCache<T>& cache);
template <typename T>
void gru_step_cached(const GRUCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev, StepCache<T>& cache);

template <typename T>
LayerResult<T> recurrent_forward(const Layer<T>& layer, const Tensor<T>& input);
template <typename T>
LayerGradients<T> recurrent_backward(const Layer<T>& layer, const LayerTrace<T>& trace, const Tensor<T>& grad_out);

} // namespace detail

} // namespace rmdl
