#include "rmdl/layers.hpp"

#include <cmath>

#include "rmdl/kernels.hpp"

namespace rmdl {

std::string_view to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv1D: return "conv1d";
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::MaxPool1D: return "maxpool1d";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::SimpleRNN: return "simple_rnn";
    case LayerKind::LSTM: return "lstm";
    case LayerKind::GRU: return "gru";
    }
    return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
    for (LayerKind k : {LayerKind::Dense, LayerKind::Conv1D, LayerKind::Conv2D, LayerKind::MaxPool1D,
                        LayerKind::MaxPool2D, LayerKind::Flatten, LayerKind::Dropout, LayerKind::SimpleRNN,
                        LayerKind::LSTM, LayerKind::GRU})
        if (to_string(k) == name) return k;
    fail(ErrorKind::Format, "unknown layer kind '" + std::string(name) + "'");
}

bool is_recurrent(LayerKind kind) {
    return kind == LayerKind::SimpleRNN || kind == LayerKind::LSTM || kind == LayerKind::GRU;
}

namespace {

template <typename T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t(std::move(shape));
    for (T& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

} // namespace

template <typename T>
std::vector<Tensor<T>*> Layer<T>::parameters() {
    std::vector<Tensor<T>*> out;
    std::visit(
        [&](auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, DenseParams<T>>) out = {&p.weight, &p.bias};
            else if constexpr (std::is_same_v<P, ConvParams<T>>) out = {&p.kernel, &p.bias};
            else if constexpr (std::is_same_v<P, SimpleRNNCell<T>>) out = {&p.w_rec, &p.w_in, &p.bias};
            else if constexpr (std::is_same_v<P, LSTMCell<T>>)
                out = {&p.w_i, &p.w_f, &p.w_o, &p.w_c, &p.b_i, &p.b_f, &p.b_o, &p.b_c};
            else if constexpr (std::is_same_v<P, GRUCell<T>>)
                out = {&p.w_z, &p.u_z, &p.b_z, &p.w_r, &p.u_r, &p.b_r, &p.w_h, &p.u_h, &p.b_h};
        },
        params);
    return out;
}

template <typename T>
std::vector<const Tensor<T>*> Layer<T>::parameters() const {
    auto mutable_params = const_cast<Layer<T>*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

template <typename T>
std::vector<std::string> Layer<T>::parameter_names() const {
    switch (kind) {
    case LayerKind::Dense: return {"weight", "bias"};
    case LayerKind::Conv1D:
    case LayerKind::Conv2D: return {"kernel", "bias"};
    case LayerKind::SimpleRNN: return {"w_rec", "w_in", "bias"};
    case LayerKind::LSTM: return {"w_i", "w_f", "w_o", "w_c", "b_i", "b_f", "b_o", "b_c"};
    case LayerKind::GRU: return {"w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"};
    default: return {};
    }
}

template <typename T>
Layer<T> make_dense(std::size_t in, std::size_t out, Activation activation, Rng& rng) {
    Layer<T> l;
    l.kind = LayerKind::Dense;
    l.activation = activation;
    l.params = DenseParams<T>{glorot<T>({out, in}, in, out, rng), Tensor<T>({out})};
    return l;
}

template <typename T>
Layer<T> make_conv1d(std::size_t channels, std::size_t filters, std::size_t width, Activation activation, Rng& rng) {
    Layer<T> l;
    l.kind = LayerKind::Conv1D;
    l.activation = activation;
    l.params = ConvParams<T>{glorot<T>({filters, width, channels}, width * channels, width * filters, rng),
                             Tensor<T>({filters})};
    return l;
}

template <typename T>
Layer<T> make_conv2d(std::size_t channels, std::size_t filters, std::size_t kernel_h, std::size_t kernel_w,
                     Activation activation, Rng& rng) {
    Layer<T> l;
    l.kind = LayerKind::Conv2D;
    l.activation = activation;
    const std::size_t area = kernel_h * kernel_w;
    l.params = ConvParams<T>{glorot<T>({filters, kernel_h, kernel_w, channels}, area * channels, area * filters, rng),
                             Tensor<T>({filters})};
    return l;
}

template <typename T>
Layer<T> make_maxpool1d(std::size_t window, std::size_t stride) {
    if (window == 0 || stride == 0) fail(ErrorKind::Config, "pool window and stride must be positive");
    Layer<T> l;
    l.kind = LayerKind::MaxPool1D;
    l.window = window;
    l.stride = stride;
    return l;
}

template <typename T>
Layer<T> make_maxpool2d(std::size_t window, std::size_t stride) {
    Layer<T> l = make_maxpool1d<T>(window, stride);
    l.kind = LayerKind::MaxPool2D;
    return l;
}

template <typename T>
Layer<T> make_flatten() {
    return Layer<T>{};
}

template <typename T>
Layer<T> make_dropout(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::Config, "dropout rate must lie in [0, 1)");
    Layer<T> l;
    l.kind = LayerKind::Dropout;
    l.rate = rate;
    return l;
}

template <typename T>
Layer<T> make_simple_rnn(std::size_t input, std::size_t hidden, bool return_sequences, Rng& rng) {
    Layer<T> l;
    l.kind = LayerKind::SimpleRNN;
    l.return_sequences = return_sequences;
    SimpleRNNCell<T> c;
    c.w_rec = glorot<T>({hidden, hidden}, hidden, hidden, rng);
    c.w_in = glorot<T>({hidden, input}, input, hidden, rng);
    c.bias = Tensor<T>({hidden});
    l.params = std::move(c);
    return l;
}

template <typename T>
Layer<T> make_lstm(std::size_t input, std::size_t hidden, bool return_sequences, Rng& rng) {
    Layer<T> l;
    l.kind = LayerKind::LSTM;
    l.return_sequences = return_sequences;
    LSTMCell<T> c;
    const std::size_t cols = input + hidden;
    c.w_i = glorot<T>({hidden, cols}, cols, hidden, rng);
    c.w_f = glorot<T>({hidden, cols}, cols, hidden, rng);
    c.w_o = glorot<T>({hidden, cols}, cols, hidden, rng);
    c.w_c = glorot<T>({hidden, cols}, cols, hidden, rng);
    c.b_i = c.b_f = c.b_o = c.b_c = Tensor<T>({hidden});
    l.params = std::move(c);
    return l;
}

template <typename T>
Layer<T> make_gru(std::size_t input, std::size_t hidden, bool return_sequences, Rng& rng) {
    Layer<T> l;
    l.kind = LayerKind::GRU;
    l.return_sequences = return_sequences;
    GRUCell<T> c;
    c.w_z = glorot<T>({hidden, input}, input, hidden, rng);
    c.u_z = glorot<T>({hidden, hidden}, hidden, hidden, rng);
    c.w_r = glorot<T>({hidden, input}, input, hidden, rng);
    c.u_r = glorot<T>({hidden, hidden}, hidden, hidden, rng);
    c.w_h = glorot<T>({hidden, input}, input, hidden, rng);
    c.u_h = glorot<T>({hidden, hidden}, hidden, hidden, rng);
    c.b_z = c.b_r = c.b_h = Tensor<T>({hidden});
    l.params = std::move(c);
    return l;
}

namespace {

[[noreturn]] void shape_mismatch(LayerKind kind, const Shape& got, const std::string& want) {
    fail(ErrorKind::Shape, std::string(to_string(kind)) + " layer expects " + want + ", got " + shape_str(got));
}

std::size_t recurrent_hidden(const auto& params) {
    return std::visit(
        [](const auto& p) -> std::size_t {
            if constexpr (requires { p.hidden_size(); }) return p.hidden_size();
            else return 0;
        },
        params);
}

std::size_t recurrent_input(const auto& params) {
    return std::visit(
        [](const auto& p) -> std::size_t {
            if constexpr (requires { p.input_size(); }) return p.input_size();
            else return 0;
        },
        params);
}

} // namespace

template <typename T>
Shape layer_output_shape(const Layer<T>& layer, const Shape& in) {
    switch (layer.kind) {
    case LayerKind::Dense: {
        const auto& p = std::get<DenseParams<T>>(layer.params);
        if (in.size() != 1 || in[0] != p.weight.dim(1))
            shape_mismatch(layer.kind, in, "[" + std::to_string(p.weight.dim(1)) + "]");
        return {p.weight.dim(0)};
    }
    case LayerKind::Conv1D: {
        const auto& k = std::get<ConvParams<T>>(layer.params).kernel;
        if (in.size() != 2 || in[1] != k.dim(2) || in[0] < k.dim(1))
            shape_mismatch(layer.kind, in, "[length>=" + std::to_string(k.dim(1)) + " x " + std::to_string(k.dim(2)) + "]");
        return {in[0] - k.dim(1) + 1, k.dim(0)};
    }
    case LayerKind::Conv2D: {
        const auto& k = std::get<ConvParams<T>>(layer.params).kernel;
        if (in.size() != 3 || in[2] != k.dim(3) || in[0] < k.dim(1) || in[1] < k.dim(2))
            shape_mismatch(layer.kind, in, "[h>=" + std::to_string(k.dim(1)) + " x w>=" + std::to_string(k.dim(2)) +
                                               " x " + std::to_string(k.dim(3)) + "]");
        return {in[0] - k.dim(1) + 1, in[1] - k.dim(2) + 1, k.dim(0)};
    }
    case LayerKind::MaxPool1D:
        if (in.size() != 2 || in[0] < layer.window) shape_mismatch(layer.kind, in, "[length>=window x channels]");
        return {(in[0] - layer.window) / layer.stride + 1, in[1]};
    case LayerKind::MaxPool2D:
        if (in.size() != 3 || in[0] < layer.window || in[1] < layer.window)
            shape_mismatch(layer.kind, in, "[h>=window x w>=window x channels]");
        return {(in[0] - layer.window) / layer.stride + 1, (in[1] - layer.window) / layer.stride + 1, in[2]};
    case LayerKind::Flatten: return {shape_size(in)};
    case LayerKind::Dropout: return in;
    case LayerKind::SimpleRNN:
    case LayerKind::LSTM:
    case LayerKind::GRU: {
        const std::size_t features = recurrent_input(layer.params);
        if (in.size() != 2 || in[1] != features)
            shape_mismatch(layer.kind, in, "[steps x " + std::to_string(features) + "]");
        const std::size_t hidden = recurrent_hidden(layer.params);
        if (layer.return_sequences) return {in[0], hidden};
        return {hidden};
    }
    }
    return in;
}

namespace {

Shape per_sample(const Shape& batched) { return Shape(batched.begin() + 1, batched.end()); }

Shape with_batch(std::size_t batch, const Shape& sample) {
    Shape s{batch};
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

template <typename T>
kernels::ConvGeometry conv_geometry(const Layer<T>& layer, const Shape& in) {
    const auto& k = std::get<ConvParams<T>>(layer.params).kernel;
    if (layer.kind == LayerKind::Conv1D) return {in[0], 1, in[1], in[2], 1, k.dim(1)};
    return {in[0], in[1], in[2], in[3], k.dim(1), k.dim(2)};
}

template <typename T>
kernels::PoolGeometry pool_geometry(const Layer<T>& layer, const Shape& in) {
    if (layer.kind == LayerKind::MaxPool1D)
        return {in[0], 1, in[1], in[2], 1, layer.window, 1, layer.stride};
    return {in[0], in[1], in[2], in[3], layer.window, layer.window, layer.stride, layer.stride};
}

} // namespace

template <typename T>
LayerResult<T> layer_forward(const Layer<T>& layer, const Tensor<T>& input, Mode mode, Rng& rng) {
    if (input.rank() < 2) fail(ErrorKind::Shape, "layer input needs a batch axis, got " + shape_str(input.shape()));
    const std::size_t batch = input.dim(0);
    const Shape out_sample = layer_output_shape(layer, per_sample(input.shape()));
    LayerResult<T> r;
    r.trace.kind = layer.kind;
    r.trace.input_shape = input.shape();

    switch (layer.kind) {
    case LayerKind::Dense: {
        const auto& p = std::get<DenseParams<T>>(layer.params);
        const std::size_t in = p.weight.dim(1), out = p.weight.dim(0);
        r.output = Tensor<T>({batch, out});
        kernels::gemm_nt<T>(batch, out, in, input.data(), p.weight.data(), r.output.data(), false);
        kernels::add_row_bias<T>(batch, out, p.bias.data(), r.output.data());
        activate_inplace(layer.activation, r.output.data());
        r.trace.input = input;
        r.trace.output = r.output;
        return r;
    }
    case LayerKind::Conv1D:
    case LayerKind::Conv2D: {
        const auto& p = std::get<ConvParams<T>>(layer.params);
        const auto g = conv_geometry(layer, input.shape());
        const std::size_t filters = p.kernel.dim(0);
        Tensor<T> columns({g.rows(), g.patch()});
        kernels::im2col<T>(g, input.data(), columns.data());
        r.output = Tensor<T>(with_batch(batch, out_sample));
        kernels::gemm_nt<T>(g.rows(), filters, g.patch(), columns.data(), p.kernel.data(), r.output.data(), false);
        kernels::add_row_bias<T>(g.rows(), filters, p.bias.data(), r.output.data());
        activate_inplace(layer.activation, r.output.data());
        r.trace.input = std::move(columns);
        r.trace.output = r.output;
        return r;
    }
    case LayerKind::MaxPool1D:
    case LayerKind::MaxPool2D: {
        const auto g = pool_geometry(layer, input.shape());
        r.output = Tensor<T>(with_batch(batch, out_sample));
        r.trace.argmax.resize(g.out_size());
        kernels::maxpool_forward<T>(g, input.data(), r.output.data(), r.trace.argmax);
        return r;
    }
    case LayerKind::Flatten:
        r.output = input.reshaped(with_batch(batch, out_sample));
        return r;
    case LayerKind::Dropout: {
        r.output = input;
        if (mode == Mode::Infer || layer.rate == 0.0) return r;
        const T scale = static_cast<T>(1.0 / (1.0 - layer.rate));
        r.trace.mask = Tensor<T>(input.shape());
        for (std::size_t i = 0; i < input.size(); ++i) {
            const T m = rng.uniform() >= layer.rate ? scale : T{0};
            r.trace.mask[i] = m;
            r.output[i] *= m;
        }
        return r;
    }
    case LayerKind::SimpleRNN:
    case LayerKind::LSTM:
    case LayerKind::GRU: return detail::recurrent_forward(layer, input);
    }
    return r;
}

template <typename T>
LayerGradients<T> layer_backward(const Layer<T>& layer, const LayerTrace<T>& trace, const Tensor<T>& grad_out) {
    if (trace.kind != layer.kind)
        fail(ErrorKind::Trace, "trace recorded for a " + std::string(to_string(trace.kind)) + " layer, not " +
                                   std::string(to_string(layer.kind)));
    if (trace.input_shape.empty()) fail(ErrorKind::Trace, "trace is empty");
    const std::size_t batch = trace.input_shape[0];
    const Shape expected = with_batch(batch, layer_output_shape(layer, per_sample(trace.input_shape)));
    if (grad_out.shape() != expected)
        fail(ErrorKind::Trace, "output gradient " + shape_str(grad_out.shape()) + " does not match traced output " +
                                   shape_str(expected));

    LayerGradients<T> r;
    switch (layer.kind) {
    case LayerKind::Dense: {
        const auto& p = std::get<DenseParams<T>>(layer.params);
        const std::size_t in = p.weight.dim(1), out = p.weight.dim(0);
        Tensor<T> g = grad_out;
        activation_backward<T>(layer.activation, trace.output.data(), g.data());
        Tensor<T> dw(p.weight.shape()), db(p.bias.shape());
        kernels::gemm_tn<T>(out, in, batch, g.data(), trace.input.data(), dw.data(), false);
        kernels::column_sums<T>(batch, out, g.data(), db.data(), false);
        r.input_grad = Tensor<T>(trace.input_shape);
        kernels::gemm_nn<T>(batch, in, out, g.data(), p.weight.data(), r.input_grad.data(), false);
        r.param_grads = {std::move(dw), std::move(db)};
        return r;
    }
    case LayerKind::Conv1D:
    case LayerKind::Conv2D: {
        const auto& p = std::get<ConvParams<T>>(layer.params);
        const auto geo = conv_geometry(layer, trace.input_shape);
        const std::size_t filters = p.kernel.dim(0);
        Tensor<T> g = grad_out;
        activation_backward<T>(layer.activation, trace.output.data(), g.data());
        Tensor<T> dk(p.kernel.shape()), db(p.bias.shape());
        kernels::gemm_tn<T>(filters, geo.patch(), geo.rows(), g.data(), trace.input.data(), dk.data(), false);
        kernels::column_sums<T>(geo.rows(), filters, g.data(), db.data(), false);
        Tensor<T> dcols({geo.rows(), geo.patch()});
        kernels::gemm_nn<T>(geo.rows(), geo.patch(), filters, g.data(), p.kernel.data(), dcols.data(), false);
        r.input_grad = Tensor<T>(trace.input_shape);
        kernels::col2im<T>(geo, dcols.data(), r.input_grad.data());
        r.param_grads = {std::move(dk), std::move(db)};
        return r;
    }
    case LayerKind::MaxPool1D:
    case LayerKind::MaxPool2D: {
        const auto geo = pool_geometry(layer, trace.input_shape);
        if (trace.argmax.size() != geo.out_size()) fail(ErrorKind::Trace, "pooling trace has no argmax record");
        r.input_grad = Tensor<T>(trace.input_shape);
        kernels::maxpool_backward<T>(geo, grad_out.data(), trace.argmax, r.input_grad.data());
        return r;
    }
    case LayerKind::Flatten: r.input_grad = grad_out.reshaped(trace.input_shape); return r;
    case LayerKind::Dropout:
        r.input_grad = grad_out;
        if (!trace.mask.empty())
            for (std::size_t i = 0; i < r.input_grad.size(); ++i) r.input_grad[i] *= trace.mask[i];
        return r;
    case LayerKind::SimpleRNN:
    case LayerKind::LSTM:
    case LayerKind::GRU: return detail::recurrent_backward(layer, trace, grad_out);
    }
    return r;
}

#define RMDL_INSTANTIATE_LAYERS(T)                                                                             \
    template struct Layer<T>;                                                                                  \
    template Layer<T> make_dense<T>(std::size_t, std::size_t, Activation, Rng&);                               \
    template Layer<T> make_conv1d<T>(std::size_t, std::size_t, std::size_t, Activation, Rng&);                 \
    template Layer<T> make_conv2d<T>(std::size_t, std::size_t, std::size_t, std::size_t, Activation, Rng&);    \
    template Layer<T> make_maxpool1d<T>(std::size_t, std::size_t);                                             \
    template Layer<T> make_maxpool2d<T>(std::size_t, std::size_t);                                             \
    template Layer<T> make_flatten<T>();                                                                       \
    template Layer<T> make_dropout<T>(double);                                                                 \
    template Layer<T> make_simple_rnn<T>(std::size_t, std::size_t, bool, Rng&);                                \
    template Layer<T> make_lstm<T>(std::size_t, std::size_t, bool, Rng&);                                      \
    template Layer<T> make_gru<T>(std::size_t, std::size_t, bool, Rng&);                                       \
    template Shape layer_output_shape<T>(const Layer<T>&, const Shape&);                                       \
    template LayerResult<T> layer_forward<T>(const Layer<T>&, const Tensor<T>&, Mode, Rng&);                   \
    template LayerGradients<T> layer_backward<T>(const Layer<T>&, const LayerTrace<T>&, const Tensor<T>&);

RMDL_INSTANTIATE_LAYERS(float)
RMDL_INSTANTIATE_LAYERS(double)

#undef RMDL_INSTANTIATE_LAYERS

} // namespace rmdl
