#include "rmdl/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rmdl {

std::string_view to_string(Family f) {
    switch (f) {
    case Family::DNN: return "DNN";
    case Family::CNN: return "CNN";
    case Family::RNN: return "RNN";
    }
    return "?";
}

Family parse_family(std::string_view name) {
    for (Family f : {Family::DNN, Family::CNN, Family::RNN})
        if (to_string(f) == name) return f;
    fail(ErrorKind::Format, "unknown model family '" + std::string(name) + "'");
}

std::string_view to_string(InputKind k) {
    switch (k) {
    case InputKind::Image: return "image";
    case InputKind::TfIdf: return "tfidf";
    case InputKind::Embedded: return "embedded";
    }
    return "?";
}

InputKind parse_input_kind(std::string_view name) {
    for (InputKind k : {InputKind::Image, InputKind::TfIdf, InputKind::Embedded})
        if (to_string(k) == name) return k;
    fail(ErrorKind::Format, "unknown input kind '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
    if (classes < 1) fail(ErrorKind::Config, "model needs at least one class");
    if (input_shape.empty() || shape_size(input_shape) == 0) fail(ErrorKind::Config, "model input shape is empty");
    if (layers.empty()) fail(ErrorKind::Config, "model has no layers");
    const LayerSpec& last = layers.back();
    if (last.kind != LayerKind::Dense || last.units != classes)
        fail(ErrorKind::Config, "last layer must be Dense with " + std::to_string(classes) + " outputs");
    auto count = [&](auto pred) { return std::count_if(layers.begin(), layers.end(), pred); };
    if (family == Family::RNN && count([](const LayerSpec& l) { return is_recurrent(l.kind); }) == 0)
        fail(ErrorKind::Config, "RNN model without a recurrent layer");
    if (family == Family::CNN &&
        count([](const LayerSpec& l) { return l.kind == LayerKind::Conv1D || l.kind == LayerKind::Conv2D; }) == 0)
        fail(ErrorKind::Config, "CNN model without a convolution layer");
    for (const LayerSpec& l : layers)
        if (l.kind == LayerKind::Dropout && !(l.rate >= 0.0 && l.rate < 1.0))
            fail(ErrorKind::Config, "dropout rate must lie in [0, 1)");
    optimizer.validate();
}

bool ModelSpec::operator==(const ModelSpec& o) const {
    const auto& a = optimizer;
    const auto& b = o.optimizer;
    const bool same_opt = a.kind == b.kind && a.learning_rate == b.learning_rate && a.momentum == b.momentum &&
                          a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.rho == b.rho && a.epsilon == b.epsilon;
    return family == o.family && input == o.input && input_shape == o.input_shape && classes == o.classes &&
           layers == o.layers && same_opt && dropout_rate == o.dropout_rate && seed == o.seed;
}

std::string describe(const ModelSpec& spec) {
    std::ostringstream os;
    os << to_string(spec.family) << " input=" << to_string(spec.input) << shape_str(spec.input_shape) << " layers=";
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (i) os << ",";
        os << to_string(l.kind);
        switch (l.kind) {
        case LayerKind::Dense: os << "(" << l.units << ")"; break;
        case LayerKind::Conv1D:
        case LayerKind::Conv2D: os << "(" << l.units << "x" << l.kernel << ")"; break;
        case LayerKind::MaxPool1D:
        case LayerKind::MaxPool2D: os << "(" << l.window << ")"; break;
        case LayerKind::SimpleRNN:
        case LayerKind::LSTM:
        case LayerKind::GRU: os << "(" << l.units << ")"; break;
        default: break;
        }
    }
    os << " optimizer=" << to_string(spec.optimizer.kind) << "(lr=" << spec.optimizer.learning_rate << ")";
    os << " dropout=" << spec.dropout_rate << " seed=" << spec.seed;
    return os.str();
}

template <typename T>
std::vector<Tensor<T>*> Model<T>::parameters() {
    std::vector<Tensor<T>*> out;
    for (Layer<T>& l : layers)
        for (Tensor<T>* p : l.parameters()) out.push_back(p);
    return out;
}

template <typename T>
std::vector<const Tensor<T>*> Model<T>::parameters() const {
    std::vector<const Tensor<T>*> out;
    for (const Layer<T>& l : layers)
        for (const Tensor<T>* p : l.parameters()) out.push_back(p);
    return out;
}

template <typename T>
std::vector<std::string> Model<T>::parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
        for (const std::string& n : layers[i].parameter_names()) out.push_back("layer" + std::to_string(i) + "." + n);
    return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor<T>* p : parameters()) n += p->size();
    return n;
}

template <typename T>
Model<T> build_model(const ModelSpec& spec, Rng& rng) {
    spec.validate();
    Model<T> model;
    model.spec = spec;
    Shape current = spec.input_shape;
    for (const LayerSpec& ls : spec.layers) {
        Layer<T> layer;
        auto need_rank = [&](std::size_t rank) {
            if (current.size() != rank)
                fail(ErrorKind::Shape, std::string(to_string(ls.kind)) + " layer cannot follow output " +
                                           shape_str(current));
        };
        switch (ls.kind) {
        case LayerKind::Dense:
            need_rank(1);
            layer = make_dense<T>(current[0], ls.units, ls.activation, rng);
            break;
        case LayerKind::Conv1D:
            need_rank(2);
            layer = make_conv1d<T>(current[1], ls.units, ls.kernel, ls.activation, rng);
            break;
        case LayerKind::Conv2D:
            need_rank(3);
            layer = make_conv2d<T>(current[2], ls.units, ls.kernel, ls.kernel, ls.activation, rng);
            break;
        case LayerKind::MaxPool1D: layer = make_maxpool1d<T>(ls.window, ls.stride); break;
        case LayerKind::MaxPool2D: layer = make_maxpool2d<T>(ls.window, ls.stride); break;
        case LayerKind::Flatten: layer = make_flatten<T>(); break;
        case LayerKind::Dropout: layer = make_dropout<T>(ls.rate); break;
        case LayerKind::SimpleRNN:
            need_rank(2);
            layer = make_simple_rnn<T>(current[1], ls.units, ls.return_sequences, rng);
            break;
        case LayerKind::LSTM:
            need_rank(2);
            layer = make_lstm<T>(current[1], ls.units, ls.return_sequences, rng);
            break;
        case LayerKind::GRU:
            need_rank(2);
            layer = make_gru<T>(current[1], ls.units, ls.return_sequences, rng);
            break;
        }
        current = layer_output_shape(layer, current);
        model.layers.push_back(std::move(layer));
    }
    if (current != Shape{spec.classes})
        fail(ErrorKind::Shape, "model output " + shape_str(current) + " does not match class count");
    return model;
}

template <typename T>
Model<T> build_model(const ModelSpec& spec) {
    Rng rng(derive_seed(spec.seed, {kInitStream}));
    return build_model<T>(spec, rng);
}

namespace {

template <typename T>
Tensor<T> batched_input(const ModelSpec& spec, const Tensor<T>& input) {
    const std::size_t sample = shape_size(spec.input_shape);
    Shape shape{0};
    shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
    if (input.shape() == spec.input_shape) {
        shape[0] = 1;
        return input.reshaped(shape);
    }
    if (input.rank() >= 2 && input.size() == input.dim(0) * sample) {
        shape[0] = input.dim(0);
        return input.reshaped(shape);
    }
    fail(ErrorKind::Shape, "input " + shape_str(input.shape()) + " does not match model input " +
                               shape_str(spec.input_shape));
}

} // namespace

template <typename T>
ModelOutput<T> model_forward(const Model<T>& model, const Tensor<T>& input, Mode mode, Rng& rng) {
    Tensor<T> current = batched_input(model.spec, input);
    ModelOutput<T> out;
    out.trace.reserve(model.layers.size());
    for (const Layer<T>& layer : model.layers) {
        LayerResult<T> r = layer_forward(layer, current, mode, rng);
        current = std::move(r.output);
        out.trace.push_back(std::move(r.trace));
    }
    out.probs = softmax_rows(current);
    return out;
}

template <typename T>
std::vector<Tensor<T>> model_backward(const Model<T>& model, const ForwardTrace<T>& trace, const Tensor<T>& logit_grad) {
    if (trace.size() != model.layers.size())
        fail(ErrorKind::Trace, "trace has " + std::to_string(trace.size()) + " entries for " +
                                   std::to_string(model.layers.size()) + " layers");
    std::vector<std::vector<Tensor<T>>> per_layer(model.layers.size());
    Tensor<T> grad = logit_grad;
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        LayerGradients<T> g = layer_backward(model.layers[i], trace[i], grad);
        grad = std::move(g.input_grad);
        per_layer[i] = std::move(g.param_grads);
    }
    std::vector<Tensor<T>> flat;
    for (auto& grads : per_layer)
        for (auto& g : grads) flat.push_back(std::move(g));
    return flat;
}

namespace {

template <typename T>
void check_labels(const Tensor<T>& probs, std::span<const std::size_t> labels) {
    if (labels.size() != probs.dim(0))
        fail(ErrorKind::Shape, std::to_string(labels.size()) + " labels for a batch of " + std::to_string(probs.dim(0)));
    for (std::size_t y : labels)
        if (y >= probs.dim(1))
            fail(ErrorKind::Label, "label " + std::to_string(y) + " out of range for " +
                                       std::to_string(probs.dim(1)) + " classes");
}

} // namespace

template <typename T>
BatchLoss<T> loss_and_gradients(const Model<T>& model, const Tensor<T>& batch, std::span<const std::size_t> labels,
                                Mode mode, Rng& rng) {
    ModelOutput<T> out = model_forward(model, batch, mode, rng);
    check_labels(out.probs, labels);
    const std::size_t n = labels.size(), k = out.probs.dim(1);
    BatchLoss<T> r;
    Tensor<T> logit_grad = out.probs;
    const T inv = T{1} / static_cast<T>(n);
    for (std::size_t b = 0; b < n; ++b) {
        auto row = out.probs.row(b);
        r.loss += -std::log(static_cast<double>(row[labels[b]]) + kProbabilityClamp);
        if (argmax<T>(row) == labels[b]) ++r.correct;
        logit_grad[b * k + labels[b]] -= T{1};
        for (std::size_t j = 0; j < k; ++j) logit_grad[b * k + j] *= inv;
    }
    r.loss /= static_cast<double>(n);
    r.grads = model_backward(model, out.trace, logit_grad);
    return r;
}

template <typename T>
double batch_loss(const Model<T>& model, const Tensor<T>& batch, std::span<const std::size_t> labels, Mode mode,
                  Rng& rng) {
    ModelOutput<T> out = model_forward(model, batch, mode, rng);
    check_labels(out.probs, labels);
    double loss = 0.0;
    for (std::size_t b = 0; b < labels.size(); ++b)
        loss += -std::log(static_cast<double>(out.probs.row(b)[labels[b]]) + kProbabilityClamp);
    return loss / static_cast<double>(labels.size());
}

double check_gradients(std::span<double> params, const std::function<double()>& loss, std::span<const double> analytic,
                       double h) {
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const double saved = params[p];
        params[p] = saved + h;
        const double up = loss();
        params[p] = saved - h;
        const double down = loss();
        params[p] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[p]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[p] - numeric) / denom);
    }
    return worst;
}

double check_gradients(Model<double>& model, const Tensor<double>& batch, std::span<const std::size_t> labels, double h,
                       Mode mode, std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    const BatchLoss<double> analytic = loss_and_gradients(model, batch, labels, mode, rng);
    auto loss = [&] {
        Rng replay(rng_seed);
        return batch_loss(model, batch, labels, mode, replay);
    };
    double worst = 0.0;
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        worst = std::max(worst, check_gradients(params[i]->data(), loss, analytic.grads[i].data(), h));
    return worst;
}

#define RMDL_INSTANTIATE_MODEL(T)                                                                                 \
    template struct Model<T>;                                                                                     \
    template Model<T> build_model<T>(const ModelSpec&);                                                           \
    template Model<T> build_model<T>(const ModelSpec&, Rng&);                                                     \
    template ModelOutput<T> model_forward<T>(const Model<T>&, const Tensor<T>&, Mode, Rng&);                      \
    template std::vector<Tensor<T>> model_backward<T>(const Model<T>&, const ForwardTrace<T>&, const Tensor<T>&); \
    template BatchLoss<T> loss_and_gradients<T>(const Model<T>&, const Tensor<T>&, std::span<const std::size_t>,  \
                                                Mode, Rng&);                                                      \
    template double batch_loss<T>(const Model<T>&, const Tensor<T>&, std::span<const std::size_t>, Mode, Rng&);

RMDL_INSTANTIATE_MODEL(float)
RMDL_INSTANTIATE_MODEL(double)

#undef RMDL_INSTANTIATE_MODEL

} // namespace rmdl
