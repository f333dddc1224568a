#include "rmdl/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "rmdl/kernels.hpp"

namespace rmdl {

void ArchitectureRanges::validate() const {
    auto check = [](IntRange r, std::int64_t min, const char* what) {
        if (r.lo < min || r.lo > r.hi)
            fail(ErrorKind::Config, std::string(what) + " range must satisfy " + std::to_string(min) + " <= min <= max");
    };
    check(dnn_layers, 1, "DNN layer");
    check(dnn_nodes, 1, "DNN node");
    check(cnn_layers, 1, "CNN layer");
    check(cnn_filters, 1, "CNN filter");
    check(rnn_layers, 1, "RNN layer");
    check(rnn_units, 1, "RNN unit");
    if (cnn_kernels.empty() || rnn_cells.empty() || optimizers.empty() || learning_rates.empty())
        fail(ErrorKind::Config, "kernel, cell, optimizer and learning-rate sets must be nonempty");
    for (std::size_t k : cnn_kernels)
        if (k == 0) fail(ErrorKind::Config, "kernel sizes must be positive");
    for (LayerKind c : rnn_cells)
        if (!is_recurrent(c)) fail(ErrorKind::Config, "RNN cell set may only hold recurrent kinds");
    for (double lr : learning_rates)
        if (!(lr > 0.0)) fail(ErrorKind::Config, "learning rates must be positive");
    if (!(dropout.lo >= 0.0 && dropout.lo <= dropout.hi && dropout.hi < 1.0))
        fail(ErrorKind::Config, "dropout range must satisfy 0 <= min <= max < 1");
}

InputKind InputLayout::input_for(Family family) const {
    if (!text) return InputKind::Image;
    return family == Family::DNN ? InputKind::TfIdf : InputKind::Embedded;
}

Shape InputLayout::shape_for(Family family) const {
    if (!text) {
        if (family == Family::RNN) return {image.at(0), image.at(1) * image.at(2)};
        return image;
    }
    if (family == Family::DNN) return {tfidf_dim};
    return embedded;
}

namespace {

template <typename C>
auto pick(const C& choices, Rng& rng) {
    return choices[rng.index(choices.size())];
}

std::size_t draw(IntRange r, Rng& rng) { return static_cast<std::size_t>(rng.uniform_int(r.lo, r.hi)); }

LayerSpec dense(std::size_t units, Activation a) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.units = units;
    l.activation = a;
    return l;
}

LayerSpec simple(LayerKind kind) {
    LayerSpec l;
    l.kind = kind;
    return l;
}

LayerSpec dropout(double rate) {
    LayerSpec l = simple(LayerKind::Dropout);
    l.rate = rate;
    return l;
}

LayerSpec pool(LayerKind kind, std::size_t window) {
    LayerSpec l = simple(kind);
    l.window = window;
    l.stride = window;
    return l;
}

} // namespace

ModelSpec sample_spec(Family family, const ArchitectureRanges& ranges, const InputLayout& layout, Rng& rng) {
    ranges.validate();
    if (layout.classes < 1) fail(ErrorKind::Config, "layout has no classes");
    ModelSpec spec;
    spec.family = family;
    spec.input = layout.input_for(family);
    spec.input_shape = layout.shape_for(family);
    spec.classes = layout.classes;

    // Architecture draws first, shared hyperparameters after, in a fixed order.
    std::vector<std::size_t> widths;
    std::vector<std::size_t> kernels;
    LayerKind cell = LayerKind::LSTM;
    switch (family) {
    case Family::DNN: {
        const std::size_t layers = draw(ranges.dnn_layers, rng);
        for (std::size_t i = 0; i < layers; ++i) widths.push_back(draw(ranges.dnn_nodes, rng));
        break;
    }
    case Family::CNN: {
        const std::size_t layers = draw(ranges.cnn_layers, rng);
        for (std::size_t i = 0; i < layers; ++i) {
            widths.push_back(draw(ranges.cnn_filters, rng));
            kernels.push_back(pick(ranges.cnn_kernels, rng));
        }
        break;
    }
    case Family::RNN: {
        const std::size_t layers = draw(ranges.rnn_layers, rng);
        cell = pick(ranges.rnn_cells, rng);
        for (std::size_t i = 0; i < layers; ++i) widths.push_back(draw(ranges.rnn_units, rng));
        break;
    }
    }
    spec.dropout_rate = rng.uniform(ranges.dropout.lo, ranges.dropout.hi);
    spec.optimizer = OptimizerConfig::defaults(pick(ranges.optimizers, rng));
    spec.optimizer.learning_rate = pick(ranges.learning_rates, rng);
    spec.seed = rng.next();

    auto& L = spec.layers;
    switch (family) {
    case Family::DNN:
        if (spec.input_shape.size() > 1) L.push_back(simple(LayerKind::Flatten));
        for (std::size_t w : widths) {
            L.push_back(dense(w, Activation::Relu));
            L.push_back(dropout(spec.dropout_rate));
        }
        break;
    case Family::CNN:
        if (spec.input == InputKind::Image) {
            std::size_t h = spec.input_shape[0], w = spec.input_shape[1];
            for (std::size_t i = 0; i < widths.size(); ++i) {
                std::size_t k = kernels[i];
                if (i == 0) k = std::min({k, h, w});
                else if (k > h || k > w) break; // deeper layers would not fit the remaining map
                LayerSpec conv = simple(LayerKind::Conv2D);
                conv.units = widths[i];
                conv.kernel = k;
                conv.activation = Activation::Relu;
                L.push_back(conv);
                h = h - k + 1;
                w = w - k + 1;
                if (h >= 2 && w >= 2) {
                    L.push_back(pool(LayerKind::MaxPool2D, 2));
                    h /= 2;
                    w /= 2;
                }
            }
        } else {
            std::size_t len = spec.input_shape[0];
            for (std::size_t i = 0; i < widths.size(); ++i) {
                std::size_t k = kernels[i];
                if (i == 0) k = std::min(k, len);
                else if (k > len) break;
                LayerSpec conv = simple(LayerKind::Conv1D);
                conv.units = widths[i];
                conv.kernel = k;
                conv.activation = Activation::Relu;
                L.push_back(conv);
                len = len - k + 1;
                const bool last = i + 1 == widths.size() || (len / 2) < kernels[i + 1] || len < 2;
                if (last) {
                    L.push_back(pool(LayerKind::MaxPool1D, len)); // global max-pool
                    break;
                }
                L.push_back(pool(LayerKind::MaxPool1D, 2));
                len /= 2;
            }
        }
        L.push_back(simple(LayerKind::Flatten));
        L.push_back(dropout(spec.dropout_rate));
        break;
    case Family::RNN:
        for (std::size_t i = 0; i < widths.size(); ++i) {
            LayerSpec r = simple(cell);
            r.units = widths[i];
            r.return_sequences = i + 1 < widths.size();
            L.push_back(r);
        }
        L.push_back(dropout(spec.dropout_rate));
        break;
    }
    L.push_back(dense(spec.classes, Activation::None));
    spec.validate();
    return spec;
}

void EnsembleConfig::validate() const {
    if (n() == 0) fail(ErrorKind::Config, "ensemble needs at least one model (d + c + r >= 1)");
    if (batch_size == 0) fail(ErrorKind::Config, "batch size must be positive");
}

std::uint64_t model_seed(std::uint64_t master_seed, Family family, std::size_t index_in_family) {
    return derive_seed(master_seed, {static_cast<std::uint64_t>(family), index_in_family});
}

std::vector<ModelSpec> build_ensemble_plan(const EnsembleConfig& config, const ArchitectureRanges& ranges,
                                           const InputLayout& layout) {
    config.validate();
    ranges.validate();
    std::vector<ModelSpec> plan;
    plan.reserve(config.n());
    const std::pair<Family, std::size_t> groups[] = {
        {Family::DNN, config.dnn}, {Family::CNN, config.cnn}, {Family::RNN, config.rnn}};
    for (auto [family, count] : groups)
        for (std::size_t k = 0; k < count; ++k) {
            Rng rng(model_seed(config.seed, family, k));
            plan.push_back(sample_spec(family, ranges, layout, rng));
        }
    return plan;
}

std::size_t FeatureBank::size() const { return labels.size(); }

const Tensor<float>& FeatureBank::features(InputKind kind) const {
    const std::optional<Tensor<float>>* slot = nullptr;
    switch (kind) {
    case InputKind::Image: slot = &image; break;
    case InputKind::TfIdf: slot = &tfidf; break;
    case InputKind::Embedded: slot = &embedded; break;
    }
    if (!slot->has_value())
        fail(ErrorKind::Data, "no " + std::string(to_string(kind)) + " features available for this model");
    return **slot;
}

FeatureBank FeatureBank::subset(std::span<const std::size_t> indices) const {
    FeatureBank out;
    if (image) out.image = gather_rows(*image, indices);
    if (tfidf) out.tfidf = gather_rows(*tfidf, indices);
    if (embedded) out.embedded = gather_rows(*embedded, indices);
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
    return out;
}

namespace {

constexpr std::size_t kInferenceBatch = 256;

void check_split(const ModelSpec& spec, const Tensor<float>& x, std::span<const std::size_t> y, const char* name) {
    const std::size_t sample = shape_size(spec.input_shape);
    if (x.empty() || y.empty()) fail(ErrorKind::Data, std::string(name) + " split is empty");
    if (x.size() != x.dim(0) * sample || x.dim(0) != y.size())
        fail(ErrorKind::Data, std::string(name) + " features " + shape_str(x.shape()) + " with " +
                                  std::to_string(y.size()) + " labels do not match model input " +
                                  shape_str(spec.input_shape));
    for (std::size_t label : y)
        if (label >= spec.classes)
            fail(ErrorKind::Data, std::string(name) + " label " + std::to_string(label) + " exceeds class count " +
                                      std::to_string(spec.classes));
}

struct SplitScore {
    double loss = 0.0;
    double accuracy = 0.0;
};

SplitScore score(const Model<float>& model, const Tensor<float>& x, std::span<const std::size_t> y) {
    Rng unused(0);
    double loss = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < y.size(); start += kInferenceBatch) {
        const std::size_t end = std::min(y.size(), start + kInferenceBatch);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const ModelOutput<float> out = model_forward(model, gather_rows(x, idx), Mode::Infer, unused);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            auto row = out.probs.row(b);
            loss += -std::log(static_cast<double>(row[y[start + b]]) + kProbabilityClamp);
            if (argmax<float>(row) == y[start + b]) ++correct;
        }
    }
    const double n = static_cast<double>(y.size());
    return {loss / n, static_cast<double>(correct) / n};
}

} // namespace

RDLModel train_rdl(const ModelSpec& spec, const Tensor<float>& train_x, std::span<const std::size_t> train_y,
                   const Tensor<float>& val_x, std::span<const std::size_t> val_y, const TrainOptions& options) {
    check_split(spec, train_x, train_y, "training");
    check_split(spec, val_x, val_y, "validation");
    if (options.batch_size == 0) fail(ErrorKind::Config, "batch size must be positive");

    RDLModel rdl{spec, build_model<float>(spec), {}};
    OptimizerState<float> state = [&] {
        std::vector<Shape> shapes;
        for (const Tensor<float>* p : rdl.model.parameters()) shapes.push_back(p->shape());
        return init_state<float>(spec.optimizer, shapes);
    }();
    const std::vector<Tensor<float>*> params = rdl.model.parameters();

    Rng shuffle_rng(derive_seed(spec.seed, {kShuffleStream}));
    Rng dropout_rng(derive_seed(spec.seed, {kDropoutStream}));
    const std::size_t n = train_y.size();
    std::vector<std::size_t> order(n);
    std::vector<std::size_t> batch_idx;
    std::vector<std::size_t> batch_labels;

    auto diverged = [&](std::size_t epoch) {
        fail(ErrorKind::Divergence, "model " + std::to_string(options.model_index) + " (" +
                                        std::string(to_string(spec.family)) + ") diverged in epoch " +
                                        std::to_string(epoch));
    };

    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const std::size_t end = std::min(n, start + options.batch_size);
            batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
            batch_labels.clear();
            for (std::size_t i : batch_idx) batch_labels.push_back(train_y[i]);
            BatchLoss<float> step =
                loss_and_gradients(rdl.model, gather_rows(train_x, batch_idx), batch_labels, Mode::Train, dropout_rng);
            if (!std::isfinite(step.loss)) diverged(epoch);
            for (const Tensor<float>& g : step.grads)
                if (!g.all_finite()) diverged(epoch);
            optimizer_step<float>(state, params, step.grads, spec.optimizer);
            loss_sum += step.loss * static_cast<double>(batch_idx.size());
            correct += step.correct;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n);
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
        const SplitScore val = score(rdl.model, val_x, val_y);
        if (!std::isfinite(val.loss)) diverged(epoch);
        rec.val_loss = val.loss;
        rec.val_accuracy = val.accuracy;
        rdl.history.push_back(rec);
        if (options.on_epoch) options.on_epoch({options.model_index, spec.family, rec});
    }
    return rdl;
}

Tensor<float> predict_probs(const Model<float>& model, const Tensor<float>& inputs) {
    const std::size_t sample = shape_size(model.spec.input_shape);
    if (inputs.shape() == model.spec.input_shape) {
        Rng unused(0);
        return model_forward(model, inputs, Mode::Infer, unused).probs;
    }
    if (inputs.empty() || inputs.size() != inputs.dim(0) * sample)
        fail(ErrorKind::Shape, "input " + shape_str(inputs.shape()) + " does not match model input " +
                                   shape_str(model.spec.input_shape));
    const std::size_t n = inputs.dim(0);
    Tensor<float> out({n, model.spec.classes});
    std::vector<std::size_t> idx;
    Rng unused(0);
    for (std::size_t start = 0; start < n; start += kInferenceBatch) {
        const std::size_t end = std::min(n, start + kInferenceBatch);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const ModelOutput<float> r = model_forward(model, gather_rows(inputs, idx), Mode::Infer, unused);
        std::copy(r.probs.data().begin(), r.probs.data().end(), out.ptr() + start * model.spec.classes);
    }
    return out;
}

ModelPrediction predict_model(const Model<float>& model, const Tensor<float>& input) {
    const Tensor<float> probs = predict_probs(model, input);
    ModelPrediction p;
    auto row = probs.row(0);
    p.probs.assign(row.begin(), row.end());
    p.label = argmax<float>(row);
    return p;
}

std::size_t majority_vote(std::span<const std::size_t> labels, std::span<const float> probs, std::size_t classes) {
    if (labels.empty()) fail(ErrorKind::Config, "majority vote over zero models");
    if (!probs.empty() && probs.size() != labels.size() * classes)
        fail(ErrorKind::Shape, "tie-break probabilities must be [models x classes]");
    std::vector<std::size_t> votes(classes, 0);
    for (std::size_t l : labels) {
        if (l >= classes)
            fail(ErrorKind::Label, "vote label " + std::to_string(l) + " out of range for " + std::to_string(classes) +
                                       " classes");
        ++votes[l];
    }
    const std::size_t top = *std::max_element(votes.begin(), votes.end());
    std::size_t best = classes;
    double best_mass = -1.0;
    for (std::size_t k = 0; k < classes; ++k) {
        if (votes[k] != top) continue;
        double mass = 0.0;
        for (std::size_t j = 0; j < labels.size() && !probs.empty(); ++j) mass += probs[j * classes + k];
        if (best == classes || mass > best_mass) {
            best = k;
            best_mass = mass;
        }
    }
    return best;
}

PredictionMatrix predict_matrix(const Ensemble& ensemble, const FeatureBank& inputs) {
    if (ensemble.models.empty()) fail(ErrorKind::Config, "ensemble has no models");
    PredictionMatrix pm;
    pm.models = ensemble.models.size();
    pm.classes = ensemble.classes;
    bool first = true;
    for (std::size_t j = 0; j < pm.models; ++j) {
        const RDLModel& m = ensemble.models[j];
        const Tensor<float> probs = predict_probs(m.model, inputs.features(m.spec.input));
        if (first) {
            pm.samples = probs.dim(0);
            pm.probs.assign(pm.samples * pm.models * pm.classes, 0.0f);
            pm.labels.assign(pm.samples * pm.models, 0);
            first = false;
        } else if (probs.dim(0) != pm.samples) {
            fail(ErrorKind::Shape, "feature sets disagree on sample count");
        }
        for (std::size_t i = 0; i < pm.samples; ++i) {
            auto row = probs.row(i);
            std::copy(row.begin(), row.end(), pm.probs.begin() + static_cast<std::ptrdiff_t>((i * pm.models + j) * pm.classes));
            pm.labels[i * pm.models + j] = argmax<float>(row);
        }
    }
    return pm;
}

EnsemblePrediction predict_ensemble(const Ensemble& ensemble, const FeatureBank& input) {
    const PredictionMatrix pm = predict_matrix(ensemble, input);
    EnsemblePrediction p;
    auto labels = pm.sample_labels(0);
    p.model_labels.assign(labels.begin(), labels.end());
    p.histogram.assign(pm.classes, 0);
    for (std::size_t l : labels) ++p.histogram[l];
    p.label = pm.vote(0);
    return p;
}

ConfusionCounts confusion_counts(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                 std::size_t classes) {
    if (truth.size() != predicted.size())
        fail(ErrorKind::Data, "label sequences differ in length (" + std::to_string(truth.size()) + " vs " +
                                  std::to_string(predicted.size()) + ")");
    ConfusionCounts c;
    c.classes = classes;
    c.samples = truth.size();
    c.tp.assign(classes, 0);
    c.fp.assign(classes, 0);
    c.fn.assign(classes, 0);
    c.tn.assign(classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const std::size_t t = truth[i], p = predicted[i];
        if (t >= classes || p >= classes) fail(ErrorKind::Label, "label out of range in confusion counts");
        if (t == p) {
            ++c.tp[t];
        } else {
            ++c.fp[p];
            ++c.fn[t];
        }
    }
    for (std::size_t l = 0; l < classes; ++l) c.tn[l] = c.samples - c.tp[l] - c.fp[l] - c.fn[l];
    return c;
}

MicroMetrics micro_metrics(const ConfusionCounts& c) {
    const std::size_t tp = std::accumulate(c.tp.begin(), c.tp.end(), std::size_t{0});
    const std::size_t fp = std::accumulate(c.fp.begin(), c.fp.end(), std::size_t{0});
    const std::size_t fn = std::accumulate(c.fn.begin(), c.fn.end(), std::size_t{0});
    auto ratio = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    return {ratio(tp, tp + fp), ratio(tp, tp + fn), ratio(2 * tp, 2 * tp + fp + fn)};
}

MetricsReport evaluate_predictions(const PredictionMatrix& pm, std::span<const std::size_t> truth) {
    if (pm.samples == 0 || truth.empty()) fail(ErrorKind::Data, "cannot evaluate on an empty test set");
    if (truth.size() != pm.samples) fail(ErrorKind::Data, "label count does not match prediction count");
    std::vector<std::size_t> voted(pm.samples);
    for (std::size_t i = 0; i < pm.samples; ++i) voted[i] = pm.vote(i);

    MetricsReport r;
    r.samples = pm.samples;
    r.counts = confusion_counts(truth, voted, pm.classes);
    r.micro = micro_metrics(r.counts);
    const std::size_t correct = std::accumulate(r.counts.tp.begin(), r.counts.tp.end(), std::size_t{0});
    r.accuracy = static_cast<double>(correct) / static_cast<double>(pm.samples);
    r.error_rate = 1.0 - r.accuracy;
    for (std::size_t j = 0; j < pm.models; ++j) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < pm.samples; ++i) hits += pm.labels[i * pm.models + j] == truth[i];
        r.model_accuracies.push_back(static_cast<double>(hits) / static_cast<double>(pm.samples));
    }
    return r;
}

MetricsReport evaluate(const Ensemble& ensemble, const FeatureBank& test) {
    if (test.size() == 0) fail(ErrorKind::Data, "cannot evaluate on an empty test set");
    return evaluate_predictions(predict_matrix(ensemble, test), test.labels);
}

EnsembleTrainResult train_ensemble(const std::vector<ModelSpec>& plan, const EnsembleConfig& config,
                                   const InputLayout& layout, const FeatureBank& train, const FeatureBank& validation,
                                   const EnsembleTrainOptions& options) {
    config.validate();
    if (plan.empty()) fail(ErrorKind::Config, "empty ensemble plan");
    const std::size_t n = plan.size();
    std::vector<std::optional<RDLModel>> trained(n);
    std::vector<std::exception_ptr> errors(n);
    std::mutex warn_mutex;

    auto run = [&](std::size_t j) {
        TrainOptions opt;
        opt.epochs = config.epochs;
        opt.batch_size = config.batch_size;
        opt.model_index = j;
        opt.on_epoch = options.on_epoch;
        try {
            trained[j] = train_rdl(plan[j], train.features(plan[j].input), train.labels,
                                   validation.features(plan[j].input), validation.labels, opt);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Divergence) {
                errors[j] = std::current_exception();
                return;
            }
            if (options.on_warning) {
                std::lock_guard lock(warn_mutex);
                options.on_warning(std::string(e.what()) + "; excluded from the vote");
            }
        } catch (...) {
            errors[j] = std::current_exception();
        }
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, n));
    if (jobs == 1) {
        for (std::size_t j = 0; j < n; ++j) run(j);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> workers;
        for (std::size_t w = 0; w < jobs; ++w)
            workers.emplace_back([&] {
                kernels::set_kernel_threads(1);
                for (std::size_t j = next++; j < n; j = next++) run(j);
            });
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    EnsembleTrainResult result;
    result.ensemble.classes = layout.classes;
    result.ensemble.layout = layout;
    result.ensemble.config = config;
    for (std::size_t j = 0; j < n; ++j) {
        if (trained[j]) result.ensemble.models.push_back(std::move(*trained[j]));
        else result.diverged.push_back(j);
    }
    if (result.ensemble.models.empty()) fail(ErrorKind::Divergence, "every model in the ensemble diverged");
    return result;
}

} // namespace rmdl
