#pragma once

// Random multimodel ensembles: n = d + c + r independently sampled and
// trained networks (d dense, c convolutional, r recurrent) whose argmax
// labels are combined by majority vote.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmdl/features.hpp"
#include "rmdl/model.hpp"

namespace rmdl {

struct IntRange {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
};

struct RealRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct ArchitectureRanges {
    IntRange dnn_layers{1, 5};
    IntRange dnn_nodes{64, 512};
    IntRange cnn_layers{1, 3};
    IntRange cnn_filters{16, 128};
    std::vector<std::size_t> cnn_kernels{3, 5};
    IntRange rnn_layers{1, 2};
    IntRange rnn_units{32, 128};
    std::vector<LayerKind> rnn_cells{LayerKind::LSTM, LayerKind::GRU};
    RealRange dropout{0.1, 0.5};
    std::vector<OptimizerKind> optimizers{OptimizerKind::Adam, OptimizerKind::RMSProp};
    std::vector<double> learning_rates{1e-2, 1e-3};

    void validate() const;
};

/// Feature shapes available to each family for one task.
struct InputLayout {
    bool text = false;
    Shape image;                // [h × w × c] for image tasks
    std::size_t tfidf_dim = 0;  // V for text tasks
    Shape embedded;             // [max_len × D] for text tasks
    std::size_t classes = 0;

    InputKind input_for(Family family) const;
    Shape shape_for(Family family) const;
};

/// Draws one architecture. Images reach DNNs through a Flatten layer and RNNs
/// row by row (h steps of w·c features); text reaches DNNs as TF-IDF and
/// CNN/RNN models as embedded sequences.
ModelSpec sample_spec(Family family, const ArchitectureRanges& ranges, const InputLayout& layout, Rng& rng);

struct EnsembleConfig {
    std::size_t dnn = 1;
    std::size_t cnn = 1;
    std::size_t rnn = 1;
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    std::uint64_t seed = 42;

    std::size_t n() const { return dnn + cnn + rnn; }
    void validate() const;
};

/// Seed of the k-th model of `family` under `master_seed`. Models are keyed
/// by their position within their family, so adding or removing models of
/// another family leaves a spec unchanged.
std::uint64_t model_seed(std::uint64_t master_seed, Family family, std::size_t index_in_family);

/// d DNN specs, then c CNN specs, then r RNN specs.
std::vector<ModelSpec> build_ensemble_plan(const EnsembleConfig& config, const ArchitectureRanges& ranges,
                                           const InputLayout& layout);

/// Per-family feature tensors (leading axis = sample) plus labels.
struct FeatureBank {
    std::optional<Tensor<float>> image;
    std::optional<Tensor<float>> tfidf;
    std::optional<Tensor<float>> embedded;
    std::vector<std::size_t> labels;

    std::size_t size() const;
    const Tensor<float>& features(InputKind kind) const;
    FeatureBank subset(std::span<const std::size_t> indices) const;
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct RDLModel {
    ModelSpec spec;
    Model<float> model;
    std::vector<EpochRecord> history;
};

struct EpochEvent {
    std::size_t model_index;
    Family family;
    EpochRecord record;
};

using EpochCallback = std::function<void(const EpochEvent&)>;

struct TrainOptions {
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    std::size_t model_index = 0; // used in error messages and callbacks
    EpochCallback on_epoch;
};

/// Mini-batch training with the spec's optimizer; data order is reshuffled
/// each epoch from the spec's seed. Train-split loss and accuracy are
/// measured during the epoch (dropout active), validation ones in inference
/// mode. Throws ErrorKind::Divergence on a non-finite loss.
RDLModel train_rdl(const ModelSpec& spec, const Tensor<float>& train_x, std::span<const std::size_t> train_y,
                   const Tensor<float>& val_x, std::span<const std::size_t> val_y, const TrainOptions& options);

/// Inference-mode class probabilities, [N × classes].
Tensor<float> predict_probs(const Model<float>& model, const Tensor<float>& inputs);

struct ModelPrediction {
    std::vector<float> probs;
    std::size_t label = 0; // argmax, lowest index on ties
};

ModelPrediction predict_model(const Model<float>& model, const Tensor<float>& input);

/// Most-voted label. Ties go to the label with the largest summed softmax
/// mass over the voting models (`probs` is [models × classes], may be empty),
/// then to the lowest index.
std::size_t majority_vote(std::span<const std::size_t> labels, std::span<const float> probs, std::size_t classes);

/// Per-sample, per-model softmax vectors and argmax labels.
struct PredictionMatrix {
    std::size_t samples = 0;
    std::size_t models = 0;
    std::size_t classes = 0;
    std::vector<float> probs;        // samples × models × classes
    std::vector<std::size_t> labels; // samples × models

    std::span<const float> sample_probs(std::size_t i) const {
        return std::span<const float>(probs).subspan(i * models * classes, models * classes);
    }
    std::span<const std::size_t> sample_labels(std::size_t i) const {
        return std::span<const std::size_t>(labels).subspan(i * models, models);
    }
    std::size_t vote(std::size_t i) const { return majority_vote(sample_labels(i), sample_probs(i), classes); }
};

struct Ensemble {
    std::vector<RDLModel> models;
    std::size_t classes = 0;
    std::vector<std::string> class_names;
    InputLayout layout;
    EnsembleConfig config;
    std::optional<TextFeaturizer> text;

    std::size_t size() const { return models.size(); }
};

PredictionMatrix predict_matrix(const Ensemble& ensemble, const FeatureBank& inputs);

struct EnsemblePrediction {
    std::size_t label = 0;
    std::vector<std::size_t> model_labels;
    std::vector<std::size_t> histogram; // votes per class, sums to n
};

/// Prediction for the first sample of `input`.
EnsemblePrediction predict_ensemble(const Ensemble& ensemble, const FeatureBank& input);

struct ConfusionCounts {
    std::size_t classes = 0;
    std::size_t samples = 0;
    std::vector<std::size_t> tp, fp, fn, tn;
};

ConfusionCounts confusion_counts(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                 std::size_t classes);

struct MicroMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Micro-averaged precision, recall and F1 from class-summed counts; a zero
/// denominator yields 0.
MicroMetrics micro_metrics(const ConfusionCounts& counts);

struct MetricsReport {
    std::size_t samples = 0;
    double accuracy = 0.0;
    double error_rate = 0.0; // 1 - accuracy
    MicroMetrics micro;
    ConfusionCounts counts;
    std::vector<double> model_accuracies;
};

MetricsReport evaluate_predictions(const PredictionMatrix& predictions, std::span<const std::size_t> truth);

MetricsReport evaluate(const Ensemble& ensemble, const FeatureBank& test);

struct EnsembleTrainOptions {
    std::size_t jobs = 1; // concurrent model trainings; 1 is the deterministic serial path
    EpochCallback on_epoch;
    std::function<void(const std::string&)> on_warning;
};

struct EnsembleTrainResult {
    Ensemble ensemble;
    std::vector<std::size_t> diverged; // plan indices dropped from the vote
};

/// Trains every planned model. Divergent models are dropped with a warning;
/// throws ErrorKind::Divergence if none survive.
EnsembleTrainResult train_ensemble(const std::vector<ModelSpec>& plan, const EnsembleConfig& config,
                                   const InputLayout& layout, const FeatureBank& train, const FeatureBank& validation,
                                   const EnsembleTrainOptions& options);

} // namespace rmdl
