// rmdl: sample, train, evaluate and predict with random multimodel ensembles.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rmdl/dataio.hpp"
#include "rmdl/ensemble.hpp"
#include "rmdl/features.hpp"

using namespace rmdl;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitModel = 4;

/// Which stage an error came from decides its exit code.
enum class Phase { Flags, Data, Model, Train };

int exit_code(const Error& e, Phase phase) {
    switch (e.kind()) {
    case ErrorKind::Config: return kExitUsage;
    case ErrorKind::Version:
    case ErrorKind::Corruption:
    case ErrorKind::Divergence: return kExitModel;
    case ErrorKind::Io: return kExitData;
    default: break;
    }
    switch (phase) {
    case Phase::Flags: return kExitUsage;
    case Phase::Model: return kExitModel;
    default: return kExitData;
    }
}

struct RangeFlags {
    std::string dnn_layers = "1,5";
    std::string dnn_nodes = "64,512";
    std::string cnn_layers = "1,3";
    std::string cnn_filters = "16,128";
    std::string cnn_kernels = "3,5";
    std::string rnn_layers = "1,2";
    std::string rnn_units = "32,128";
    std::string rnn_cells = "lstm,gru";
    std::string dropout = "0.1,0.5";
    std::string optimizers = "adam,rmsprop";
    std::string learning_rates = "0.01,0.001";
};

struct Flags {
    std::string models = "1,1,1";
    std::string task = "image";
    std::string data;
    std::string out;
    std::string model_dir;
    std::string seed;
    bool json = false;
    bool serial = false;
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    double val_fraction = 0.2;
    std::size_t limit = 0;
    std::size_t max_vocab = 10000;
    std::size_t max_len = 500;
    std::string embeddings;
    std::size_t embedding_dim = 50;
    std::string image_shape = "28,28,1";
    std::string split = "all";
    std::string image;
    std::string text;
    std::string text_file;
    RangeFlags ranges;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(item);
    return out;
}

template <typename T>
T parse_number(const std::string& s, const std::string& flag) {
    T v{};
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end) fail(ErrorKind::Config, flag + ": '" + s + "' is not a valid number");
    return v;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& s, const std::string& flag) {
    std::vector<T> out;
    for (const auto& item : split_list(s)) out.push_back(parse_number<T>(item, flag));
    if (out.empty()) fail(ErrorKind::Config, flag + " needs at least one value");
    return out;
}

IntRange parse_int_range(const std::string& s, const std::string& flag) {
    const auto v = parse_numbers<std::int64_t>(s, flag);
    if (v.size() != 2) fail(ErrorKind::Config, flag + " expects MIN,MAX");
    return {v[0], v[1]};
}

ArchitectureRanges parse_ranges(const RangeFlags& f) {
    ArchitectureRanges r;
    r.dnn_layers = parse_int_range(f.dnn_layers, "--dnn-layers");
    r.dnn_nodes = parse_int_range(f.dnn_nodes, "--dnn-nodes");
    r.cnn_layers = parse_int_range(f.cnn_layers, "--cnn-layers");
    r.cnn_filters = parse_int_range(f.cnn_filters, "--cnn-filters");
    r.cnn_kernels = parse_numbers<std::size_t>(f.cnn_kernels, "--cnn-kernels");
    r.rnn_layers = parse_int_range(f.rnn_layers, "--rnn-layers");
    r.rnn_units = parse_int_range(f.rnn_units, "--rnn-units");
    r.rnn_cells.clear();
    for (const auto& c : split_list(f.rnn_cells)) {
        LayerKind k;
        try {
            k = parse_layer_kind(c);
        } catch (const Error&) {
            fail(ErrorKind::Config, "--rnn-cells: unknown cell '" + c + "'");
        }
        r.rnn_cells.push_back(k);
    }
    const auto d = parse_numbers<double>(f.dropout, "--dropout");
    if (d.size() != 2) fail(ErrorKind::Config, "--dropout expects MIN,MAX");
    r.dropout = {d[0], d[1]};
    r.optimizers.clear();
    for (const auto& o : split_list(f.optimizers)) {
        try {
            r.optimizers.push_back(parse_optimizer_kind(o));
        } catch (const Error&) {
            fail(ErrorKind::Config, "--optimizers: unknown optimizer '" + o + "'");
        }
    }
    r.learning_rates = parse_numbers<double>(f.learning_rates, "--learning-rates");
    r.validate();
    return r;
}

EnsembleConfig parse_config(const Flags& f, std::uint64_t seed) {
    const auto counts = parse_numbers<std::size_t>(f.models, "--models");
    if (counts.size() != 3) fail(ErrorKind::Config, "--models expects D,C,R (three counts)");
    EnsembleConfig c;
    c.dnn = counts[0];
    c.cnn = counts[1];
    c.rnn = counts[2];
    c.epochs = f.epochs;
    c.batch_size = f.batch_size;
    c.seed = seed;
    c.validate();
    return c;
}

std::uint64_t resolve_seed(const Flags& f) {
    if (!f.seed.empty()) return parse_number<std::uint64_t>(f.seed, "--seed");
    if (const char* env = std::getenv("RMDL_SEED"); env && *env)
        return parse_number<std::uint64_t>(env, "RMDL_SEED");
    return 42;
}

void check_task(const std::string& task) {
    if (task != "image" && task != "text") fail(ErrorKind::Config, "--task must be image or text");
}

json spec_summary(std::size_t index, const ModelSpec& s) {
    json layers = json::array();
    for (const LayerSpec& l : s.layers) {
        json j = {{"kind", to_string(l.kind)}};
        if (l.units) j["units"] = l.units;
        if (l.kernel) j["kernel"] = l.kernel;
        if (l.window) j["window"] = l.window;
        if (l.kind == LayerKind::Dropout) j["rate"] = l.rate;
        if (l.activation != Activation::None) j["activation"] = to_string(l.activation);
        if (is_recurrent(l.kind)) j["return_sequences"] = l.return_sequences;
        layers.push_back(j);
    }
    return {{"index", index},
            {"family", to_string(s.family)},
            {"input", to_string(s.input)},
            {"input_shape", s.input_shape},
            {"layers", layers},
            {"optimizer", to_string(s.optimizer.kind)},
            {"learning_rate", s.optimizer.learning_rate},
            {"dropout", s.dropout_rate},
            {"seed", s.seed}};
}

// ---- sample ----

int cmd_sample(const Flags& f) {
    std::uint64_t seed;
    ArchitectureRanges ranges;
    EnsembleConfig config;
    InputLayout layout;
    try {
        check_task(f.task);
        seed = resolve_seed(f);
        ranges = parse_ranges(f.ranges);
        config = parse_config(f, seed);
        if (f.task == "image") {
            layout.image = parse_numbers<std::size_t>(f.image_shape, "--image-shape");
            if (layout.image.size() != 3 || shape_size(layout.image) == 0)
                fail(ErrorKind::Config, "--image-shape expects H,W,C with positive entries");
        } else {
            if (f.max_vocab == 0 || f.max_len == 0 || f.embedding_dim == 0)
                fail(ErrorKind::Config, "--max-vocab, --max-len and --embedding-dim must be positive for sampling");
            layout.text = true;
            layout.tfidf_dim = f.max_vocab;
            layout.embedded = {f.max_len, f.embedding_dim};
        }
        layout.classes = 10;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    const auto plan = build_ensemble_plan(config, ranges, layout);
    if (f.json) {
        json out = {{"n", plan.size()}, {"seed", seed}, {"models", json::array()}};
        for (std::size_t j = 0; j < plan.size(); ++j) out["models"].push_back(spec_summary(j, plan[j]));
        std::cout << out.dump(2) << "\n";
    } else {
        for (std::size_t j = 0; j < plan.size(); ++j) std::cout << "model " << j << " " << describe(plan[j]) << "\n";
    }
    return kExitOk;
}

// ---- shared data handling ----

Dataset load_dataset(const std::string& task, const std::string& path, std::size_t limit) {
    if (path.empty()) fail(ErrorKind::Config, "--data is required");
    Dataset d = task == "image" ? load_image_dir(path) : load_text_csv(fs::path(path));
    d.validate();
    if (limit > 0 && limit < d.size()) {
        std::vector<std::size_t> idx(limit);
        for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
        d = d.subset(idx);
    }
    return d;
}

std::uint64_t split_seed(std::uint64_t seed) { return derive_seed(seed, {0x73706c6974ULL}); }

/// Renumbers labels of `d` to follow `names`, the ensemble's class order.
void align_classes(Dataset& d, const std::vector<std::string>& names) {
    if (names.empty() || d.class_names == names) return;
    std::map<std::string, std::size_t> id;
    for (std::size_t i = 0; i < names.size(); ++i) id[names[i]] = i;
    for (std::size_t& l : d.labels) {
        auto it = id.find(d.class_names.at(l));
        if (it == id.end()) fail(ErrorKind::Data, "label '" + d.class_names[l] + "' is unknown to the ensemble");
        l = it->second;
    }
    d.class_names = names;
    d.classes = names.size();
}

EmbeddingMatrix random_embeddings(const std::vector<Tokens>& docs, std::size_t dim, std::uint64_t seed) {
    std::set<std::string> vocab;
    for (const auto& d : docs) vocab.insert(d.begin(), d.end());
    EmbeddingMatrix m;
    m.dim = dim;
    Rng rng(derive_seed(seed, {0x656d62ULL}));
    std::vector<float> row(dim);
    for (const auto& t : vocab) {
        for (float& v : row) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        m.add(t, row);
    }
    return m;
}

EmbeddingMatrix file_embeddings(const std::string& path, std::size_t dim, const std::vector<Tokens>& docs) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open embeddings file " + path);
    EmbeddingLoad load = load_embeddings(in, dim);
    if (load.skipped > 0 || load.duplicates > 0)
        std::cerr << "warning: " << path << ": skipped " << load.skipped << " malformed lines, " << load.duplicates
                  << " duplicate tokens\n";
    std::set<std::string> vocab;
    for (const auto& d : docs) vocab.insert(d.begin(), d.end());
    EmbeddingMatrix m;
    m.dim = dim;
    for (const auto& t : vocab)
        if (auto row = load.matrix.lookup(t); !row.empty()) m.add(t, row);
    return m;
}

// ---- train ----

int cmd_train(const Flags& f) {
    std::uint64_t seed;
    ArchitectureRanges ranges;
    EnsembleConfig config;
    try {
        check_task(f.task);
        seed = resolve_seed(f);
        ranges = parse_ranges(f.ranges);
        config = parse_config(f, seed);
        if (f.out.empty()) fail(ErrorKind::Config, "--out is required");
        if (!(f.val_fraction > 0.0 && f.val_fraction < 1.0)) fail(ErrorKind::Config, "--val-fraction must lie in (0, 1)");
        if (f.task == "text" && (f.max_len == 0 || f.embedding_dim == 0))
            fail(ErrorKind::Config, "--max-len and --embedding-dim must be positive");
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    Dataset train_set, val_set;
    InputLayout layout;
    FeatureBank train_bank, val_bank;
    std::optional<TextFeaturizer> featurizer;
    try {
        const Dataset all = load_dataset(f.task, f.data, f.limit);
        std::tie(train_set, val_set) = split_dataset(all, f.val_fraction, split_seed(seed));
        if (train_set.size() == 0 || val_set.size() == 0)
            fail(ErrorKind::Data, "too few samples to form both a training and a validation split");
        layout.classes = all.classes;
        if (f.task == "image") {
            layout.image = {all.images.dim(1), all.images.dim(2), all.images.dim(3)};
            train_bank = image_features(train_set);
            val_bank = image_features(val_set);
        } else {
            std::vector<Tokens> docs;
            for (const auto& t : train_set.texts) docs.push_back(tokenize(t));
            TextFeaturizer tf;
            tf.tfidf = fit_tfidf(docs, f.max_vocab);
            tf.embeddings = f.embeddings.empty() ? random_embeddings(docs, f.embedding_dim, seed)
                                                 : file_embeddings(f.embeddings, f.embedding_dim, docs);
            tf.max_len = f.max_len;
            if (tf.tfidf.size() == 0) fail(ErrorKind::Corpus, "training texts contain no tokens");
            layout.text = true;
            layout.tfidf_dim = tf.tfidf.size();
            layout.embedded = {tf.max_len, tf.embeddings.dim};
            train_bank = text_features(tf, train_set.texts, train_set.labels);
            val_bank = text_features(tf, val_set.texts, val_set.labels);
            featurizer = std::move(tf);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e, Phase::Data);
    }

    std::unique_ptr<MetricsLog> log;
    try {
        std::error_code ec;
        fs::create_directories(f.out, ec);
        if (ec || !fs::is_directory(f.out)) fail(ErrorKind::Io, "cannot create output directory " + f.out);
        log = std::make_unique<MetricsLog>(fs::path(f.out) / "metrics.csv");
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }

    std::mutex print_mutex;
    EnsembleTrainOptions options;
    options.jobs = f.serial ? 1 : f.jobs;
    options.on_epoch = [&](const EpochEvent& ev) {
        append_metrics_row(*log, ev.record.epoch, ev.model_index, ev.family, "train", ev.record.train_loss,
                           ev.record.train_accuracy);
        append_metrics_row(*log, ev.record.epoch, ev.model_index, ev.family, "val", ev.record.val_loss,
                           ev.record.val_accuracy);
        std::lock_guard lock(print_mutex);
        std::fprintf(stderr, "model %zu %s epoch %zu train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f\n",
                     ev.model_index, std::string(to_string(ev.family)).c_str(), ev.record.epoch, ev.record.train_loss,
                     ev.record.train_accuracy, ev.record.val_loss, ev.record.val_accuracy);
    };
    options.on_warning = [&](const std::string& w) {
        std::lock_guard lock(print_mutex);
        std::cerr << "warning: " << w << "\n";
    };

    EnsembleTrainResult result;
    try {
        const auto plan = build_ensemble_plan(config, ranges, layout);
        result = train_ensemble(plan, config, layout, train_bank, val_bank, options);
        result.ensemble.class_names = train_set.class_names;
        result.ensemble.text = featurizer;
        save_ensemble(result.ensemble, f.out, SplitRecord{f.val_fraction, seed, f.limit});
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e, Phase::Train);
    }

    const MetricsReport report = evaluate(result.ensemble, val_bank);
    if (f.json) {
        json models = json::array();
        for (std::size_t j = 0; j < result.ensemble.models.size(); ++j)
            models.push_back({{"index", j},
                              {"family", to_string(result.ensemble.models[j].spec.family)},
                              {"val_accuracy", report.model_accuracies[j]}});
        std::cout << json{{"n", result.ensemble.models.size()},
                          {"diverged", result.diverged},
                          {"models", models},
                          {"val_accuracy", report.accuracy},
                          {"out", f.out}}
                         .dump(2)
                  << "\n";
    } else {
        for (std::size_t j = 0; j < result.ensemble.models.size(); ++j)
            std::printf("model %zu %s val_accuracy %.4f\n", j,
                        std::string(to_string(result.ensemble.models[j].spec.family)).c_str(),
                        report.model_accuracies[j]);
        std::printf("ensemble val_accuracy %.4f\n", report.accuracy);
    }
    return kExitOk;
}

// ---- evaluate ----

FeatureBank bank_for(const Ensemble& e, const Dataset& d) {
    if (e.layout.text) {
        if (!e.text) fail(ErrorKind::Format, "text ensemble without featurizer");
        return text_features(*e.text, d.texts, d.labels);
    }
    return image_features(d);
}

int cmd_evaluate(const Flags& f) {
    if (f.model_dir.empty()) {
        std::cerr << "error: --model is required\n";
        return kExitUsage;
    }
    if (f.split != "all" && f.split != "val") {
        std::cerr << "error: --split must be all or val\n";
        return kExitUsage;
    }
    EnsembleManifest manifest;
    Ensemble ensemble;
    try {
        manifest = read_manifest(f.model_dir);
        ensemble = load_ensemble(f.model_dir);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e, Phase::Model);
    }
    FeatureBank bank;
    try {
        const std::string task = ensemble.layout.text ? "text" : "image";
        Dataset d;
        if (f.split == "val") {
            if (!manifest.split) fail(ErrorKind::Data, "ensemble has no recorded split");
            const SplitRecord& s = *manifest.split;
            d = split_dataset(load_dataset(task, f.data, s.limit), s.val_fraction, split_seed(s.seed)).second;
        } else {
            d = load_dataset(task, f.data, f.limit);
        }
        align_classes(d, ensemble.class_names);
        if (d.classes > ensemble.classes) fail(ErrorKind::Data, "data has more classes than the ensemble");
        bank = bank_for(ensemble, d);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e, Phase::Data);
    }
    MetricsReport r;
    try {
        r = evaluate(ensemble, bank);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e, Phase::Data);
    }
    if (f.json) {
        json models = json::array();
        for (std::size_t j = 0; j < ensemble.models.size(); ++j)
            models.push_back({{"index", j},
                              {"family", to_string(ensemble.models[j].spec.family)},
                              {"accuracy", r.model_accuracies[j]}});
        std::cout << json{{"samples", r.samples},
                          {"n", ensemble.models.size()},
                          {"accuracy", r.accuracy},
                          {"error_rate", r.error_rate},
                          {"precision", r.micro.precision},
                          {"recall", r.micro.recall},
                          {"f1", r.micro.f1},
                          {"models", models}}
                         .dump(2)
                  << "\n";
    } else {
        std::printf("samples %zu\n", r.samples);
        std::printf("accuracy %.4f\n", r.accuracy);
        std::printf("error_rate %.4f\n", r.error_rate);
        std::printf("micro_precision %.4f\nmicro_recall %.4f\nmicro_f1 %.4f\n", r.micro.precision, r.micro.recall,
                    r.micro.f1);
        for (std::size_t j = 0; j < ensemble.models.size(); ++j)
            std::printf("model %zu %s accuracy %.4f\n", j,
                        std::string(to_string(ensemble.models[j].spec.family)).c_str(), r.model_accuracies[j]);
    }
    return kExitOk;
}

// ---- predict ----

int cmd_predict(const Flags& f) {
    const int inputs = !f.image.empty() + !f.text.empty() + !f.text_file.empty();
    if (f.model_dir.empty() || inputs != 1) {
        std::cerr << "error: predict needs --model and exactly one of --image, --text, --text-file\n";
        return kExitUsage;
    }
    Ensemble ensemble;
    try {
        ensemble = load_ensemble(f.model_dir);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e, Phase::Model);
    }
    EnsemblePrediction p;
    try {
        FeatureBank bank;
        bank.labels = {0};
        if (!f.image.empty()) {
            if (ensemble.layout.text) fail(ErrorKind::Data, "this ensemble classifies text, not images");
            Tensor<float> img = load_idx_image(f.image);
            if (img.shape() != ensemble.layout.image)
                fail(ErrorKind::Shape, "image is " + shape_str(img.shape()) + " but the ensemble expects " +
                                           shape_str(ensemble.layout.image));
            bank.image = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
        } else {
            if (!ensemble.layout.text) fail(ErrorKind::Data, "this ensemble classifies images, not text");
            std::string text = f.text;
            if (!f.text_file.empty()) {
                std::ifstream in(f.text_file, std::ios::binary);
                if (!in) fail(ErrorKind::Io, "cannot open " + f.text_file);
                text.assign(std::istreambuf_iterator<char>(in), {});
            }
            const std::vector<std::string> texts{text};
            bank = text_features(*ensemble.text, texts, bank.labels);
        }
        p = predict_ensemble(ensemble, bank);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e, Phase::Data);
    }
    const std::string name = p.label < ensemble.class_names.size() ? ensemble.class_names[p.label] : "";
    if (f.json) {
        json j = {{"label", p.label}, {"votes", p.histogram}, {"n", p.model_labels.size()},
                  {"model_labels", p.model_labels}};
        if (!name.empty()) j["class"] = name;
        std::cout << j.dump(2) << "\n";
    } else {
        std::printf("label %zu%s\n", p.label, name.empty() ? "" : (" (" + name + ")").c_str());
        std::printf("votes");
        for (std::size_t k = 0; k < p.histogram.size(); ++k) std::printf(" %zu:%zu", k, p.histogram[k]);
        std::printf("\nn %zu\n", p.model_labels.size());
    }
    return kExitOk;
}

void add_range_flags(CLI::App* cmd, RangeFlags& r) {
    const char* g = "Architecture ranges";
    cmd->add_option("--dnn-layers", r.dnn_layers, "DNN hidden layer count MIN,MAX")->group(g);
    cmd->add_option("--dnn-nodes", r.dnn_nodes, "DNN units per layer MIN,MAX")->group(g);
    cmd->add_option("--cnn-layers", r.cnn_layers, "CNN convolution layer count MIN,MAX")->group(g);
    cmd->add_option("--cnn-filters", r.cnn_filters, "CNN filters per layer MIN,MAX")->group(g);
    cmd->add_option("--cnn-kernels", r.cnn_kernels, "CNN kernel sizes to choose from")->group(g);
    cmd->add_option("--rnn-layers", r.rnn_layers, "RNN layer count MIN,MAX")->group(g);
    cmd->add_option("--rnn-units", r.rnn_units, "RNN hidden units MIN,MAX")->group(g);
    cmd->add_option("--rnn-cells", r.rnn_cells, "RNN cell kinds (lstm, gru, simple_rnn)")->group(g);
    cmd->add_option("--dropout", r.dropout, "dropout rate MIN,MAX")->group(g);
    cmd->add_option("--optimizers", r.optimizers, "optimizers to choose from")->group(g);
    cmd->add_option("--learning-rates", r.learning_rates, "learning rates to choose from")->group(g);
}

void add_text_flags(CLI::App* cmd, Flags& f) {
    const char* g = "Text features";
    cmd->add_option("--max-vocab", f.max_vocab, "TF-IDF vocabulary size (0 keeps every token)")->group(g);
    cmd->add_option("--max-len", f.max_len, "tokens per embedded document")->group(g);
    cmd->add_option("--embeddings", f.embeddings, "GloVe-format embedding file (random vectors when empty)")->group(g);
    cmd->add_option("--embedding-dim", f.embedding_dim, "embedding dimension D")->group(g);
}

} // namespace

int main(int argc, char** argv) {
    Flags f;
    CLI::App app{"Random multimodel deep learning ensembles"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", f.seed, "master seed (falls back to $RMDL_SEED, then 42)")->default_str("42");
        cmd->add_flag("--json", f.json, "structured JSON output");
    };

    auto* sample = app.add_subcommand("sample", "print randomly sampled architectures");
    common(sample);
    sample->add_option("--models", f.models, "model counts D,C,R");
    sample->add_option("--task", f.task, "image or text");
    sample->add_option("--image-shape", f.image_shape, "image input H,W,C");
    add_text_flags(sample, f);
    add_range_flags(sample, f.ranges);

    auto* train = app.add_subcommand("train", "train an ensemble and save it");
    common(train);
    train->add_option("--task", f.task, "image or text");
    train->add_option("--data", f.data, "IDX directory (image) or label,text CSV (text)");
    train->add_option("--out", f.out, "output directory");
    train->add_option("--models", f.models, "model counts D,C,R");
    train->add_option("--epochs", f.epochs, "training epochs per model");
    train->add_option("--batch-size", f.batch_size, "minibatch size");
    train->add_option("--val-fraction", f.val_fraction, "held-out validation fraction");
    train->add_option("--limit", f.limit, "use only the first N samples (0 uses all)");
    train->add_option("--jobs", f.jobs, "models trained concurrently");
    train->add_flag("--serial", f.serial, "train one model at a time (byte-identical reruns)");
    add_text_flags(train, f);
    add_range_flags(train, f.ranges);

    auto* evaluate_cmd = app.add_subcommand("evaluate", "report ensemble metrics on labelled data");
    common(evaluate_cmd);
    evaluate_cmd->add_option("--model", f.model_dir, "saved ensemble directory");
    evaluate_cmd->add_option("--data", f.data, "IDX directory or label,text CSV");
    evaluate_cmd->add_option("--split", f.split, "all, or val to rebuild the training validation split");
    evaluate_cmd->add_option("--limit", f.limit, "use only the first N samples (0 uses all; ignored with --split val)");

    auto* predict = app.add_subcommand("predict", "classify one input");
    common(predict);
    predict->add_option("--model", f.model_dir, "saved ensemble directory");
    predict->add_option("--image", f.image, "single-record IDX image file");
    predict->add_option("--text", f.text, "document text");
    predict->add_option("--text-file", f.text_file, "file holding one document");

    for (CLI::App* cmd : {sample, train, evaluate_cmd, predict})
        for (CLI::Option* opt : cmd->get_options()) {
            if (opt->get_name() == "--help" || !opt->get_default_str().empty()) continue;
            opt->default_str(opt->get_type_name().empty() ? "off" : "none");
        }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*sample) return cmd_sample(f);
        if (*train) return cmd_train(f);
        if (*evaluate_cmd) return cmd_evaluate(f);
        return cmd_predict(f);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e, Phase::Data);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
