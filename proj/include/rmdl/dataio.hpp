#pragma once

// Dataset loaders (IDX images, label/text CSV), stratified splitting,
// ensemble persistence and the per-epoch metrics log.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rmdl/ensemble.hpp"

namespace rmdl {

namespace fs = std::filesystem;

enum class DatasetKind { Image, Text };

struct Dataset {
    DatasetKind kind = DatasetKind::Image;
    Tensor<float> images; // [N × h × w × c] for image data
    std::vector<std::string> texts;
    std::vector<std::size_t> labels;
    std::size_t classes = 0;
    std::vector<std::string> class_names;

    std::size_t size() const { return labels.size(); }
    /// Throws ErrorKind::Consistency or ErrorKind::Label.
    void validate() const;
    Dataset subset(std::span<const std::size_t> indices) const;
};

/// Unsigned-byte IDX array. `magic` is kept verbatim for reserialization.
struct IdxArray {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803; // 2051
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801; // 2049

/// Parses an IDX stream whose magic must equal `expected_magic`. `name`
/// appears in error messages together with the byte offset.
IdxArray read_idx(std::istream& in, std::uint32_t expected_magic, const std::string& name);
IdxArray read_idx_file(const fs::path& path, std::uint32_t expected_magic);
void write_idx(std::ostream& out, const IdxArray& array);
void write_idx_file(const fs::path& path, const IdxArray& array);

Dataset load_mnist_idx(const fs::path& images, const fs::path& labels);

/// Directory holding exactly one "*images-idx3*" and one "*labels-idx1*" file.
Dataset load_image_dir(const fs::path& dir);

/// One image from an IDX image file holding a single record, as [h × w × 1].
Tensor<float> load_idx_image(const fs::path& path);

/// CSV with header `label,text`; labels become dense ids in first-appearance
/// order.
Dataset load_text_csv(std::istream& in, const std::string& name);
Dataset load_text_csv(const fs::path& path);

/// Parses one CSV document into records (RFC 4180 quoting).
std::vector<std::vector<std::string>> parse_csv(std::string_view text, const std::string& name);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Stratified split. The test set has round(N·fraction) samples, each class
/// contributing floor or ceil of its share; a class with two or more samples
/// always keeps one in train. Both index lists are ascending.
SplitIndices split_indices(std::span<const std::size_t> labels, std::size_t classes, double fraction,
                           std::uint64_t seed);
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Text featurization for an ensemble: TF-IDF for DNNs, embedded sequences
/// for CNNs and RNNs.
FeatureBank text_features(const TextFeaturizer& featurizer, std::span<const std::string> texts,
                          std::span<const std::size_t> labels);
FeatureBank image_features(const Dataset& dataset);

// ---- persistence ----

inline constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);
std::string spec_digest(const ModelSpec& spec);

struct NamedTensor {
    std::string name;
    Tensor<float> tensor;
};

void write_tensors(std::ostream& out, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensors(std::istream& in, const std::string& name);

struct ManifestModel {
    Family family = Family::DNN;
    std::string file;
    ModelSpec spec;
    std::string spec_digest;
    std::string weights_digest;
};

/// Data split the ensemble was trained with, so evaluation can reuse it.
struct SplitRecord {
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    std::size_t limit = 0; // leading samples kept before splitting; 0 keeps all
};

struct EnsembleManifest {
    std::uint32_t version = kFormatVersion;
    std::size_t n = 0, d = 0, c = 0, r = 0;
    std::size_t classes = 0;
    std::vector<std::string> class_names;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    InputLayout layout;
    std::optional<SplitRecord> split;
    std::vector<ManifestModel> models;
    std::string features_digest; // text ensembles only
};

/// Writes manifest.json, model_<j>.bin and, for text ensembles,
/// features.json plus embeddings.bin.
void save_ensemble(const Ensemble& ensemble, const fs::path& dir, std::optional<SplitRecord> split = std::nullopt);

/// Parses and checks manifest.json without touching weight files.
EnsembleManifest read_manifest(const fs::path& dir);

Ensemble load_ensemble(const fs::path& dir);

// ---- metrics log ----

struct MetricsRow {
    std::size_t epoch = 0;
    std::size_t model_id = 0;
    Family family = Family::DNN;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
};

/// CSV `epoch,model_id,family,split,loss,accuracy`. Truncates on open; the
/// header is written with the first row. Appends from several threads are
/// serialized.
class MetricsLog {
public:
    explicit MetricsLog(const fs::path& path);

    void append(const MetricsRow& row);
    std::size_t rows() const;

private:
    mutable std::mutex mutex_;
    fs::path path_;
    std::ofstream out_;
    std::size_t rows_ = 0;
};

void append_metrics_row(MetricsLog& log, std::size_t epoch, std::size_t model_id, Family family,
                        const std::string& split, double loss, double accuracy);

} // namespace rmdl
