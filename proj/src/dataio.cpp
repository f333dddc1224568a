#include "rmdl/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <iterator>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace rmdl {

using nlohmann::json;

void Dataset::validate() const {
    const std::size_t n = labels.size();
    if (kind == DatasetKind::Image) {
        if (n > 0 && (images.empty() || images.dim(0) != n))
            fail(ErrorKind::Consistency, "image count does not match label count " + std::to_string(n));
    } else if (texts.size() != n) {
        fail(ErrorKind::Consistency, std::to_string(texts.size()) + " texts but " + std::to_string(n) + " labels");
    }
    for (std::size_t l : labels)
        if (l >= classes)
            fail(ErrorKind::Label, "label " + std::to_string(l) + " out of range for " + std::to_string(classes) +
                                       " classes");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.kind = kind;
    out.classes = classes;
    out.class_names = class_names;
    if (kind == DatasetKind::Image) {
        if (!indices.empty()) out.images = gather_rows(images, indices);
    } else {
        for (std::size_t i : indices) out.texts.push_back(texts.at(i));
    }
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
    return out;
}

// ---- IDX ----

namespace {

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

std::string read_file(const fs::path& path, ErrorKind missing_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(missing_kind, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

} // namespace

IdxArray read_idx(std::istream& in, std::uint32_t expected_magic, const std::string& name) {
    std::size_t offset = 0;
    auto read_u32 = [&](const char* what) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4))
            fail(ErrorKind::Format, name + ": truncated " + what + " at byte offset " + std::to_string(offset));
        offset += 4;
        return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
    };
    IdxArray a;
    a.magic = read_u32("magic");
    if (a.magic != expected_magic)
        fail(ErrorKind::Format, name + ": magic " + hex32(a.magic) + " at byte offset 0, expected " +
                                    hex32(expected_magic));
    const std::size_t rank = a.magic & 0xFFu;
    std::size_t total = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        a.dims.push_back(read_u32("dimension"));
        total *= a.dims.back();
    }
    a.data.resize(total);
    in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(total));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != total)
        fail(ErrorKind::Format, name + ": truncated data at byte offset " + std::to_string(offset + got) + " (" +
                                    std::to_string(total - got) + " bytes missing)");
    offset += total;
    if (in.peek() != std::char_traits<char>::eof())
        fail(ErrorKind::Format, name + ": unexpected trailing bytes at byte offset " + std::to_string(offset));
    return a;
}

IdxArray read_idx_file(const fs::path& path, std::uint32_t expected_magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return read_idx(in, expected_magic, path.string());
}

void write_idx(std::ostream& out, const IdxArray& array) {
    auto put = [&](std::uint32_t v) {
        const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                           static_cast<char>(v)};
        out.write(b, 4);
    };
    put(array.magic);
    for (std::uint32_t d : array.dims) put(d);
    out.write(reinterpret_cast<const char*>(array.data.data()), static_cast<std::streamsize>(array.data.size()));
}

void write_idx_file(const fs::path& path, const IdxArray& array) {
    std::ostringstream s;
    write_idx(s, array);
    write_file(path, s.str());
}

namespace {

Tensor<float> images_from_idx(const IdxArray& a, const std::string& name) {
    if (a.dims.size() != 3 || a.dims[0] == 0 || a.dims[1] == 0 || a.dims[2] == 0)
        fail(ErrorKind::Format, name + ": expected nonzero N x rows x cols dimensions");
    const std::size_t n = a.dims[0], h = a.dims[1], w = a.dims[2];
    Tensor<float> out({n, h, w, 1});
    const float scale = 1.0f / 255.0f;
    for (std::size_t i = 0; i < a.data.size(); ++i) out[i] = static_cast<float>(a.data[i]) * scale;
    return out;
}

} // namespace

Dataset load_mnist_idx(const fs::path& images, const fs::path& labels) {
    const IdxArray img = read_idx_file(images, kIdxImageMagic);
    const IdxArray lab = read_idx_file(labels, kIdxLabelMagic);
    if (lab.dims.size() != 1) fail(ErrorKind::Format, labels.string() + ": label file must be one-dimensional");
    if (img.dims.at(0) != lab.dims[0])
        fail(ErrorKind::Consistency, images.string() + " holds " + std::to_string(img.dims[0]) + " images but " +
                                         labels.string() + " holds " + std::to_string(lab.dims[0]) + " labels");
    Dataset d;
    d.kind = DatasetKind::Image;
    d.images = images_from_idx(img, images.string());
    d.classes = 10;
    for (std::size_t k = 0; k < 10; ++k) d.class_names.push_back(std::to_string(k));
    for (std::size_t i = 0; i < lab.data.size(); ++i) {
        if (lab.data[i] > 9)
            fail(ErrorKind::Data, labels.string() + ": label " + std::to_string(lab.data[i]) + " at byte offset " +
                                      std::to_string(8 + i) + " is not a digit");
        d.labels.push_back(lab.data[i]);
    }
    return d;
}

Dataset load_image_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(ErrorKind::Io, "data directory " + dir.string() + " does not exist");
    std::vector<fs::path> images, labels;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.find("images-idx3") != std::string::npos) images.push_back(entry.path());
        if (name.find("labels-idx1") != std::string::npos) labels.push_back(entry.path());
    }
    if (images.size() != 1 || labels.size() != 1)
        fail(ErrorKind::Data, dir.string() + " must contain exactly one *images-idx3* and one *labels-idx1* file");
    return load_mnist_idx(images[0], labels[0]);
}

Tensor<float> load_idx_image(const fs::path& path) {
    const IdxArray a = read_idx_file(path, kIdxImageMagic);
    if (a.dims.size() != 3 || a.dims[0] != 1)
        fail(ErrorKind::Shape, path.string() + ": expected a single-record image file");
    return images_from_idx(a, path.string()).reshaped({a.dims[1], a.dims[2], 1});
}

// ---- CSV ----

std::vector<std::vector<std::string>> parse_csv(std::string_view text, const std::string& name) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    std::size_t i = 0;
    if (text.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
    bool at_field_start = true;
    bool pending = false; // a record has started
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        at_field_start = true;
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
        pending = false;
    };
    while (i < text.size()) {
        const char ch = text[i];
        if (at_field_start && ch == '"') {
            const std::size_t open = i++;
            for (;;) {
                if (i >= text.size())
                    fail(ErrorKind::Format, name + ": unterminated quoted field opened at byte offset " +
                                                std::to_string(open));
                if (text[i] == '"') {
                    if (i + 1 < text.size() && text[i + 1] == '"') {
                        field.push_back('"');
                        i += 2;
                        continue;
                    }
                    ++i;
                    break;
                }
                field.push_back(text[i++]);
            }
            pending = true;
            at_field_start = false;
            if (i < text.size() && text[i] != ',' && text[i] != '\n' && text[i] != '\r')
                fail(ErrorKind::Format, name + ": unexpected character after closing quote at byte offset " +
                                            std::to_string(i));
            continue;
        }
        if (ch == ',') {
            end_field();
            pending = true;
            ++i;
        } else if (ch == '\n' || ch == '\r') {
            if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            ++i;
            end_record();
        } else {
            if (ch == '"')
                fail(ErrorKind::Format, name + ": stray quote in unquoted field at byte offset " + std::to_string(i));
            field.push_back(ch);
            at_field_start = false;
            pending = true;
            ++i;
        }
    }
    if (pending || !field.empty()) end_record();
    return records;
}

Dataset load_text_csv(std::istream& in, const std::string& name) {
    const std::string text(std::istreambuf_iterator<char>(in), {});
    const auto records = parse_csv(text, name);
    if (records.empty() || records[0] != std::vector<std::string>{"label", "text"})
        fail(ErrorKind::Format, name + ": missing header `label,text` at byte offset 0");
    Dataset d;
    d.kind = DatasetKind::Text;
    std::unordered_map<std::string, std::size_t> ids;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() == 1 && rec[0].empty()) continue; // blank line
        if (rec.size() != 2)
            fail(ErrorKind::Format, name + ": record " + std::to_string(r) + " has " + std::to_string(rec.size()) +
                                        " fields, expected 2");
        auto [it, inserted] = ids.emplace(rec[0], d.class_names.size());
        if (inserted) d.class_names.push_back(rec[0]);
        d.labels.push_back(it->second);
        d.texts.push_back(rec[1]);
    }
    if (d.labels.empty()) fail(ErrorKind::Data, name + ": no data rows after the header");
    d.classes = d.class_names.size();
    return d;
}

Dataset load_text_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return load_text_csv(in, path.string());
}

// ---- splitting ----

SplitIndices split_indices(std::span<const std::size_t> labels, std::size_t classes, double fraction,
                           std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) fail(ErrorKind::Config, "split fraction must lie in (0, 1)");
    std::vector<std::vector<std::size_t>> members(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) fail(ErrorKind::Label, "label out of range in split");
        members[labels[i]].push_back(i);
    }
    const std::size_t n = labels.size();
    const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));

    std::vector<std::size_t> take(classes), cap(classes);
    std::vector<double> remainder(classes);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        const std::size_t m = members[k].size();
        cap[k] = m >= 2 ? m - 1 : 0;
        const double share = static_cast<double>(m) * fraction;
        take[k] = std::min(cap[k], static_cast<std::size_t>(std::floor(share)));
        remainder[k] = share - std::floor(share);
        assigned += take[k];
    }
    std::vector<std::size_t> order(classes);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k : order) {
        if (assigned >= target) break;
        if (take[k] < cap[k] && remainder[k] > 0.0) {
            ++take[k];
            ++assigned;
        }
    }

    SplitIndices out;
    for (std::size_t k = 0; k < classes; ++k) {
        Rng rng(derive_seed(seed, {k}));
        std::vector<std::size_t> idx = members[k];
        rng.shuffle(idx);
        out.test.insert(out.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[k]));
        out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(take[k]), idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double fraction, std::uint64_t seed) {
    const SplitIndices s = split_indices(dataset.labels, dataset.classes, fraction, seed);
    return {dataset.subset(s.train), dataset.subset(s.test)};
}

FeatureBank text_features(const TextFeaturizer& featurizer, std::span<const std::string> texts,
                          std::span<const std::size_t> labels) {
    std::vector<Tokens> docs;
    docs.reserve(texts.size());
    for (const auto& t : texts) docs.push_back(tokenize(t));
    FeatureBank bank;
    bank.tfidf = tfidf_matrix(featurizer.tfidf, docs);
    bank.embedded = embedded_batch(docs, featurizer.embeddings, featurizer.max_len);
    bank.labels.assign(labels.begin(), labels.end());
    return bank;
}

FeatureBank image_features(const Dataset& dataset) {
    FeatureBank bank;
    bank.image = dataset.images;
    bank.labels = dataset.labels;
    return bank;
}

// ---- persistence ----

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace

json spec_to_json(const ModelSpec& spec) {
    json layers = json::array();
    for (const LayerSpec& l : spec.layers)
        layers.push_back({{"kind", to_string(l.kind)},
                          {"units", l.units},
                          {"kernel", l.kernel},
                          {"window", l.window},
                          {"stride", l.stride},
                          {"rate", l.rate},
                          {"activation", to_string(l.activation)},
                          {"return_sequences", l.return_sequences}});
    const OptimizerConfig& o = spec.optimizer;
    return {{"family", to_string(spec.family)},
            {"input", to_string(spec.input)},
            {"input_shape", spec.input_shape},
            {"classes", spec.classes},
            {"layers", layers},
            {"optimizer",
             {{"kind", to_string(o.kind)},
              {"learning_rate", o.learning_rate},
              {"momentum", o.momentum},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"rho", o.rho},
              {"epsilon", o.epsilon}}},
            {"dropout_rate", spec.dropout_rate},
            {"seed", spec.seed}};
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.family = parse_family(j.at("family").get<std::string>());
    s.input = parse_input_kind(j.at("input").get<std::string>());
    s.input_shape = j.at("input_shape").get<Shape>();
    s.classes = j.at("classes").get<std::size_t>();
    for (const json& l : j.at("layers")) {
        LayerSpec ls;
        ls.kind = parse_layer_kind(l.at("kind").get<std::string>());
        ls.units = l.at("units").get<std::size_t>();
        ls.kernel = l.at("kernel").get<std::size_t>();
        ls.window = l.at("window").get<std::size_t>();
        ls.stride = l.at("stride").get<std::size_t>();
        ls.rate = l.at("rate").get<double>();
        ls.activation = parse_activation(l.at("activation").get<std::string>());
        ls.return_sequences = l.at("return_sequences").get<bool>();
        s.layers.push_back(ls);
    }
    const json& o = j.at("optimizer");
    s.optimizer.kind = parse_optimizer_kind(o.at("kind").get<std::string>());
    s.optimizer.learning_rate = o.at("learning_rate").get<double>();
    s.optimizer.momentum = o.at("momentum").get<double>();
    s.optimizer.beta1 = o.at("beta1").get<double>();
    s.optimizer.beta2 = o.at("beta2").get<double>();
    s.optimizer.rho = o.at("rho").get<double>();
    s.optimizer.epsilon = o.at("epsilon").get<double>();
    s.dropout_rate = j.at("dropout_rate").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

std::string spec_digest(const ModelSpec& spec) { return hex64(fnv1a64(spec_to_json(spec).dump())); }

namespace {

constexpr char kWeightMagic[4] = {'R', 'M', 'D', 'L'};

template <typename U>
void put_le(std::ostream& out, U v) {
    char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::string& name, const char* what) {
    unsigned char b[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(U)))
        fail(ErrorKind::Corruption, name + ": truncated " + what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U{b[i]} << (8 * i));
    return v;
}

std::string version_message(const std::string& name, std::uint32_t found) {
    return name + ": format version " + std::to_string(found) + " is not supported (this build reads version " +
           std::to_string(kFormatVersion) + ")";
}

} // namespace

void write_tensors(std::ostream& out, std::span<const NamedTensor> tensors) {
    out.write(kWeightMagic, 4);
    put_le<std::uint32_t>(out, kFormatVersion);
    for (const NamedTensor& t : tensors) {
        if (t.name.size() > 0xFFFF || t.tensor.rank() > 0xFF) fail(ErrorKind::Format, "tensor name or rank too large");
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.tensor.rank()));
        for (std::size_t d : t.tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (float v : t.tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
}

std::vector<NamedTensor> read_tensors(std::istream& in, const std::string& name) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kWeightMagic, 4) != 0)
        fail(ErrorKind::Format, name + ": not a weight file (bad magic)");
    const auto version = get_le<std::uint32_t>(in, name, "version");
    if (version != kFormatVersion) fail(ErrorKind::Version, version_message(name, version));
    std::vector<NamedTensor> out;
    while (in.peek() != std::char_traits<char>::eof()) {
        NamedTensor t;
        const auto len = get_le<std::uint16_t>(in, name, "tensor name length");
        t.name.resize(len);
        if (!in.read(t.name.data(), len)) fail(ErrorKind::Corruption, name + ": truncated tensor name");
        const auto rank = get_le<std::uint8_t>(in, name, "tensor rank");
        Shape shape;
        for (std::size_t i = 0; i < rank; ++i) {
            shape.push_back(get_le<std::uint32_t>(in, name, "tensor dimension"));
            if (shape.back() == 0) fail(ErrorKind::Corruption, name + ": zero dimension in tensor " + t.name);
        }
        if (rank == 0) fail(ErrorKind::Corruption, name + ": tensor " + t.name + " has rank 0");
        t.tensor = Tensor<float>(shape);
        for (float& v : t.tensor.data()) v = std::bit_cast<float>(get_le<std::uint32_t>(in, name, "tensor values"));
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kFeaturesFile = "features.json";
constexpr const char* kEmbeddingsFile = "embeddings.bin";

std::string model_file(std::size_t j) { return "model_" + std::to_string(j) + ".bin"; }

json layout_to_json(const InputLayout& l) {
    return {{"text", l.text}, {"image", l.image}, {"tfidf_dim", l.tfidf_dim}, {"embedded", l.embedded}};
}

InputLayout layout_from_json(const json& j, std::size_t classes) {
    InputLayout l;
    l.text = j.at("text").get<bool>();
    l.image = j.at("image").get<Shape>();
    l.tfidf_dim = j.at("tfidf_dim").get<std::size_t>();
    l.embedded = j.at("embedded").get<Shape>();
    l.classes = classes;
    return l;
}

std::pair<std::string, std::string> featurizer_files(const TextFeaturizer& f) {
    json j;
    j["max_len"] = f.max_len;
    j["documents"] = f.tfidf.vocabulary.documents;
    j["tokens"] = f.tfidf.vocabulary.tokens;
    j["document_frequency"] = f.tfidf.vocabulary.document_frequency;
    j["idf"] = f.tfidf.idf;
    j["embedding_dim"] = f.embeddings.dim;
    j["embedding_tokens"] = f.embeddings.tokens;
    std::ostringstream emb(std::ios::binary);
    std::vector<NamedTensor> t;
    if (f.embeddings.size() > 0 && f.embeddings.dim > 0)
        t.push_back({"embeddings", Tensor<float>({f.embeddings.size(), f.embeddings.dim}, f.embeddings.values)});
    write_tensors(emb, t);
    return {j.dump(1), emb.str()};
}

TextFeaturizer featurizer_from_files(const std::string& features, const std::string& embeddings) {
    TextFeaturizer f;
    json j;
    try {
        j = json::parse(features);
        f.max_len = j.at("max_len").get<std::size_t>();
        Vocabulary& v = f.tfidf.vocabulary;
        v.documents = j.at("documents").get<std::size_t>();
        v.tokens = j.at("tokens").get<std::vector<std::string>>();
        v.document_frequency = j.at("document_frequency").get<std::vector<std::size_t>>();
        f.tfidf.idf = j.at("idf").get<std::vector<double>>();
        f.embeddings.dim = j.at("embedding_dim").get<std::size_t>();
        f.embeddings.tokens = j.at("embedding_tokens").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Corruption, std::string(kFeaturesFile) + ": " + e.what());
    }
    Vocabulary& v = f.tfidf.vocabulary;
    if (v.document_frequency.size() != v.size() || f.tfidf.idf.size() != v.size())
        fail(ErrorKind::Corruption, std::string(kFeaturesFile) + ": vocabulary arrays differ in length");
    for (std::size_t i = 0; i < v.size(); ++i) v.index.emplace(v.tokens[i], i);
    std::istringstream in(embeddings, std::ios::binary);
    const auto tensors = read_tensors(in, kEmbeddingsFile);
    const std::size_t rows = f.embeddings.tokens.size();
    if (rows == 0 ? !tensors.empty()
                  : tensors.size() != 1 || tensors[0].tensor.shape() != Shape{rows, f.embeddings.dim})
        fail(ErrorKind::Corruption, std::string(kEmbeddingsFile) + ": embedding table does not match token list");
    if (rows > 0) f.embeddings.values = tensors[0].tensor.storage();
    for (std::size_t i = 0; i < rows; ++i) f.embeddings.index.emplace(f.embeddings.tokens[i], i);
    return f;
}

} // namespace

void save_ensemble(const Ensemble& ensemble, const fs::path& dir, std::optional<SplitRecord> split) {
    if (ensemble.models.empty()) fail(ErrorKind::Config, "cannot save an empty ensemble");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) fail(ErrorKind::Io, "cannot create output directory " + dir.string());

    json manifest;
    manifest["format_version"] = kFormatVersion;
    std::size_t counts[3] = {0, 0, 0};
    json models = json::array();
    for (std::size_t j = 0; j < ensemble.models.size(); ++j) {
        const RDLModel& m = ensemble.models[j];
        ++counts[static_cast<int>(m.spec.family)];
        std::vector<NamedTensor> tensors;
        const auto names = m.model.parameter_names();
        const auto params = m.model.parameters();
        for (std::size_t p = 0; p < params.size(); ++p) tensors.push_back({names[p], *params[p]});
        std::ostringstream bytes(std::ios::binary);
        write_tensors(bytes, tensors);
        const std::string blob = bytes.str();
        write_file(dir / model_file(j), blob);
        models.push_back({{"index", j},
                          {"family", to_string(m.spec.family)},
                          {"file", model_file(j)},
                          {"spec", spec_to_json(m.spec)},
                          {"spec_digest", spec_digest(m.spec)},
                          {"weights_digest", hex64(fnv1a64(blob))}});
    }
    manifest["n"] = ensemble.models.size();
    manifest["d"] = counts[0];
    manifest["c"] = counts[1];
    manifest["r"] = counts[2];
    manifest["classes"] = ensemble.classes;
    manifest["class_names"] = ensemble.class_names;
    manifest["seed"] = ensemble.config.seed;
    manifest["epochs"] = ensemble.config.epochs;
    manifest["batch_size"] = ensemble.config.batch_size;
    manifest["layout"] = layout_to_json(ensemble.layout);
    if (split) manifest["split"] = {{"val_fraction", split->val_fraction}, {"seed", split->seed}, {"limit", split->limit}};
    if (ensemble.layout.text) {
        if (!ensemble.text) fail(ErrorKind::Config, "text ensemble is missing its featurizer");
        const auto [features, embeddings] = featurizer_files(*ensemble.text);
        write_file(dir / kFeaturesFile, features);
        write_file(dir / kEmbeddingsFile, embeddings);
        manifest["features_digest"] = hex64(fnv1a64(features + embeddings));
    }
    manifest["models"] = models;
    write_file(dir / kManifestFile, manifest.dump(2) + "\n");
}

EnsembleManifest read_manifest(const fs::path& dir) {
    const fs::path path = dir / kManifestFile;
    if (!fs::exists(path)) fail(ErrorKind::Format, "missing " + path.string());
    const std::string text = read_file(path, ErrorKind::Format);
    const std::string name = path.string();
    EnsembleManifest m;
    try {
        const json j = json::parse(text);
        const json& version = j.at("format_version");
        if (!version.is_number_unsigned()) fail(ErrorKind::Corruption, name + ": format_version is not an integer");
        m.version = version.get<std::uint32_t>();
        if (m.version != kFormatVersion) fail(ErrorKind::Version, version_message(name, m.version));
        m.n = j.at("n").get<std::size_t>();
        m.d = j.at("d").get<std::size_t>();
        m.c = j.at("c").get<std::size_t>();
        m.r = j.at("r").get<std::size_t>();
        m.classes = j.at("classes").get<std::size_t>();
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.epochs = j.at("epochs").get<std::size_t>();
        m.batch_size = j.at("batch_size").get<std::size_t>();
        m.layout = layout_from_json(j.at("layout"), m.classes);
        if (j.contains("split"))
            m.split = SplitRecord{j["split"].at("val_fraction").get<double>(), j["split"].at("seed").get<std::uint64_t>(),
                                  j["split"].at("limit").get<std::size_t>()};
        if (j.contains("features_digest")) m.features_digest = j["features_digest"].get<std::string>();
        for (const json& e : j.at("models")) {
            ManifestModel mm;
            mm.family = parse_family(e.at("family").get<std::string>());
            mm.file = e.at("file").get<std::string>();
            mm.spec = spec_from_json(e.at("spec"));
            mm.spec_digest = e.at("spec_digest").get<std::string>();
            mm.weights_digest = e.at("weights_digest").get<std::string>();
            m.models.push_back(std::move(mm));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Corruption, name + ": " + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Version || e.kind() == ErrorKind::Corruption) throw;
        fail(ErrorKind::Corruption, name + ": " + e.what());
    }

    auto corrupt = [&](const std::string& what) { fail(ErrorKind::Corruption, name + ": " + what); };
    if (m.n == 0 || m.n != m.models.size())
        corrupt("n = " + std::to_string(m.n) + " but " + std::to_string(m.models.size()) + " models are listed");
    if (m.d + m.c + m.r != m.n) corrupt("d + c + r does not equal n");
    if (m.classes == 0) corrupt("no classes");
    if (!m.class_names.empty() && m.class_names.size() != m.classes) corrupt("class name count differs from classes");
    if (m.layout.text && m.features_digest.empty()) corrupt("text ensemble without features_digest");
    std::size_t counts[3] = {0, 0, 0};
    for (std::size_t j = 0; j < m.models.size(); ++j) {
        const ManifestModel& mm = m.models[j];
        ++counts[static_cast<int>(mm.family)];
        if (mm.file != model_file(j)) corrupt("model " + std::to_string(j) + " file name is " + mm.file);
        if (mm.spec.family != mm.family) corrupt("model " + std::to_string(j) + " family disagrees with its spec");
        if (mm.spec_digest != spec_digest(mm.spec)) corrupt("spec digest mismatch for model " + std::to_string(j));
        if (mm.spec.classes != m.classes) corrupt("model " + std::to_string(j) + " class count differs");
        if (mm.spec.input != m.layout.input_for(mm.family) || mm.spec.input_shape != m.layout.shape_for(mm.family))
            corrupt("model " + std::to_string(j) + " input does not match the layout");
        try {
            mm.spec.validate();
        } catch (const Error& e) {
            corrupt("model " + std::to_string(j) + ": " + e.what());
        }
    }
    if (counts[0] != m.d || counts[1] != m.c || counts[2] != m.r) corrupt("family counts disagree with d, c, r");
    return m;
}

Ensemble load_ensemble(const fs::path& dir) {
    const EnsembleManifest m = read_manifest(dir);
    Ensemble e;
    e.classes = m.classes;
    e.class_names = m.class_names;
    e.layout = m.layout;
    e.config.dnn = m.d;
    e.config.cnn = m.c;
    e.config.rnn = m.r;
    e.config.seed = m.seed;
    e.config.epochs = m.epochs;
    e.config.batch_size = m.batch_size;

    for (std::size_t j = 0; j < m.models.size(); ++j) {
        const ManifestModel& mm = m.models[j];
        const fs::path path = dir / mm.file;
        if (!fs::exists(path)) fail(ErrorKind::Format, "missing weight file " + path.string());
        const std::string blob = read_file(path, ErrorKind::Format);
        if (hex64(fnv1a64(blob)) != mm.weights_digest)
            fail(ErrorKind::Corruption, path.string() + ": weights digest mismatch");
        std::istringstream in(blob, std::ios::binary);
        const auto tensors = read_tensors(in, path.string());
        RDLModel rdl{mm.spec, build_model<float>(mm.spec), {}};
        const auto names = rdl.model.parameter_names();
        const auto params = rdl.model.parameters();
        if (tensors.size() != params.size())
            fail(ErrorKind::Corruption, path.string() + ": expected " + std::to_string(params.size()) + " tensors, found " +
                                            std::to_string(tensors.size()));
        for (std::size_t p = 0; p < params.size(); ++p) {
            if (tensors[p].name != names[p] || tensors[p].tensor.shape() != params[p]->shape())
                fail(ErrorKind::Corruption, path.string() + ": tensor " + tensors[p].name + " " +
                                                shape_str(tensors[p].tensor.shape()) + " does not match " + names[p] +
                                                " " + shape_str(params[p]->shape()));
            *params[p] = tensors[p].tensor;
        }
        e.models.push_back(std::move(rdl));
    }
    if (m.layout.text) {
        const std::string features = read_file(dir / kFeaturesFile, ErrorKind::Format);
        const std::string embeddings = read_file(dir / kEmbeddingsFile, ErrorKind::Format);
        if (hex64(fnv1a64(features + embeddings)) != m.features_digest)
            fail(ErrorKind::Corruption, (dir / kFeaturesFile).string() + ": features digest mismatch");
        e.text = featurizer_from_files(features, embeddings);
        if (e.text->tfidf.size() != m.layout.tfidf_dim ||
            (m.layout.embedded.size() == 2 &&
             (e.text->max_len != m.layout.embedded[0] || e.text->embeddings.dim != m.layout.embedded[1])))
            fail(ErrorKind::Corruption, (dir / kFeaturesFile).string() + ": featurizer does not match the layout");
    }
    return e;
}

// ---- metrics ----

MetricsLog::MetricsLog(const fs::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) fail(ErrorKind::Io, "cannot open metrics log " + path.string());
}

void MetricsLog::append(const MetricsRow& row) {
    char line[256];
    std::snprintf(line, sizeof line, "%zu,%zu,%s,%s,%.6f,%.6f\n", row.epoch, row.model_id,
                  std::string(to_string(row.family)).c_str(), row.split.c_str(), row.loss, row.accuracy);
    std::lock_guard lock(mutex_);
    if (rows_ == 0) out_ << "epoch,model_id,family,split,loss,accuracy\n";
    out_ << line;
    out_.flush();
    if (!out_) fail(ErrorKind::Io, "write to metrics log " + path_.string() + " failed");
    ++rows_;
}

std::size_t MetricsLog::rows() const {
    std::lock_guard lock(mutex_);
    return rows_;
}

void append_metrics_row(MetricsLog& log, std::size_t epoch, std::size_t model_id, Family family,
                        const std::string& split, double loss, double accuracy) {
    log.append({epoch, model_id, family, split, loss, accuracy});
}

} // namespace rmdl
