#include "rmdl/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <unordered_set>

#include "rmdl/error.hpp"

namespace rmdl {

namespace {

bool token_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

} // namespace

Tokens tokenize(std::string_view text) {
    Tokens out;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (token_char(c)) {
            current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        } else if (!current.empty()) {
            out.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

std::map<std::string, std::size_t> ngram_counts(std::span<const std::string> tokens, std::size_t n_max) {
    if (n_max < 1) fail(ErrorKind::Config, "n-gram order must be at least 1");
    std::map<std::string, std::size_t> counts;
    for (std::size_t n = 1; n <= n_max; ++n) {
        for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
            std::string gram = tokens[i];
            for (std::size_t k = 1; k < n; ++k) gram += " " + tokens[i + k];
            ++counts[gram];
        }
    }
    return counts;
}

std::size_t Vocabulary::find(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? tokens.size() : it->second;
}

TfIdfVectorizer fit_tfidf(std::span<const Tokens> corpus, std::size_t max_vocab) {
    if (corpus.empty()) fail(ErrorKind::Corpus, "cannot fit TF-IDF on an empty corpus");
    std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> stats; // token -> (count, df)
    for (const Tokens& doc : corpus) {
        std::unordered_set<std::string_view> seen;
        for (const std::string& t : doc) {
            auto& s = stats[t];
            ++s.first;
            if (seen.insert(t).second) ++s.second;
        }
    }
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(stats.begin(), stats.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second.first != b.second.first) return a.second.first > b.second.first;
        return a.first < b.first;
    });
    if (max_vocab > 0 && ranked.size() > max_vocab) ranked.resize(max_vocab);

    TfIdfVectorizer v;
    v.vocabulary.documents = corpus.size();
    const double n = static_cast<double>(corpus.size());
    for (auto& [token, s] : ranked) {
        v.vocabulary.index.emplace(token, v.vocabulary.tokens.size());
        v.vocabulary.tokens.push_back(token);
        v.vocabulary.document_frequency.push_back(s.second);
        v.idf.push_back(std::log(n / static_cast<double>(s.second)));
    }
    return v;
}

template <typename T>
Tensor<T> transform_tfidf(const TfIdfVectorizer& vectorizer, std::span<const std::string> tokens) {
    if (vectorizer.size() == 0) fail(ErrorKind::Corpus, "TF-IDF vocabulary is empty");
    std::vector<double> counts(vectorizer.size(), 0.0);
    for (const std::string& t : tokens) {
        const std::size_t i = vectorizer.vocabulary.find(t);
        if (i < counts.size()) counts[i] += 1.0;
    }
    Tensor<T> out({vectorizer.size()});
    for (std::size_t i = 0; i < counts.size(); ++i) out[i] = static_cast<T>(counts[i] * vectorizer.idf[i]);
    return out;
}

template Tensor<float> transform_tfidf<float>(const TfIdfVectorizer&, std::span<const std::string>);
template Tensor<double> transform_tfidf<double>(const TfIdfVectorizer&, std::span<const std::string>);

Tensor<float> tfidf_matrix(const TfIdfVectorizer& vectorizer, std::span<const Tokens> documents) {
    if (documents.empty()) fail(ErrorKind::Data, "no documents to vectorize");
    Tensor<float> out({documents.size(), vectorizer.size()});
    for (std::size_t d = 0; d < documents.size(); ++d) {
        const Tensor<float> row = transform_tfidf<float>(vectorizer, documents[d]);
        std::copy(row.data().begin(), row.data().end(), out.row(d).begin());
    }
    return out;
}

std::span<const float> EmbeddingMatrix::lookup(const std::string& token) const {
    auto it = index.find(token);
    if (it == index.end()) return {};
    return std::span<const float>(values).subspan(it->second * dim, dim);
}

bool EmbeddingMatrix::add(const std::string& token, std::span<const float> row) {
    if (row.size() != dim) fail(ErrorKind::Shape, "embedding row has " + std::to_string(row.size()) + " values, expected " + std::to_string(dim));
    if (!index.emplace(token, tokens.size()).second) return false;
    tokens.push_back(token);
    values.insert(values.end(), row.begin(), row.end());
    return true;
}

EmbeddingLoad load_embeddings(std::istream& in, std::size_t dim) {
    if (dim == 0) fail(ErrorKind::Config, "embedding dimension must be positive");
    EmbeddingLoad load;
    load.matrix.dim = dim;
    std::string line;
    std::vector<float> row(dim);
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        const char* p = line.data();
        const char* end = p + line.size();
        const char* token_end = std::find(p, end, ' ');
        std::string token(p, token_end);
        p = token_end;
        std::size_t parsed = 0;
        bool ok = !token.empty();
        while (ok && p < end) {
            if (*p != ' ') {
                ok = false;
                break;
            }
            ++p;
            if (parsed == dim) {
                ok = false;
                break;
            }
            auto [next, ec] = std::from_chars(p, end, row[parsed]);
            if (ec != std::errc() || (next < end && *next != ' ') || !std::isfinite(row[parsed])) {
                ok = false;
                break;
            }
            ++parsed;
            p = next;
        }
        if (!ok || parsed != dim) {
            ++load.skipped;
            continue;
        }
        if (!load.matrix.add(token, row)) ++load.duplicates;
    }
    if (load.matrix.size() == 0) fail(ErrorKind::Format, "embedding stream contains no parseable lines");
    return load;
}

void write_embeddings(std::ostream& out, const EmbeddingMatrix& matrix) {
    char buf[32];
    for (std::size_t r = 0; r < matrix.size(); ++r) {
        out << matrix.tokens[r];
        for (std::size_t j = 0; j < matrix.dim; ++j) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, matrix.values[r * matrix.dim + j]);
            out << ' ' << std::string_view(buf, static_cast<std::size_t>(end - buf));
        }
        out << '\n';
    }
}

EmbeddedDocument embed_document(std::span<const std::string> tokens, const EmbeddingMatrix& matrix, std::size_t max_len) {
    if (max_len < 1) fail(ErrorKind::Config, "max_len must be at least 1");
    EmbeddedDocument doc{Tensor<float>({max_len, matrix.dim}), std::min(tokens.size(), max_len)};
    for (std::size_t i = 0; i < doc.length; ++i) {
        auto row = matrix.lookup(tokens[i]);
        if (!row.empty()) std::copy(row.begin(), row.end(), doc.matrix.row(i).begin());
    }
    return doc;
}

Tensor<float> embedded_batch(std::span<const Tokens> documents, const EmbeddingMatrix& matrix, std::size_t max_len) {
    if (documents.empty()) fail(ErrorKind::Data, "no documents to embed");
    Tensor<float> out({documents.size(), max_len, matrix.dim});
    for (std::size_t d = 0; d < documents.size(); ++d) {
        const EmbeddedDocument doc = embed_document(documents[d], matrix, max_len);
        std::copy(doc.matrix.data().begin(), doc.matrix.data().end(), out.row(d).begin());
    }
    return out;
}

template <typename T>
Tensor<T> image_to_features(std::span<const std::uint8_t> pixels, std::size_t h, std::size_t w, std::size_t c) {
    if (pixels.size() != h * w * c)
        fail(ErrorKind::Shape, "image has " + std::to_string(pixels.size()) + " bytes, expected " +
                                   std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c));
    Tensor<T> out({h, w, c});
    for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = static_cast<T>(pixels[i]) / static_cast<T>(255);
    return out;
}

template Tensor<float> image_to_features<float>(std::span<const std::uint8_t>, std::size_t, std::size_t, std::size_t);
template Tensor<double> image_to_features<double>(std::span<const std::uint8_t>, std::size_t, std::size_t, std::size_t);

} // namespace rmdl
