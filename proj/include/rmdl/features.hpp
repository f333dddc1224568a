#pragma once

// Text and image feature spaces: TF-IDF vectors for dense networks,
// embedded token sequences for convolutional and recurrent networks, and
// [0,1]-scaled pixel tensors for images.

#include <cstdint>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rmdl/tensor.hpp"

namespace rmdl {

using Tokens = std::vector<std::string>;

/// Lowercases ASCII letters and splits on every run of characters that are
/// not ASCII letters or digits. Bytes >= 0x80 are kept inside tokens so UTF-8
/// words survive intact.
Tokens tokenize(std::string_view text);

/// Counts of word n-grams for n = 1..n_max; n-gram tokens are joined by a
/// single space.
std::map<std::string, std::size_t> ngram_counts(std::span<const std::string> tokens, std::size_t n_max);

struct Vocabulary {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::size_t> document_frequency;
    std::size_t documents = 0;

    std::size_t size() const { return tokens.size(); }
    /// Index of `token`, or size() when absent.
    std::size_t find(const std::string& token) const;
};

struct TfIdfVectorizer {
    Vocabulary vocabulary;
    std::vector<double> idf; // ln(N / df(t))

    std::size_t size() const { return vocabulary.size(); }
};

/// Keeps the `max_vocab` most frequent unigrams (ties broken
/// lexicographically; 0 keeps everything). Document frequency counts each
/// document once.
TfIdfVectorizer fit_tfidf(std::span<const Tokens> corpus, std::size_t max_vocab);

/// Raw in-document count times idf; tokens outside the vocabulary are ignored.
template <typename T = double>
Tensor<T> transform_tfidf(const TfIdfVectorizer& vectorizer, std::span<const std::string> tokens);

/// [documents × V] matrix of transform_tfidf rows.
Tensor<float> tfidf_matrix(const TfIdfVectorizer& vectorizer, std::span<const Tokens> documents);

struct EmbeddingMatrix {
    std::size_t dim = 0;
    std::vector<std::string> tokens;
    std::unordered_map<std::string, std::size_t> index;
    std::vector<float> values; // tokens.size() × dim

    std::size_t size() const { return tokens.size(); }
    /// Row for `token`, or an empty span when it is unknown.
    std::span<const float> lookup(const std::string& token) const;
    /// Appends a row; returns false (and changes nothing) for a duplicate.
    bool add(const std::string& token, std::span<const float> row);
};

struct EmbeddingLoad {
    EmbeddingMatrix matrix;
    std::size_t skipped = 0;    // malformed lines
    std::size_t duplicates = 0; // repeated tokens (first occurrence kept)
};

/// Parses "token v1 ... vD" lines. Throws ErrorKind::Format when no line
/// parses.
EmbeddingLoad load_embeddings(std::istream& in, std::size_t dim);

void write_embeddings(std::ostream& out, const EmbeddingMatrix& matrix);

struct EmbeddedDocument {
    Tensor<float> matrix; // [max_len × D]; rows at and beyond `length` are zero
    std::size_t length = 0;
};

/// Maps the first `max_len` tokens to embedding rows; unknown tokens map to
/// the zero vector and short documents are zero padded.
EmbeddedDocument embed_document(std::span<const std::string> tokens, const EmbeddingMatrix& matrix, std::size_t max_len);

/// [documents × max_len × D] batch of embedded documents.
Tensor<float> embedded_batch(std::span<const Tokens> documents, const EmbeddingMatrix& matrix, std::size_t max_len);

/// Bytes scaled by 1/255 into an [h × w × c] tensor, row-major h, w, c.
template <typename T = float>
Tensor<T> image_to_features(std::span<const std::uint8_t> pixels, std::size_t h, std::size_t w, std::size_t c);

/// Fitted text state a trained ensemble needs to featurize new documents.
struct TextFeaturizer {
    TfIdfVectorizer tfidf;
    EmbeddingMatrix embeddings;
    std::size_t max_len = 500;
};

} // namespace rmdl
