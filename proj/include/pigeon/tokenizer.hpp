#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pigeon/params.hpp"
#include "pigeon/rng.hpp"
#include "pigeon/tape.hpp"

namespace pigeon::tokenizer {

using Matrix = Eigen::MatrixXd;

// Fixed embedding table the visual tokens index into. Frozen after creation.
struct Codebook {
    Matrix entries;  // K x d

    int size() const { return static_cast<int>(entries.rows()); }
    int dim() const { return static_cast<int>(entries.cols()); }
};

Codebook random_codebook(int k, int dim, std::uint64_t seed);
void validate(const Codebook& cb);

struct TokenSequence {
    std::vector<int> ids;
    Matrix embeddings;  // L x d, row j = codebook.entries[ids[j]]

    int length() const { return static_cast<int>(ids.size()); }
};

// Nearest-neighbour quantization of feature patches against the codebook.
// Ties resolve to the lowest entry index.
TokenSequence tokenize(const Matrix& patches, const Codebook& cb);

Matrix embed(const std::vector<int>& ids, const Codebook& cb);
TokenSequence sequence_from_ids(const std::vector<int>& ids, const Codebook& cb);

struct VisualFeatures {
    Matrix features;  // M x d'
};

// Per-token residual MLP standing in for the tokenizer decoder:
//   out = x + gelu(x*w1 + b1)*w2 + b2
// With w2 = b2 = 0 the map is exactly the identity.
struct DecoderParams {
    Matrix w1;  // d x hidden
    Matrix b1;  // 1 x hidden
    Matrix w2;  // hidden x d
    Matrix b2;  // 1 x d

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w1", w1);
        f(prefix + ".b1", b1);
        f(prefix + ".w2", w2);
        f(prefix + ".b2", b2);
    }
};

DecoderParams identity_decoder(int dim, int hidden);
DecoderParams random_decoder(int dim, int hidden, Rng& rng);

VisualFeatures decode_tokens(const Matrix& embeddings, const DecoderParams& p);
nn::Var decode_tokens_graph(nn::Var embeddings, const DecoderParams& p, nn::Binder& bind,
                            const std::string& prefix = "decoder");

}  // namespace pigeon::tokenizer
