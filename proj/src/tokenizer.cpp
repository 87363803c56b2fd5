#include "pigeon/tokenizer.hpp"

#include "pigeon/errors.hpp"

namespace pigeon::tokenizer {

Codebook random_codebook(int k, int dim, std::uint64_t seed) {
    if (k < 2) throw config_error("codebook needs at least 2 entries");
    if (dim < 1) throw config_error("codebook dim must be positive");
    Rng rng(seed);
    Codebook cb;
    cb.entries.resize(k, dim);
    for (int i = 0; i < k; ++i) cb.entries.row(i) = rng.unit_vector(dim).transpose();
    validate(cb);
    return cb;
}

void validate(const Codebook& cb) {
    if (cb.size() < 2) throw config_error("codebook needs at least 2 entries");
    if (!cb.entries.allFinite()) throw config_error("codebook has non-finite entries");
    for (int i = 0; i < cb.size(); ++i) {
        for (int j = i + 1; j < cb.size(); ++j) {
            if ((cb.entries.row(i) - cb.entries.row(j)).norm() < 1e-9)
                throw config_error("duplicate codebook rows " + std::to_string(i) + "," +
                                   std::to_string(j));
        }
    }
}

TokenSequence tokenize(const Matrix& patches, const Codebook& cb) {
    if (patches.rows() < 1) throw shape_error("tokenize needs at least one patch");
    if (patches.cols() != cb.dim()) throw shape_error("patch dim does not match codebook");
    TokenSequence seq;
    seq.ids.reserve(patches.rows());
    for (Eigen::Index i = 0; i < patches.rows(); ++i) {
        int best = 0;
        double best_d = (patches.row(i) - cb.entries.row(0)).squaredNorm();
        for (int k = 1; k < cb.size(); ++k) {
            double d = (patches.row(i) - cb.entries.row(k)).squaredNorm();
            // strict < keeps the lowest index on exact ties
            if (d < best_d) {
                best = k;
                best_d = d;
            }
        }
        seq.ids.push_back(best);
    }
    seq.embeddings = embed(seq.ids, cb);
    return seq;
}

Matrix embed(const std::vector<int>& ids, const Codebook& cb) {
    Matrix out(static_cast<int>(ids.size()), cb.dim());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= cb.size())
            throw index_error("token id " + std::to_string(ids[i]) + " outside [0," +
                              std::to_string(cb.size()) + ")");
        out.row(static_cast<int>(i)) = cb.entries.row(ids[i]);
    }
    return out;
}

TokenSequence sequence_from_ids(const std::vector<int>& ids, const Codebook& cb) {
    TokenSequence seq;
    seq.ids = ids;
    seq.embeddings = embed(ids, cb);
    return seq;
}

DecoderParams identity_decoder(int dim, int hidden) {
    DecoderParams p;
    p.w1 = Matrix::Zero(dim, hidden);
    p.b1 = Matrix::Zero(1, hidden);
    p.w2 = Matrix::Zero(hidden, dim);
    p.b2 = Matrix::Zero(1, dim);
    return p;
}

DecoderParams random_decoder(int dim, int hidden, Rng& rng) {
    DecoderParams p;
    p.w1 = rng.gaussian(dim, hidden, 0.4);
    p.b1 = rng.gaussian(1, hidden, 0.1);
    p.w2 = rng.gaussian(hidden, dim, 0.2);
    p.b2 = Matrix::Zero(1, dim);
    return p;
}

VisualFeatures decode_tokens(const Matrix& embeddings, const DecoderParams& p) {
    if (embeddings.rows() < 1) throw shape_error("decode_tokens needs at least one row");
    if (embeddings.cols() != p.w1.rows()) throw shape_error("decoder input dim mismatch");
    Matrix h = (embeddings * p.w1).rowwise() + p.b1.row(0);
    Matrix g = h.unaryExpr([](double v) {
        double u = 0.7978845608028654 * (v + 0.044715 * v * v * v);
        return 0.5 * v * (1.0 + std::tanh(u));
    });
    VisualFeatures out;
    out.features = embeddings + ((g * p.w2).rowwise() + p.b2.row(0));
    return out;
}

nn::Var decode_tokens_graph(nn::Var embeddings, const DecoderParams& p, nn::Binder& bind,
                            const std::string& prefix) {
    if (embeddings.rows() < 1) throw shape_error("decode_tokens needs at least one row");
    nn::Var w1 = bind(prefix + ".w1", p.w1);
    nn::Var b1 = bind(prefix + ".b1", p.b1);
    nn::Var w2 = bind(prefix + ".w2", p.w2);
    nn::Var b2 = bind(prefix + ".b2", p.b2);
    nn::Var h = nn::gelu(nn::add_rowvec(nn::matmul(embeddings, w1), b1));
    return nn::add(embeddings, nn::add_rowvec(nn::matmul(h, w2), b2));
}

}  // namespace pigeon::tokenizer
