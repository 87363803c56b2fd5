#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "pigeon/params.hpp"
#include "pigeon/rng.hpp"
#include "pigeon/tape.hpp"

namespace pigeon::maskgen {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MaskGenConfig {
    int dim = 16;         // token embedding width; encoder keeps this width
    int layers = 2;
    int heads = 4;
    int ffn_hidden = 64;
    int max_len = 256;    // capacity over the concatenated token stream
};

struct EncoderLayerParams {
    Matrix wq, wk, wv, wo;
    Matrix ln1_g, ln1_b, ln2_g, ln2_b;
    Matrix w1, b1, w2, b2;

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".wq", wq);
        f(prefix + ".wk", wk);
        f(prefix + ".wv", wv);
        f(prefix + ".wo", wo);
        f(prefix + ".ln1_g", ln1_g);
        f(prefix + ".ln1_b", ln1_b);
        f(prefix + ".ln2_g", ln2_g);
        f(prefix + ".ln2_b", ln2_b);
        f(prefix + ".w1", w1);
        f(prefix + ".b1", b1);
        f(prefix + ".w2", w2);
        f(prefix + ".b2", b2);
    }
};

// Bidirectional transformer encoder that scores history tokens against the
// reference. Position embeddings restart inside each image; type embeddings
// separate history from reference tokens.
struct MaskGenParams {
    MaskGenConfig cfg;
    Matrix pos_emb;   // max_len x dim
    Matrix type_emb;  // 2 x dim (0 = history, 1 = reference)
    std::vector<EncoderLayerParams> layers;

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".pos_emb", pos_emb);
        f(prefix + ".type_emb", type_emb);
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i].visit(prefix + ".layer" + std::to_string(i), f);
    }
};

MaskGenParams init_maskgen(const MaskGenConfig& cfg, Rng& rng);

// Hidden states for the concatenated [history..., reference] stream, same
// shape as the input. Returned as one Var; callers slice per sequence.
nn::Var encode_graph(const std::vector<nn::Var>& history_embs, nn::Var ref_embs,
                     const MaskGenParams& params, nn::Binder& bind,
                     const std::string& prefix = "maskgen");

std::vector<Matrix> encode(const std::vector<Matrix>& history_embs, const Matrix& ref_embs,
                           const MaskGenParams& params);

nn::Var importance_scores_graph(nn::Var hidden, nn::Var embs);  // L x 1 of cosines
Vector importance_scores(const Matrix& hidden, const Matrix& embs);

enum class MaskPhase { train, inference };
enum class MaskRole { history, reference };

// Reference masking schemes; `dual` is the phase-dependent default, the other
// two pin one phase for both training and inference.
enum class RefMaskScheme { dual, low_score, high_score };
MaskPhase effective_ref_phase(RefMaskScheme scheme, bool training);

struct BinaryMask {
    Vector values;  // {0,1}^L, 1 = keep
    double ratio = 0.0;
    MaskPhase phase = MaskPhase::inference;
    MaskRole role = MaskRole::history;
    Vector relaxed;             // soft keep gates; populated by the Gumbel path
    bool has_relaxed = false;

    int zeros() const { return static_cast<int>((1.0 - values.array()).sum() + 0.5); }
};

// Deterministic masks. History masks drop the lowest-score tokens; reference
// masks drop the highest during training and the lowest at inference. Ties
// mask the earlier position first.
BinaryMask make_history_mask(const Vector& scores, double alpha_h);
BinaryMask make_reference_mask(const Vector& scores, double alpha_r, MaskPhase phase);

Matrix apply_mask(const Matrix& embs, const BinaryMask& mask);

struct GumbelConfig {
    double temperature = 1.0;  // relaxation softness
    double score_temp = 0.1;   // keep logit = score / score_temp
};

// Stochastic relaxation: forward is exactly binary with the deterministic
// cardinality; backward flows through per-token sigmoid gates.
BinaryMask st_gumbel_mask(const Vector& scores, double ratio, MaskPhase phase, MaskRole role,
                          const GumbelConfig& cfg, std::uint64_t seed);

// Tape variant used during training. When `relax_forward` is set the soft
// gates are emitted directly (the finite-difference tests run in that mode).
nn::Var st_gumbel_mask_graph(nn::Var scores, double ratio, MaskPhase phase, MaskRole role,
                             const GumbelConfig& cfg, Rng& rng, bool relax_forward = false);

// Constant gates from the deterministic mask; used at inference.
nn::Var deterministic_mask_graph(nn::Tape& tape, const Vector& scores, double ratio,
                                 MaskPhase phase, MaskRole role);

}  // namespace pigeon::maskgen
