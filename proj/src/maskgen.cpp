#include "pigeon/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pigeon/errors.hpp"

namespace pigeon::maskgen {

using nn::Var;

MaskGenParams init_maskgen(const MaskGenConfig& cfg, Rng& rng) {
    if (cfg.dim < 1 || cfg.heads < 1 || cfg.layers < 0)
        throw config_error("invalid mask generator dimensions");
    if (cfg.dim % cfg.heads != 0) throw config_error("dim must divide evenly into heads");
    MaskGenParams p;
    p.cfg = cfg;
    p.pos_emb = rng.gaussian(cfg.max_len, cfg.dim, 0.05);
    p.type_emb = rng.gaussian(2, cfg.dim, 0.05);
    const double w_scale = 0.4 / std::sqrt(static_cast<double>(cfg.dim));
    for (int l = 0; l < cfg.layers; ++l) {
        EncoderLayerParams layer;
        layer.wq = rng.gaussian(cfg.dim, cfg.dim, w_scale);
        layer.wk = rng.gaussian(cfg.dim, cfg.dim, w_scale);
        // identity value/output paths: attention adds the attended context in
        // the embedding basis, so cosine(z, e) reads as context relevance
        // before any training
        layer.wv = 0.6 * Matrix::Identity(cfg.dim, cfg.dim);
        layer.wo = 0.6 * Matrix::Identity(cfg.dim, cfg.dim);
        layer.ln1_g = Matrix::Ones(1, cfg.dim);
        layer.ln1_b = Matrix::Zero(1, cfg.dim);
        layer.ln2_g = Matrix::Ones(1, cfg.dim);
        layer.ln2_b = Matrix::Zero(1, cfg.dim);
        layer.w1 = rng.gaussian(cfg.dim, cfg.ffn_hidden, w_scale);
        layer.b1 = Matrix::Zero(1, cfg.ffn_hidden);
        // skip-init: the feed-forward branch starts as a no-op
        layer.w2 = Matrix::Zero(cfg.ffn_hidden, cfg.dim);
        layer.b2 = Matrix::Zero(1, cfg.dim);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

namespace {

Var affine_layer_norm(Var x, Var gain, Var bias) {
    Var normed = nn::layer_norm_rows(x);
    return nn::add_rowvec(nn::mul_rowvec(normed, gain), bias);
}

Var self_attention(Var x, Var wq, Var wk, Var wv, Var wo, int heads,
                   const Matrix* causal_bias) {
    const int d = x.cols();
    const int dh = d / heads;
    Var q = nn::matmul(x, wq);
    Var k = nn::matmul(x, wk);
    Var v = nn::matmul(x, wv);
    std::vector<Var> head_outputs;
    head_outputs.reserve(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
        Var qh = nn::slice_cols(q, h * dh, dh);
        Var kh = nn::slice_cols(k, h * dh, dh);
        Var vh = nn::slice_cols(v, h * dh, dh);
        Var s = nn::scale(nn::matmul(qh, nn::transpose(kh)), scale);
        if (causal_bias) s = nn::add_const(s, *causal_bias);
        Var a = nn::softmax_rows(s);
        head_outputs.push_back(nn::matmul(a, vh));
    }
    return nn::matmul(nn::concat_cols(head_outputs), wo);
}

Var encoder_block(Var x, const EncoderLayerParams& lp, nn::Binder& bind,
                  const std::string& prefix, int heads) {
    Var wq = bind(prefix + ".wq", lp.wq);
    Var wk = bind(prefix + ".wk", lp.wk);
    Var wv = bind(prefix + ".wv", lp.wv);
    Var wo = bind(prefix + ".wo", lp.wo);
    Var ln1_g = bind(prefix + ".ln1_g", lp.ln1_g);
    Var ln1_b = bind(prefix + ".ln1_b", lp.ln1_b);
    Var ln2_g = bind(prefix + ".ln2_g", lp.ln2_g);
    Var ln2_b = bind(prefix + ".ln2_b", lp.ln2_b);
    Var w1 = bind(prefix + ".w1", lp.w1);
    Var b1 = bind(prefix + ".b1", lp.b1);
    Var w2 = bind(prefix + ".w2", lp.w2);
    Var b2 = bind(prefix + ".b2", lp.b2);

    Var h = affine_layer_norm(x, ln1_g, ln1_b);
    x = nn::add(x, self_attention(h, wq, wk, wv, wo, heads, nullptr));
    Var h2 = affine_layer_norm(x, ln2_g, ln2_b);
    Var ffn = nn::add_rowvec(
        nn::matmul(nn::gelu(nn::add_rowvec(nn::matmul(h2, w1), b1)), w2), b2);
    return nn::add(x, ffn);
}

}  // namespace

Var encode_graph(const std::vector<Var>& history_embs, Var ref_embs,
                 const MaskGenParams& params, nn::Binder& bind, const std::string& prefix) {
    if (history_embs.empty()) throw data_error("encoder needs at least one history image");
    const int d = params.cfg.dim;
    int total = ref_embs.rows();
    for (const Var& h : history_embs) {
        if (h.cols() != d) throw shape_error("history embedding width mismatch");
        total += h.rows();
    }
    if (ref_embs.cols() != d) throw shape_error("reference embedding width mismatch");
    if (total > params.cfg.max_len)
        throw capacity_error("token stream of " + std::to_string(total) +
                             " exceeds encoder capacity " + std::to_string(params.cfg.max_len));

    Var pos = bind(prefix + ".pos_emb", params.pos_emb);
    Var type = bind(prefix + ".type_emb", params.type_emb);

    // per-image positions, type 0 for history and 1 for the reference
    std::vector<int> pos_ids, type_ids;
    pos_ids.reserve(total);
    type_ids.reserve(total);
    for (const Var& h : history_embs) {
        for (int j = 0; j < h.rows(); ++j) {
            pos_ids.push_back(j);
            type_ids.push_back(0);
        }
    }
    for (int j = 0; j < ref_embs.rows(); ++j) {
        pos_ids.push_back(j);
        type_ids.push_back(1);
    }

    std::vector<Var> parts = history_embs;
    parts.push_back(ref_embs);
    Var x = nn::concat_rows(parts);
    x = nn::add(x, nn::gather_rows(pos, pos_ids));
    x = nn::add(x, nn::gather_rows(type, type_ids));

    for (std::size_t l = 0; l < params.layers.size(); ++l)
        x = encoder_block(x, params.layers[l], bind, prefix + ".layer" + std::to_string(l),
                          params.cfg.heads);
    return x;
}

std::vector<Matrix> encode(const std::vector<Matrix>& history_embs, const Matrix& ref_embs,
                           const MaskGenParams& params) {
    nn::Tape tape;
    nn::Binder bind = nn::Binder::constants(tape);
    std::vector<Var> hist_vars;
    hist_vars.reserve(history_embs.size());
    for (const Matrix& h : history_embs) hist_vars.push_back(tape.constant(h));
    Var out = encode_graph(hist_vars, tape.constant(ref_embs), params, bind);

    std::vector<Matrix> result;
    int offset = 0;
    for (const Matrix& h : history_embs) {
        result.push_back(out.value().middleRows(offset, h.rows()));
        offset += static_cast<int>(h.rows());
    }
    result.push_back(out.value().middleRows(offset, ref_embs.rows()));
    return result;
}

Var importance_scores_graph(Var hidden, Var embs) {
    return nn::cosine_rows(hidden, embs);
}

Vector importance_scores(const Matrix& hidden, const Matrix& embs) {
    if (hidden.rows() != embs.rows() || hidden.cols() != embs.cols())
        throw shape_error("importance score shape mismatch");
    Vector out(hidden.rows());
    for (Eigen::Index i = 0; i < hidden.rows(); ++i) {
        double nh = hidden.row(i).norm();
        double ne = embs.row(i).norm();
        if (nh < 1e-12 || ne < 1e-12)
            throw degenerate_vector_error("zero-norm row at token " + std::to_string(i));
        out(i) = hidden.row(i).dot(embs.row(i)) / (nh * ne);
    }
    return out;
}

MaskPhase effective_ref_phase(RefMaskScheme scheme, bool training) {
    switch (scheme) {
        case RefMaskScheme::dual: return training ? MaskPhase::train : MaskPhase::inference;
        case RefMaskScheme::low_score: return MaskPhase::inference;  // mask low both phases
        case RefMaskScheme::high_score: return MaskPhase::train;     // mask high both phases
    }
    throw config_error("unknown reference mask scheme");
}

namespace {

int mask_zero_count(double ratio, int length) {
    if (ratio < 0.0 || ratio > 1.0) throw config_error("mask ratio outside [0,1]");
    int z = static_cast<int>(std::llround(ratio * length));
    return std::clamp(z, 0, length);
}

// order tokens by maskability: first entries get masked first
std::vector<int> mask_order(const Vector& scores, bool mask_low_first) {
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (scores(a) != scores(b)) return mask_low_first ? scores(a) < scores(b)
                                                          : scores(a) > scores(b);
        return a < b;  // ties: earlier position masked first
    });
    return idx;
}

BinaryMask deterministic_mask(const Vector& scores, double ratio, MaskPhase phase,
                              MaskRole role) {
    const int n = static_cast<int>(scores.size());
    const int z = mask_zero_count(ratio, n);
    const bool mask_low = (role == MaskRole::history) || (phase == MaskPhase::inference);
    std::vector<int> order = mask_order(scores, mask_low);
    BinaryMask m;
    m.values = Vector::Ones(n);
    for (int i = 0; i < z; ++i) m.values(order[i]) = 0.0;
    m.ratio = ratio;
    m.phase = phase;
    m.role = role;
    return m;
}

}  // namespace

BinaryMask make_history_mask(const Vector& scores, double alpha_h) {
    return deterministic_mask(scores, alpha_h, MaskPhase::train, MaskRole::history);
}

BinaryMask make_reference_mask(const Vector& scores, double alpha_r, MaskPhase phase) {
    return deterministic_mask(scores, alpha_r, phase, MaskRole::reference);
}

Matrix apply_mask(const Matrix& embs, const BinaryMask& mask) {
    if (embs.rows() != mask.values.size())
        throw shape_error("mask length does not match embedding rows");
    return mask.values.asDiagonal() * embs;
}

namespace {

// Keys order the tokens by keep priority: scores push kept tokens up, Gumbel
// noise perturbs the ranking, and the hard mask keeps the top (L - zeros).
struct GumbelKeys {
    Vector noise;
    double direction;  // +1 keeps high scores, -1 keeps low scores
};

GumbelKeys gumbel_keys(int n, MaskPhase phase, MaskRole role, Rng& rng) {
    GumbelKeys k;
    k.noise = Vector(n);
    for (int i = 0; i < n; ++i) k.noise(i) = rng.gumbel();
    const bool keep_high = (role == MaskRole::history) || (phase == MaskPhase::inference);
    k.direction = keep_high ? 1.0 : -1.0;
    return k;
}

}  // namespace

Var st_gumbel_mask_graph(Var scores, double ratio, MaskPhase phase, MaskRole role,
                         const GumbelConfig& cfg, Rng& rng, bool relax_forward) {
    if (cfg.temperature <= 0.0) throw config_error("gumbel temperature must be positive");
    if (cfg.score_temp <= 0.0) throw config_error("score temperature must be positive");
    nn::Tape& tape = *scores.tape;
    const int n = scores.rows();
    if (scores.cols() != 1) throw shape_error("scores must be a column vector");
    const int z = mask_zero_count(ratio, n);

    if (z == 0) return tape.constant(Matrix::Ones(n, 1));
    if (z == n) return tape.constant(Matrix::Zero(n, 1));

    GumbelKeys gk = gumbel_keys(n, phase, role, rng);
    Var keys = nn::add_const(nn::scale(scores, gk.direction / cfg.score_temp),
                             Matrix(gk.noise));

    // threshold = midpoint between the k-th and (k+1)-th largest keys, on-tape
    // so its score dependence is differentiated as well
    const int keep = n - z;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return keys.value()(a, 0) > keys.value()(b, 0);
    });
    Var kth = nn::entry(keys, order[keep - 1], 0);
    Var kth1 = nn::entry(keys, order[keep], 0);
    Var threshold = nn::scale(nn::add(kth, kth1), 0.5);

    Var ones = tape.constant(Matrix::Ones(n, 1));
    Var centered = nn::sub(keys, nn::matmul(ones, threshold));
    Var soft = nn::sigmoid(nn::scale(centered, 1.0 / cfg.temperature));
    if (relax_forward) return soft;

    Matrix hard = Matrix::Zero(n, 1);
    for (int i = 0; i < keep; ++i) hard(order[i], 0) = 1.0;
    return nn::straight_through(hard, soft);
}

BinaryMask st_gumbel_mask(const Vector& scores, double ratio, MaskPhase phase, MaskRole role,
                          const GumbelConfig& cfg, std::uint64_t seed) {
    nn::Tape tape;
    Rng rng(seed);
    Var scores_var = tape.constant(scores);
    Var soft = st_gumbel_mask_graph(scores_var, ratio, phase, role, cfg, rng,
                                    /*relax_forward=*/true);
    Rng rng2(seed);  // same noise for the hard pass
    Var hard = st_gumbel_mask_graph(scores_var, ratio, phase, role, cfg, rng2,
                                    /*relax_forward=*/false);
    BinaryMask m;
    m.values = hard.value().col(0);
    m.relaxed = soft.value().col(0);
    m.has_relaxed = true;
    m.ratio = ratio;
    m.phase = phase;
    m.role = role;
    return m;
}

Var deterministic_mask_graph(nn::Tape& tape, const Vector& scores, double ratio,
                             MaskPhase phase, MaskRole role) {
    BinaryMask m = deterministic_mask(scores, ratio, phase, role);
    return tape.constant(Matrix(m.values));
}

}  // namespace pigeon::maskgen
