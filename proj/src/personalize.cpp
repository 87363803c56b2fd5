#include "pigeon/personalize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pigeon/errors.hpp"

namespace pigeon::personalize {

using nn::Var;

TextTokens caption_tokens(const synthworld::ItemRecord& reference, const VocabConfig& vocab) {
    if (reference.attributes.size() < 2)
        throw data_error("reference item carries no attributes");
    return TextTokens{synthworld::caption_ids(reference.attributes[0], reference.attributes[1],
                                              vocab.themes, vocab.emotions)};
}

VisualSemantics visual_semantics(const Matrix& masked_ref_embs,
                                 const tokenizer::DecoderParams& decoder,
                                 const AdapterParams& adapter) {
    if (masked_ref_embs.rows() < 1) throw shape_error("visual semantics needs tokens");
    tokenizer::VisualFeatures feats = tokenizer::decode_tokens(masked_ref_embs, decoder);
    VisualSemantics out;
    out.pooled = feats.features.colwise().mean().transpose();
    out.adapted = (out.pooled.transpose() * adapter.w + adapter.b.row(0)).transpose();
    return out;
}

Var visual_semantics_graph(Var masked_ref_embs, const tokenizer::DecoderParams& decoder,
                           const AdapterParams& adapter, nn::Binder& bind) {
    Var feats = tokenizer::decode_tokens_graph(masked_ref_embs, decoder, bind);
    Var pooled = nn::mean_rows(feats);  // 1 x d'
    Var w = bind("adapter.w", adapter.w);
    Var b = bind("adapter.b", adapter.b);
    return nn::add(nn::matmul(pooled, w), b);  // 1 x d_model
}

PromptVariant prompt_variant_from_name(const std::string& name) {
    if (name == "full") return PromptVariant::full;
    if (name == "no-visual") return PromptVariant::no_visual;
    if (name == "no-text") return PromptVariant::no_text;
    if (name == "raw-reference") return PromptVariant::raw_reference;
    throw config_error("unknown prompt variant '" + name + "'");
}

std::string prompt_variant_name(PromptVariant v) {
    switch (v) {
        case PromptVariant::full: return "full";
        case PromptVariant::no_visual: return "no-visual";
        case PromptVariant::no_text: return "no-text";
        case PromptVariant::raw_reference: return "raw-reference";
    }
    return "full";
}

HybridPrompt build_prompt(const std::vector<std::vector<int>>& history_ids,
                          const std::vector<Vector>& history_keeps, const TextTokens& rt,
                          const LmmConfig& cfg, PromptVariant variant,
                          const std::vector<int>* raw_ref_ids, const Vector* raw_ref_keep) {
    if (history_ids.empty()) throw data_error("prompt needs at least one history image");
    if (history_keeps.size() != history_ids.size())
        throw shape_error("history keep gates do not match history images");

    HybridPrompt p;
    p.preamble_len = cfg.preamble_len;
    for (int i = 0; i < cfg.preamble_len; ++i) p.ids.push_back(cfg.preamble_base() + i);

    for (std::size_t h = 0; h < history_ids.size(); ++h) {
        if (static_cast<int>(history_ids[h].size()) != history_keeps[h].size())
            throw shape_error("keep gate length mismatch in history " + std::to_string(h));
        p.history_lens.push_back(static_cast<int>(history_ids[h].size()));
        for (int id : history_ids[h]) {
            if (id < 0 || id >= cfg.visual_vocab) throw index_error("history token out of range");
            p.ids.push_back(id);
        }
    }

    if (variant == PromptVariant::raw_reference) {
        if (!raw_ref_ids || !raw_ref_keep)
            throw data_error("raw-reference prompt needs reference tokens");
        p.raw_reference_len = static_cast<int>(raw_ref_ids->size());
        for (int id : *raw_ref_ids) {
            if (id < 0 || id >= cfg.visual_vocab)
                throw index_error("reference token out of range");
            p.ids.push_back(id);
        }
    } else {
        if (variant != PromptVariant::no_text) {
            for (int id : rt.ids) {
                if (id < 0 || id >= cfg.word_vocab)
                    throw vocabulary_error("caption id " + std::to_string(id) +
                                           " outside word vocabulary");
                p.ids.push_back(cfg.word_base() + id);
            }
            p.text_len = static_cast<int>(rt.ids.size());
        }
        p.has_visual_slot = (variant != PromptVariant::no_visual);
    }

    // keep gates: preamble and caption stay on; history (and raw reference)
    // gates come from the masks
    p.keep = Vector::Ones(static_cast<int>(p.ids.size()));
    int offset = cfg.preamble_len;
    for (std::size_t h = 0; h < history_keeps.size(); ++h) {
        p.keep.segment(offset, history_keeps[h].size()) = history_keeps[h];
        offset += static_cast<int>(history_keeps[h].size());
    }
    if (variant == PromptVariant::raw_reference && p.raw_reference_len > 0)
        p.keep.segment(offset, p.raw_reference_len) = *raw_ref_keep;
    return p;
}

LmmParams init_lmm(const LmmConfig& cfg, const tokenizer::Codebook& codebook, Rng& rng) {
    if (cfg.visual_vocab != codebook.size())
        throw config_error("visual vocabulary must match codebook size");
    if (cfg.d_model % cfg.heads != 0) throw config_error("d_model must divide into heads");
    if (cfg.d_model < codebook.dim())
        throw config_error("d_model must be at least the codebook dim");

    LmmParams p;
    p.cfg = cfg;

    // orthonormal lift of the codebook into model space; head tied to it
    Matrix g = rng.gaussian(cfg.d_model, codebook.dim(), 1.0);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix lift = qr.householderQ() * Matrix::Identity(cfg.d_model, codebook.dim());

    p.tok_emb.resize(cfg.vocab_size(), cfg.d_model);
    for (int t = 0; t < cfg.visual_vocab; ++t)
        p.tok_emb.row(t) = (lift * codebook.entries.row(t).transpose()).transpose();
    for (int w = cfg.visual_vocab; w < cfg.vocab_size(); ++w)
        p.tok_emb.row(w) = rng.unit_vector(cfg.d_model).transpose();

    p.pos_emb = rng.gaussian(cfg.max_ctx, cfg.d_model, 0.05);

    const double w_scale = 0.4 / std::sqrt(static_cast<double>(cfg.d_model));
    for (int l = 0; l < cfg.layers; ++l) {
        LmmBlockParams blk;
        blk.wq = rng.gaussian(cfg.d_model, cfg.d_model, w_scale);
        blk.wk = rng.gaussian(cfg.d_model, cfg.d_model, w_scale);
        blk.wv = rng.gaussian(cfg.d_model, cfg.d_model, w_scale);
        blk.wo = rng.gaussian(cfg.d_model, cfg.d_model, w_scale);
        blk.lora_qa = rng.gaussian(cfg.d_model, cfg.lora_rank, 0.1);
        blk.lora_qb = Matrix::Zero(cfg.lora_rank, cfg.d_model);
        blk.lora_va = rng.gaussian(cfg.d_model, cfg.lora_rank, 0.1);
        blk.lora_vb = Matrix::Zero(cfg.lora_rank, cfg.d_model);
        blk.ln1_g = Matrix::Ones(1, cfg.d_model);
        blk.ln1_b = Matrix::Zero(1, cfg.d_model);
        blk.ln2_g = Matrix::Ones(1, cfg.d_model);
        blk.ln2_b = Matrix::Zero(1, cfg.d_model);
        blk.w1 = rng.gaussian(cfg.d_model, cfg.ffn_hidden, w_scale);
        blk.b1 = Matrix::Zero(1, cfg.ffn_hidden);
        blk.w2 = rng.gaussian(cfg.ffn_hidden, cfg.d_model,
                              0.4 / std::sqrt(static_cast<double>(cfg.ffn_hidden)));
        blk.b2 = Matrix::Zero(1, cfg.d_model);
        p.blocks.push_back(std::move(blk));
    }
    p.lnf_g = Matrix::Ones(1, cfg.d_model);
    p.lnf_b = Matrix::Zero(1, cfg.d_model);
    p.head = p.tok_emb.topRows(cfg.visual_vocab);
    return p;
}

bool stage1_trainable(const std::string& name) {
    if (name.rfind("maskgen.", 0) == 0) return true;
    if (name.rfind("adapter.", 0) == 0) return true;
    return name.find(".lora_") != std::string::npos;
}

bool stage2_trainable(const std::string& name) {
    return name.find(".lora_") != std::string::npos;
}

// --- prompt assembly ------------------------------------------------------

PromptGraph assemble_prompt(nn::Tape& tape, const PigeonModel& model,
                            const synthworld::Sample& sample, const MaskSettings& masks,
                            PromptVariant variant, nn::Binder& bind, Rng* gumbel_rng) {
    if (sample.history.empty()) throw data_error("sample has no history");
    if (!sample.has_reference) throw data_error("sample has no reference attached");
    if (masks.gumbel && !gumbel_rng) throw config_error("gumbel masks need an rng");

    const LmmConfig& cfg = model.lmm.cfg;

    // codebook-space embeddings feed the mask generator and the decoder path
    std::vector<Var> hist_embs;
    hist_embs.reserve(sample.history.size());
    for (const synthworld::ItemRecord& item : sample.history)
        hist_embs.push_back(tape.constant(item.tokens.embeddings));
    Var ref_embs = tape.constant(sample.reference.tokens.embeddings);

    Var hidden = maskgen::encode_graph(hist_embs, ref_embs, model.mask_generator, bind);

    int hist_total = 0;
    for (const Var& h : hist_embs) hist_total += h.rows();
    Var hist_hidden = nn::slice_rows(hidden, 0, hist_total);
    Var ref_hidden = nn::slice_rows(hidden, hist_total, ref_embs.rows());

    Var hist_scores = maskgen::importance_scores_graph(hist_hidden, nn::concat_rows(hist_embs));
    Var ref_scores = maskgen::importance_scores_graph(ref_hidden, ref_embs);

    maskgen::GumbelConfig gcfg{masks.gumbel_temperature, masks.score_temp};

    Var hist_gates =
        !masks.history_mask
            ? tape.constant(Matrix::Ones(hist_total, 1))
        : masks.gumbel
            ? maskgen::st_gumbel_mask_graph(hist_scores, masks.alpha_h, maskgen::MaskPhase::train,
                                            maskgen::MaskRole::history, gcfg, *gumbel_rng,
                                            masks.gumbel_relax_forward)
            : maskgen::deterministic_mask_graph(tape, hist_scores.value().col(0), masks.alpha_h,
                                                maskgen::MaskPhase::train,
                                                maskgen::MaskRole::history);

    maskgen::MaskPhase ref_phase = maskgen::effective_ref_phase(masks.scheme, masks.training);
    Var ref_gates =
        !masks.reference_mask
            ? tape.constant(Matrix::Ones(ref_embs.rows(), 1))
        : masks.gumbel
            ? maskgen::st_gumbel_mask_graph(ref_scores, masks.alpha_r, ref_phase,
                                            maskgen::MaskRole::reference, gcfg, *gumbel_rng,
                                            masks.gumbel_relax_forward)
            : maskgen::deterministic_mask_graph(tape, ref_scores.value().col(0), masks.alpha_r,
                                                ref_phase, maskgen::MaskRole::reference);

    // prompt skeleton with the deterministic keep snapshot
    std::vector<std::vector<int>> history_ids;
    std::vector<Vector> history_keeps;
    int offset = 0;
    for (const synthworld::ItemRecord& item : sample.history) {
        history_ids.push_back(item.tokens.ids);
        history_keeps.push_back(
            hist_gates.value().col(0).segment(offset, item.tokens.length()));
        offset += item.tokens.length();
    }
    TextTokens rt;
    if (variant == PromptVariant::full || variant == PromptVariant::no_visual) {
        rt.ids = sample.text_instruction;
        if (rt.ids.empty()) rt = caption_tokens(sample.reference, model.vocab);
    }
    Vector raw_keep = ref_gates.value().col(0);
    HybridPrompt meta =
        build_prompt(history_ids, history_keeps, rt, cfg, variant,
                     &sample.reference.tokens.ids, &raw_keep);

    // token rows: LMM embeddings scaled by their keep gates
    Var tok_emb = bind("lmm.tok_emb", model.lmm.tok_emb);
    Var id_rows = nn::gather_rows(tok_emb, meta.ids);

    std::vector<Var> gate_parts;
    gate_parts.push_back(tape.constant(Matrix::Ones(meta.preamble_len, 1)));
    gate_parts.push_back(hist_gates);
    if (variant == PromptVariant::raw_reference) {
        gate_parts.push_back(ref_gates);
    } else if (meta.text_len > 0) {
        gate_parts.push_back(tape.constant(Matrix::Ones(meta.text_len, 1)));
    }
    Var gates = nn::concat_rows(gate_parts);
    Var gated_rows = nn::row_scale(id_rows, gates);

    std::vector<Var> input_parts{gated_rows};
    if (meta.has_visual_slot) {
        Var masked_ref = nn::row_scale(ref_embs, ref_gates);
        input_parts.push_back(
            visual_semantics_graph(masked_ref, model.decoder, model.adapter, bind));
    }

    PromptGraph out{nn::concat_rows(input_parts), std::move(meta)};
    return out;
}

// --- language model -------------------------------------------------------

namespace {

Var lmm_affine_ln(Var x, Var gain, Var bias) {
    return nn::add_rowvec(nn::mul_rowvec(nn::layer_norm_rows(x), gain), bias);
}

Matrix causal_bias(int n) {
    Matrix b = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) b(i, j) = -1e30;
    return b;
}

Var lmm_block_graph(Var x, const LmmBlockParams& blk, const LmmConfig& cfg, nn::Binder& bind,
                    const std::string& prefix, const Matrix& causal) {
    Var wq = bind(prefix + ".wq", blk.wq);
    Var wk = bind(prefix + ".wk", blk.wk);
    Var wv = bind(prefix + ".wv", blk.wv);
    Var wo = bind(prefix + ".wo", blk.wo);
    Var qa = bind(prefix + ".lora_qa", blk.lora_qa);
    Var qb = bind(prefix + ".lora_qb", blk.lora_qb);
    Var va = bind(prefix + ".lora_va", blk.lora_va);
    Var vb = bind(prefix + ".lora_vb", blk.lora_vb);
    Var ln1_g = bind(prefix + ".ln1_g", blk.ln1_g);
    Var ln1_b = bind(prefix + ".ln1_b", blk.ln1_b);
    Var ln2_g = bind(prefix + ".ln2_g", blk.ln2_g);
    Var ln2_b = bind(prefix + ".ln2_b", blk.ln2_b);
    Var w1 = bind(prefix + ".w1", blk.w1);
    Var b1 = bind(prefix + ".b1", blk.b1);
    Var w2 = bind(prefix + ".w2", blk.w2);
    Var b2 = bind(prefix + ".b2", blk.b2);

    const double lora_scale = cfg.lora_scale();
    Var h = lmm_affine_ln(x, ln1_g, ln1_b);
    Var q = nn::add(nn::matmul(h, wq),
                    nn::scale(nn::matmul(nn::matmul(h, qa), qb), lora_scale));
    Var k = nn::matmul(h, wk);
    Var v = nn::add(nn::matmul(h, wv),
                    nn::scale(nn::matmul(nn::matmul(h, va), vb), lora_scale));

    const int dh = cfg.d_model / cfg.heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    heads.reserve(cfg.heads);
    for (int hd = 0; hd < cfg.heads; ++hd) {
        Var qh = nn::slice_cols(q, hd * dh, dh);
        Var kh = nn::slice_cols(k, hd * dh, dh);
        Var vh = nn::slice_cols(v, hd * dh, dh);
        Var s = nn::add_const(nn::scale(nn::matmul(qh, nn::transpose(kh)), att_scale), causal);
        heads.push_back(nn::matmul(nn::softmax_rows(s), vh));
    }
    x = nn::add(x, nn::matmul(nn::concat_cols(heads), wo));

    Var h2 = lmm_affine_ln(x, ln2_g, ln2_b);
    Var ffn = nn::add_rowvec(
        nn::matmul(nn::gelu(nn::add_rowvec(nn::matmul(h2, w1), b1)), w2), b2);
    return nn::add(x, ffn);
}

}  // namespace

Var lmm_logits_graph(Var prompt_inputs, const std::vector<int>& target_prefix,
                     const LmmParams& params, nn::Binder& bind, const std::string& prefix) {
    const LmmConfig& cfg = params.cfg;
    const int p_len = prompt_inputs.rows();
    const int total = p_len + static_cast<int>(target_prefix.size());
    if (total > cfg.max_ctx)
        throw capacity_error("context of " + std::to_string(total) + " exceeds max_ctx " +
                             std::to_string(cfg.max_ctx));
    for (int id : target_prefix)
        if (id < 0 || id >= cfg.visual_vocab) throw data_error("target token outside vocabulary");

    nn::Tape& tape = *prompt_inputs.tape;
    Var tok_emb = bind(prefix + ".tok_emb", params.tok_emb);
    Var pos_emb = bind(prefix + ".pos_emb", params.pos_emb);

    Var x = prompt_inputs;
    if (!target_prefix.empty()) {
        Var pref_rows = nn::gather_rows(tok_emb, target_prefix);
        x = nn::concat_rows({x, pref_rows});
    }
    std::vector<int> pos_ids(total);
    std::iota(pos_ids.begin(), pos_ids.end(), 0);
    x = nn::add(x, nn::gather_rows(pos_emb, pos_ids));

    const Matrix causal = causal_bias(total);
    for (std::size_t l = 0; l < params.blocks.size(); ++l)
        x = lmm_block_graph(x, params.blocks[l], cfg, bind,
                            prefix + ".block" + std::to_string(l), causal);

    Var lnf_g = bind(prefix + ".lnf_g", params.lnf_g);
    Var lnf_b = bind(prefix + ".lnf_b", params.lnf_b);
    x = lmm_affine_ln(x, lnf_g, lnf_b);

    // rows predicting target positions 0..len(prefix)
    Var pred = nn::slice_rows(x, p_len - 1, static_cast<int>(target_prefix.size()) + 1);
    Var head = bind(prefix + ".head", params.head);
    (void)tape;
    return nn::matmul(pred, nn::transpose(head));
}

Matrix lmm_logits_plain(const Matrix& prompt_inputs, const std::vector<int>& target_prefix,
                        const LmmParams& params) {
    nn::Tape tape;
    nn::Binder bind = nn::Binder::constants(tape);
    Var inputs = tape.constant(prompt_inputs);
    return lmm_logits_graph(inputs, target_prefix, params, bind).value();
}

Matrix prompt_inputs_plain(const HybridPrompt& prompt, const Vector* adapted_visual,
                           const LmmParams& params) {
    const LmmConfig& cfg = params.cfg;
    const int n_ids = static_cast<int>(prompt.ids.size());
    Matrix rows(prompt.length(), cfg.d_model);
    for (int i = 0; i < n_ids; ++i) {
        if (prompt.ids[i] < 0 || prompt.ids[i] >= cfg.vocab_size())
            throw index_error("prompt id outside vocabulary");
        rows.row(i) = prompt.keep(i) * params.tok_emb.row(prompt.ids[i]);
    }
    if (prompt.has_visual_slot) {
        if (!adapted_visual) throw data_error("prompt has a visual slot but no vector given");
        if (adapted_visual->size() != cfg.d_model)
            throw shape_error("adapted visual vector width mismatch");
        rows.row(n_ids) = adapted_visual->transpose();
    }
    return rows;
}

Matrix forward_logits(const HybridPrompt& prompt, const Vector* adapted_visual,
                      const std::vector<int>& target_prefix, const LmmParams& params) {
    return lmm_logits_plain(prompt_inputs_plain(prompt, adapted_visual, params), target_prefix,
                            params);
}

GenConfig::Mode gen_mode_from_name(const std::string& name) {
    if (name == "greedy") return GenConfig::Mode::greedy;
    if (name == "top-k") return GenConfig::Mode::top_k;
    if (name == "temperature") return GenConfig::Mode::temperature;
    throw config_error("unknown generation mode '" + name + "'");
}

namespace {

int argmax_lowest(const Eigen::RowVectorXd& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = i;
    return best;
}

int sample_from_logits(const Eigen::RowVectorXd& logits, double temperature, Rng& rng) {
    Eigen::RowVectorXd z = logits / temperature;
    double mx = z.maxCoeff();
    Eigen::RowVectorXd p = (z.array() - mx).exp();
    p /= p.sum();
    double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) return i;
    }
    return static_cast<int>(p.size()) - 1;
}

}  // namespace

tokenizer::TokenSequence generate_from_inputs(const Matrix& prompt_inputs,
                                              const PigeonModel& model, const GenConfig& cfg) {
    if (cfg.max_len < 1) throw config_error("max_len must be >= 1");
    Rng rng(cfg.seed);
    std::vector<int> out_ids;
    out_ids.reserve(cfg.max_len);
    for (int step = 0; step < cfg.max_len; ++step) {
        Matrix logits = lmm_logits_plain(prompt_inputs, out_ids, model.lmm);
        Eigen::RowVectorXd last = logits.row(logits.rows() - 1);
        int pick;
        switch (cfg.mode) {
            case GenConfig::Mode::greedy:
                pick = argmax_lowest(last);
                break;
            case GenConfig::Mode::temperature:
                pick = cfg.temperature < 1e-9 ? argmax_lowest(last)
                                              : sample_from_logits(last, cfg.temperature, rng);
                break;
            case GenConfig::Mode::top_k: {
                std::vector<int> idx(last.size());
                std::iota(idx.begin(), idx.end(), 0);
                std::stable_sort(idx.begin(), idx.end(),
                                 [&](int a, int b) { return last(a) > last(b); });
                int k = std::min<int>(cfg.top_k, static_cast<int>(idx.size()));
                Eigen::RowVectorXd restricted(k);
                for (int i = 0; i < k; ++i) restricted(i) = last(idx[i]);
                double temp = cfg.temperature < 1e-9 ? 1.0 : cfg.temperature;
                pick = idx[sample_from_logits(restricted, temp, rng)];
                break;
            }
            default:
                throw config_error("unknown generation mode");
        }
        out_ids.push_back(pick);
    }
    return tokenizer::sequence_from_ids(out_ids, model.codebook);
}

tokenizer::TokenSequence generate_tokens(const HybridPrompt& prompt,
                                         const Vector* adapted_visual, const PigeonModel& model,
                                         const GenConfig& cfg) {
    return generate_from_inputs(prompt_inputs_plain(prompt, adapted_visual, model.lmm), model,
                                cfg);
}

tokenizer::TokenSequence generate_for_sample(const PigeonModel& model,
                                             const synthworld::Sample& sample,
                                             const MaskSettings& masks, PromptVariant variant,
                                             const GenConfig& cfg) {
    nn::Tape tape;
    nn::Binder bind = nn::Binder::constants(tape);
    MaskSettings inference = masks;
    inference.training = false;
    inference.gumbel = false;
    PromptGraph pg = assemble_prompt(tape, model, sample, inference, variant, bind, nullptr);
    return generate_from_inputs(pg.inputs.value(), model, cfg);
}

}  // namespace pigeon::personalize
