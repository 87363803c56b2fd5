#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pigeon/maskgen.hpp"
#include "pigeon/params.hpp"
#include "pigeon/rng.hpp"
#include "pigeon/synthworld.hpp"
#include "pigeon/tokenizer.hpp"

namespace pigeon::personalize {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct VocabConfig {
    int themes = 8;
    int emotions = 4;
    int size() const { return synthworld::caption_vocab_size(themes, emotions); }
};

struct TextTokens {
    std::vector<int> ids;  // word-vocabulary ids
};

// Deterministic attribute caption standing in for an image captioner.
TextTokens caption_tokens(const synthworld::ItemRecord& reference, const VocabConfig& vocab);

struct AdapterParams {
    Matrix w;  // d' x d_model
    Matrix b;  // 1 x d_model

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w", w);
        f(prefix + ".b", b);
    }
};

struct VisualSemantics {
    Vector pooled;   // d'
    Vector adapted;  // d_model
};

VisualSemantics visual_semantics(const Matrix& masked_ref_embs,
                                 const tokenizer::DecoderParams& decoder,
                                 const AdapterParams& adapter);
// 1 x d_model adapted row on the tape
nn::Var visual_semantics_graph(nn::Var masked_ref_embs, const tokenizer::DecoderParams& decoder,
                               const AdapterParams& adapter, nn::Binder& bind);

// Instruction-encoding ablations: drop the pooled visual slot, drop the
// caption tokens, or bypass encoding and feed masked reference tokens raw.
enum class PromptVariant { full, no_visual, no_text, raw_reference };
PromptVariant prompt_variant_from_name(const std::string& name);
std::string prompt_variant_name(PromptVariant v);

// Conditioning sequence for the language model. Token positions carry ids in
// the LMM vocabulary plus a keep gate; the pooled visual vector occupies one
// trailing soft slot when present.
struct HybridPrompt {
    std::vector<int> ids;
    Vector keep;  // parallel to ids
    bool has_visual_slot = false;
    int preamble_len = 0;
    std::vector<int> history_lens;
    int text_len = 0;
    int raw_reference_len = 0;

    int length() const { return static_cast<int>(ids.size()) + (has_visual_slot ? 1 : 0); }
};

struct LmmConfig {
    int visual_vocab = 64;  // K; also the generation head width
    int word_vocab = 14;
    int preamble_len = 4;
    int d_model = 64;
    int layers = 4;
    int heads = 4;
    int ffn_hidden = 256;
    int max_ctx = 160;
    int lora_rank = 4;
    double lora_alpha = 8.0;

    int vocab_size() const { return visual_vocab + word_vocab + preamble_len; }
    int word_base() const { return visual_vocab; }
    int preamble_base() const { return visual_vocab + word_vocab; }
    double lora_scale() const { return lora_alpha / lora_rank; }
};

struct LmmBlockParams {
    Matrix wq, wk, wv, wo;
    Matrix lora_qa, lora_qb, lora_va, lora_vb;  // B matrices start at zero
    Matrix ln1_g, ln1_b, ln2_g, ln2_b;
    Matrix w1, b1, w2, b2;

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".wq", wq);
        f(prefix + ".wk", wk);
        f(prefix + ".wv", wv);
        f(prefix + ".wo", wo);
        f(prefix + ".lora_qa", lora_qa);
        f(prefix + ".lora_qb", lora_qb);
        f(prefix + ".lora_va", lora_va);
        f(prefix + ".lora_vb", lora_vb);
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

// Decoder-only transformer over the shared visual+word vocabulary. The base
// weights stay frozen during alignment; LoRA deltas on the query/value
// projections are the only trainable pieces inside the blocks.
struct LmmParams {
    LmmConfig cfg;
    Matrix tok_emb;  // vocab_size x d_model
    Matrix pos_emb;  // max_ctx x d_model
    std::vector<LmmBlockParams> blocks;
    Matrix lnf_g, lnf_b;
    Matrix head;  // visual_vocab x d_model; logits = h * head^T

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".tok_emb", tok_emb);
        f(prefix + ".pos_emb", pos_emb);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].visit(prefix + ".block" + std::to_string(i), f);
        f(prefix + ".lnf_g", lnf_g);
        f(prefix + ".lnf_b", lnf_b);
        f(prefix + ".head", head);
    }
};

// Visual token embeddings are the codebook rows lifted through a fixed
// orthonormal map, and the output head is tied to them, so the frozen base
// starts out with a coherent next-token geometry the way a pretrained
// backbone would.
LmmParams init_lmm(const LmmConfig& cfg, const tokenizer::Codebook& codebook, Rng& rng);

// Everything the pipeline trains or serializes, in one place.
struct PigeonModel {
    tokenizer::Codebook codebook;
    tokenizer::DecoderParams decoder;
    maskgen::MaskGenParams mask_generator;
    AdapterParams adapter;
    LmmParams lmm;
    VocabConfig vocab;

    template <class F>
    void visit_params(F&& f) {
        f("codebook.entries", codebook.entries);
        decoder.visit("decoder", f);
        mask_generator.visit("maskgen", f);
        adapter.visit("adapter", f);
        lmm.visit("lmm", f);
    }
};

bool stage1_trainable(const std::string& name);  // maskgen + adapter + lora
bool stage2_trainable(const std::string& name);  // lora only

// --- prompt assembly ------------------------------------------------------

HybridPrompt build_prompt(const std::vector<std::vector<int>>& history_ids,
                          const std::vector<Vector>& history_keeps, const TextTokens& rt,
                          const LmmConfig& cfg, PromptVariant variant = PromptVariant::full,
                          const std::vector<int>* raw_ref_ids = nullptr,
                          const Vector* raw_ref_keep = nullptr);

struct MaskSettings {
    double alpha_h = 0.2;
    double alpha_r = 0.5;
    bool history_mask = true;
    bool reference_mask = true;
    maskgen::RefMaskScheme scheme = maskgen::RefMaskScheme::dual;
    bool training = false;          // picks the dual-phase side
    bool gumbel = false;            // stochastic relaxation on both masks
    bool gumbel_relax_forward = false;  // soft gates in the forward pass too
    double gumbel_temperature = 1.0;
    double score_temp = 0.1;
};

struct PromptGraph {
    nn::Var inputs;  // length x d_model rows ready for the LMM
    HybridPrompt meta;
};

// Runs the mask generator, builds both masks, encodes the instruction, and
// lays out the hybrid prompt rows. The heart of the conditioning pipeline.
PromptGraph assemble_prompt(nn::Tape& tape, const PigeonModel& model,
                            const synthworld::Sample& sample, const MaskSettings& masks,
                            PromptVariant variant, nn::Binder& bind, Rng* gumbel_rng);

// --- language model -------------------------------------------------------

// Logits rows for predicting target positions 0..len(prefix): row j gives the
// distribution of token j given the prompt and the first j prefix tokens.
nn::Var lmm_logits_graph(nn::Var prompt_inputs, const std::vector<int>& target_prefix,
                         const LmmParams& params, nn::Binder& bind,
                         const std::string& prefix = "lmm");

// Plain forward for the same computation; used by generation.
Matrix lmm_logits_plain(const Matrix& prompt_inputs, const std::vector<int>& target_prefix,
                        const LmmParams& params);

Matrix prompt_inputs_plain(const HybridPrompt& prompt, const Vector* adapted_visual,
                           const LmmParams& params);

Matrix forward_logits(const HybridPrompt& prompt, const Vector* adapted_visual,
                      const std::vector<int>& target_prefix, const LmmParams& params);

struct GenConfig {
    enum class Mode { greedy, top_k, temperature };
    Mode mode = Mode::greedy;
    int max_len = 16;
    int top_k = 5;
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

GenConfig::Mode gen_mode_from_name(const std::string& name);

tokenizer::TokenSequence generate_tokens(const HybridPrompt& prompt,
                                         const Vector* adapted_visual, const PigeonModel& model,
                                         const GenConfig& cfg);

tokenizer::TokenSequence generate_from_inputs(const Matrix& prompt_inputs,
                                              const PigeonModel& model, const GenConfig& cfg);

// Convenience: assemble (deterministic masks) + generate for one sample.
tokenizer::TokenSequence generate_for_sample(const PigeonModel& model,
                                             const synthworld::Sample& sample,
                                             const MaskSettings& masks, PromptVariant variant,
                                             const GenConfig& cfg);

}  // namespace pigeon::personalize
