#include "pigeon/align.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "pigeon/errors.hpp"

namespace pigeon::align {

using json = nlohmann::json;
using nn::Var;
using personalize::MaskSettings;

namespace {

MaskSettings training_masks(const TrainConfig& cfg, double alpha_r, bool gumbel) {
    MaskSettings m;
    m.alpha_h = cfg.alpha_h;
    m.alpha_r = alpha_r;
    m.history_mask = cfg.history_mask;
    m.reference_mask = cfg.reference_mask;
    m.scheme = cfg.scheme;
    m.training = true;
    m.gumbel = gumbel;
    m.gumbel_temperature = cfg.gumbel_temperature;
    return m;
}

Var sequence_nll(nn::Tape& tape, Var prompt_inputs, const std::vector<int>& target,
                 const personalize::LmmParams& params, nn::Binder& bind) {
    if (target.empty()) throw data_error("empty target sequence");
    std::vector<int> prefix(target.begin(), target.end() - 1);
    Var logits = personalize::lmm_logits_graph(prompt_inputs, prefix, params, bind);
    Var lsm = nn::log_softmax_rows(logits);
    Var picked = nn::pick_per_row(lsm, target);
    (void)tape;
    return nn::scale(nn::sum_all(picked), -1.0);
}

}  // namespace

Var sft_example_loss_graph(nn::Tape& tape, const PigeonModel& model, const Sample& sample,
                           double alpha_r, const TrainConfig& cfg, nn::Binder& bind,
                           Rng* gumbel_rng) {
    MaskSettings masks = training_masks(cfg, alpha_r, gumbel_rng != nullptr);
    personalize::PromptGraph pg =
        personalize::assemble_prompt(tape, model, sample, masks, cfg.variant, bind, gumbel_rng);
    return sequence_nll(tape, pg.inputs, sample.target.tokens.ids, model.lmm, bind);
}

Var sft_loss_with_masks(nn::Tape& tape, const PigeonModel& model, const Sample& sample,
                        const personalize::MaskSettings& masks,
                        personalize::PromptVariant variant, nn::Binder& bind, Rng* gumbel_rng) {
    personalize::PromptGraph pg =
        personalize::assemble_prompt(tape, model, sample, masks, variant, bind, gumbel_rng);
    return sequence_nll(tape, pg.inputs, sample.target.tokens.ids, model.lmm, bind);
}

double dpo_from_log_ratios(double beta, double chosen_log_ratio, double rejected_log_ratio) {
    if (beta <= 0.0) throw config_error("beta must be positive");
    double margin = beta * (chosen_log_ratio - rejected_log_ratio);
    // -log sigma(margin), stable on both sides
    return margin >= 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

double sft_loss(const PigeonModel& model, const std::vector<SFTExample>& batch,
                const TrainConfig& cfg) {
    if (batch.empty()) throw data_error("empty batch");
    double total = 0.0;
    for (const SFTExample& ex : batch) {
        nn::Tape tape;
        nn::Binder bind = nn::Binder::constants(tape);
        // const_cast-free: graph building only reads the model
        Var loss = sft_example_loss_graph(tape, model, ex.sample, ex.alpha_r, cfg, bind,
                                          nullptr);
        total += loss.scalar();
    }
    return total;
}

TrainResult train_stage1(const std::vector<Sample>& train_samples, PigeonModel& model,
                         const TrainConfig& cfg) {
    if (train_samples.empty()) throw data_error("no training samples");
    if (cfg.learning_rate < 0.0) throw config_error("negative learning rate");

    Rng rng(cfg.seed);
    nn::GradMap grads;
    std::map<std::string, Matrix> velocity;
    TrainResult result;
    result.loss_curve.reserve(cfg.steps);

    for (int step = 0; step < cfg.steps; ++step) {
        grads.clear();
        double batch_loss = 0.0;
        Rng gumbel_rng = rng.fork(0x51u * (step + 1));
        const int bsz = std::min<int>(cfg.batch_size, static_cast<int>(train_samples.size()));
        for (int b = 0; b < bsz; ++b) {
            const Sample& sample = train_samples[rng.uniform_int(train_samples.size())];
            double alpha_r = rng.uniform();
            nn::Tape tape;
            nn::Binder bind{&tape, &grads, personalize::stage1_trainable, nullptr};
            Var loss = sft_example_loss_graph(tape, model, sample, alpha_r, cfg, bind,
                                              &gumbel_rng);
            tape.backward(loss);
            batch_loss += loss.scalar();
        }
        if (!std::isfinite(batch_loss))
            throw training_error("loss diverged at step " + std::to_string(step));
        result.loss_curve.push_back(batch_loss);

        model.visit_params([&](const std::string& name, Matrix& value) {
            if (!personalize::stage1_trainable(name) || !grads.has(name)) return;
            Matrix& v = velocity[name];
            if (v.size() == 0) v = Matrix::Zero(value.rows(), value.cols());
            v = cfg.momentum * v + grads.g[name];
            value -= cfg.learning_rate * v;
        });

        if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps - 1))
            std::cout << "stage=1 step=" << step << " loss=" << batch_loss << "\n";
    }
    return result;
}

double preference_score(const tokenizer::TokenSequence& generated,
                        const std::vector<tokenizer::TokenSequence>& history,
                        const Embedder& embedder) {
    if (history.empty()) throw data_error("preference score needs history");
    Eigen::VectorXd g = embedder.embed_tokens(generated.ids);
    double gn = g.norm();
    if (gn < 1e-12) throw degenerate_vector_error("generated embedding has zero norm");
    double total = 0.0;
    for (const tokenizer::TokenSequence& h : history) {
        Eigen::VectorXd e = embedder.embed_tokens(h.ids);
        double en = e.norm();
        if (en < 1e-12) throw degenerate_vector_error("history embedding has zero norm");
        total += g.dot(e) / (gn * en);
    }
    return total / static_cast<double>(history.size());
}

PairBuildResult build_preference_pairs(const PigeonModel& model,
                                       const std::vector<Sample>& prompts,
                                       const PairBuildConfig& cfg, const Embedder& embedder,
                                       std::uint64_t seed) {
    if (cfg.grid.empty()) throw config_error("empty alpha_r grid");
    PairBuildResult out;
    Rng rng(seed);
    const int n_prompts = cfg.max_prompts > 0
                              ? std::min<int>(cfg.max_prompts, static_cast<int>(prompts.size()))
                              : static_cast<int>(prompts.size());
    for (int pi = 0; pi < n_prompts; ++pi) {
        const Sample& sample = prompts[pi];
        std::vector<tokenizer::TokenSequence> history_tokens;
        for (const synthworld::ItemRecord& h : sample.history)
            history_tokens.push_back(h.tokens);

        std::vector<std::pair<double, tokenizer::TokenSequence>> scored;
        for (std::size_t gi = 0; gi < cfg.grid.size(); ++gi) {
            MaskSettings masks;
            masks.alpha_h = cfg.alpha_h;
            masks.alpha_r = cfg.grid[gi];
            masks.training = false;
            personalize::GenConfig gen = cfg.gen;
            gen.seed = rng.fork(pi * 131 + gi).next_u64();
            tokenizer::TokenSequence seq = personalize::generate_for_sample(
                model, sample, masks, personalize::PromptVariant::full, gen);
            scored.emplace_back(preference_score(seq, history_tokens, embedder), seq);
        }

        bool all_same = true;
        for (std::size_t gi = 1; gi < scored.size(); ++gi)
            if (scored[gi].second.ids != scored[0].second.ids) {
                all_same = false;
                break;
            }
        if (all_same && scored.size() > 1) {
            out.skipped++;
            continue;
        }

        std::size_t best = 0, worst = 0;
        for (std::size_t gi = 1; gi < scored.size(); ++gi) {
            if (scored[gi].first > scored[best].first) best = gi;   // ties keep lower alpha
            if (scored[gi].first < scored[worst].first) worst = gi;
        }
        PreferencePair pair;
        pair.prompt_ref = pi;
        pair.alpha_chosen = cfg.grid[best];
        pair.alpha_rejected = cfg.grid[worst];
        pair.chosen = scored[best].second.ids;
        pair.rejected = scored[worst].second.ids;
        pair.chosen_score = scored[best].first;
        pair.rejected_score = scored[worst].first;
        out.pairs.push_back(std::move(pair));
    }
    if (out.skipped > 0)
        std::cout << "pairs: skipped " << out.skipped << " prompts with identical generations\n";
    return out;
}

std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs) {
    std::ostringstream out;
    for (const PreferencePair& p : pairs) {
        json j{{"prompt_ref", p.prompt_ref},
               {"alpha_chosen", p.alpha_chosen},
               {"alpha_rejected", p.alpha_rejected},
               {"chosen", p.chosen},
               {"rejected", p.rejected},
               {"chosen_score", p.chosen_score},
               {"rejected_score", p.rejected_score}};
        out << j.dump() << "\n";
    }
    return out.str();
}

std::vector<PreferencePair> pairs_from_jsonl(const std::string& text) {
    std::vector<PreferencePair> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        PreferencePair p;
        p.prompt_ref = j.at("prompt_ref");
        p.alpha_chosen = j.at("alpha_chosen");
        p.alpha_rejected = j.at("alpha_rejected");
        p.chosen = j.at("chosen").get<std::vector<int>>();
        p.rejected = j.at("rejected").get<std::vector<int>>();
        p.chosen_score = j.at("chosen_score");
        p.rejected_score = j.at("rejected_score");
        if (p.chosen_score < p.rejected_score)
            throw data_error("preference pair with chosen_score < rejected_score");
        out.push_back(std::move(p));
    }
    return out;
}

LoraState snapshot_lora(PigeonModel& model) {
    LoraState state;
    model.visit_params([&](const std::string& name, Matrix& value) {
        if (name.find(".lora_") != std::string::npos) state[name] = value;
    });
    return state;
}

Var dpo_pair_loss_graph(nn::Tape& tape, const PigeonModel& model, const LoraState& reference,
                        const Sample& prompt_sample, const PreferencePair& pair, double alpha_r,
                        const DPOConfig& cfg, nn::Binder& policy_bind) {
    if (cfg.beta <= 0.0) throw config_error("beta must be positive");

    TrainConfig prompt_cfg;
    prompt_cfg.alpha_h = cfg.alpha_h;
    MaskSettings masks = training_masks(prompt_cfg, alpha_r, /*gumbel=*/false);
    personalize::PromptGraph pg = personalize::assemble_prompt(
        tape, model, prompt_sample, masks, personalize::PromptVariant::full, policy_bind,
        nullptr);

    nn::Binder ref_bind{&tape, nullptr, nullptr, &reference};

    Var lp_chosen = nn::scale(sequence_nll(tape, pg.inputs, pair.chosen, model.lmm, policy_bind),
                              -1.0);
    Var lp_rejected = nn::scale(
        sequence_nll(tape, pg.inputs, pair.rejected, model.lmm, policy_bind), -1.0);
    Var lr_chosen =
        nn::scale(sequence_nll(tape, pg.inputs, pair.chosen, model.lmm, ref_bind), -1.0);
    Var lr_rejected =
        nn::scale(sequence_nll(tape, pg.inputs, pair.rejected, model.lmm, ref_bind), -1.0);

    Var margin = nn::scale(
        nn::sub(nn::sub(lp_chosen, lr_chosen), nn::sub(lp_rejected, lr_rejected)), cfg.beta);
    return nn::scale(nn::log_sigmoid(margin), -1.0);
}

double dpo_loss(const PigeonModel& model, const LoraState& reference, const Sample& prompt_sample,
                const PreferencePair& pair, double alpha_r, const DPOConfig& cfg) {
    nn::Tape tape;
    nn::Binder bind = nn::Binder::constants(tape);
    return dpo_pair_loss_graph(tape, model, reference, prompt_sample, pair, alpha_r, cfg, bind)
        .scalar();
}

TrainResult train_stage2(const std::vector<PreferencePair>& pairs,
                         const std::vector<Sample>& prompt_samples, PigeonModel& model,
                         const LoraState& reference, const DPOConfig& cfg) {
    if (cfg.beta <= 0.0) throw config_error("beta must be positive");
    if (pairs.empty()) throw data_error("no preference pairs");
    for (const PreferencePair& p : pairs)
        if (p.prompt_ref < 0 || p.prompt_ref >= static_cast<int>(prompt_samples.size()))
            throw data_error("preference pair references a missing prompt");

    Rng rng(cfg.seed);
    nn::GradMap grads;
    std::map<std::string, Matrix> velocity;
    TrainResult result;
    result.loss_curve.reserve(cfg.steps);

    for (int step = 0; step < cfg.steps; ++step) {
        grads.clear();
        double batch_loss = 0.0;
        const int bsz = std::min<int>(cfg.batch_size, static_cast<int>(pairs.size()));
        for (int b = 0; b < bsz; ++b) {
            const PreferencePair& pair = pairs[rng.uniform_int(pairs.size())];
            double alpha_r = rng.uniform();
            nn::Tape tape;
            nn::Binder bind{&tape, &grads, personalize::stage2_trainable, nullptr};
            Var loss = dpo_pair_loss_graph(tape, model, reference,
                                           prompt_samples[pair.prompt_ref], pair, alpha_r, cfg,
                                           bind);
            tape.backward(loss);
            batch_loss += loss.scalar();
        }
        if (!std::isfinite(batch_loss))
            throw training_error("loss diverged at step " + std::to_string(step));
        result.loss_curve.push_back(batch_loss);

        model.visit_params([&](const std::string& name, Matrix& value) {
            if (!personalize::stage2_trainable(name) || !grads.has(name)) return;
            Matrix& v = velocity[name];
            if (v.size() == 0) v = Matrix::Zero(value.rows(), value.cols());
            v = cfg.momentum * v + grads.g[name];
            value -= cfg.learning_rate * v;
        });

        if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps - 1))
            std::cout << "stage=2 step=" << step << " loss=" << batch_loss << "\n";
    }
    return result;
}

}  // namespace pigeon::align
