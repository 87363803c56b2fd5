#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pigeon/embedder.hpp"
#include "pigeon/personalize.hpp"

namespace pigeon::align {

using Matrix = Eigen::MatrixXd;
using personalize::PigeonModel;
using synthworld::Sample;

struct SFTExample {
    Sample sample;
    double alpha_r = 0.0;
};

struct TrainConfig {
    double learning_rate = 1e-5;
    int steps = 200;
    int batch_size = 16;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    double alpha_h = 0.2;
    double gumbel_temperature = 1.0;
    bool history_mask = true;
    bool reference_mask = true;
    maskgen::RefMaskScheme scheme = maskgen::RefMaskScheme::dual;
    personalize::PromptVariant variant = personalize::PromptVariant::full;
    int log_every = 50;
};

// Teacher-forced negative log-likelihood of one example's target sequence.
nn::Var sft_example_loss_graph(nn::Tape& tape, const PigeonModel& model, const Sample& sample,
                               double alpha_r, const TrainConfig& cfg, nn::Binder& bind,
                               Rng* gumbel_rng);

// Same loss under explicit mask settings; lets tests drive the relaxed
// forward used by the finite-difference oracles.
nn::Var sft_loss_with_masks(nn::Tape& tape, const PigeonModel& model, const Sample& sample,
                            const personalize::MaskSettings& masks,
                            personalize::PromptVariant variant, nn::Binder& bind,
                            Rng* gumbel_rng);

// Closed form of the pairwise objective given sequence log-ratios.
double dpo_from_log_ratios(double beta, double chosen_log_ratio, double rejected_log_ratio);

// Summed loss over a batch (plain evaluation, deterministic masks).
double sft_loss(const PigeonModel& model, const std::vector<SFTExample>& batch,
                const TrainConfig& cfg);

struct TrainResult {
    std::vector<double> loss_curve;  // per-step batch loss
};

// Stage 1: summed-NLL descent on {mask generator, adapter, LoRA}; the base
// model stays frozen.
TrainResult train_stage1(const std::vector<Sample>& train_samples, PigeonModel& model,
                         const TrainConfig& cfg);

// Mean embedding similarity between a generated sequence and the history.
double preference_score(const tokenizer::TokenSequence& generated,
                        const std::vector<tokenizer::TokenSequence>& history,
                        const Embedder& embedder);

struct PreferencePair {
    int prompt_ref = -1;  // index into the prompt sample list
    double alpha_chosen = 0.0;
    double alpha_rejected = 0.0;
    std::vector<int> chosen;
    std::vector<int> rejected;
    double chosen_score = 0.0;
    double rejected_score = 0.0;
};

struct PairBuildResult {
    std::vector<PreferencePair> pairs;
    int skipped = 0;  // prompts whose generations were all identical
};

struct PairBuildConfig {
    std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    double alpha_h = 0.2;
    personalize::GenConfig gen;
    int max_prompts = 0;  // 0 = use all
};

PairBuildResult build_preference_pairs(const PigeonModel& model,
                                       const std::vector<Sample>& prompts,
                                       const PairBuildConfig& cfg, const Embedder& embedder,
                                       std::uint64_t seed);

std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> pairs_from_jsonl(const std::string& text);

using LoraState = std::map<std::string, Matrix>;
LoraState snapshot_lora(PigeonModel& model);

struct DPOConfig {
    double beta = 0.1;
    double learning_rate = 5e-6;
    int steps = 100;
    int batch_size = 4;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    double alpha_h = 0.2;
    int log_every = 20;
};

// -log sigma(beta * (chosen log-ratio - rejected log-ratio)) for one pair.
// The reference policy is the frozen stage-1 LoRA snapshot; the prompt is
// rebuilt at the given alpha_r and shared by both policies.
nn::Var dpo_pair_loss_graph(nn::Tape& tape, const PigeonModel& model,
                            const LoraState& reference, const Sample& prompt_sample,
                            const PreferencePair& pair, double alpha_r, const DPOConfig& cfg,
                            nn::Binder& policy_bind);

double dpo_loss(const PigeonModel& model, const LoraState& reference, const Sample& prompt_sample,
                const PreferencePair& pair, double alpha_r, const DPOConfig& cfg);

// Stage 2: DPO descent on the LoRA weights only.
TrainResult train_stage2(const std::vector<PreferencePair>& pairs,
                         const std::vector<Sample>& prompt_samples, PigeonModel& model,
                         const LoraState& reference, const DPOConfig& cfg);

}  // namespace pigeon::align
